/**
 * AdamW with global-norm gradient clipping. Weight decay is decoupled and
 * applied only to parameters flagged `decay` (the 2-d weight matrices).
 */

import { Model } from "./model.js";

export interface OptimConfig {
  lr: number;
  beta1: number;
  beta2: number;
  eps: number;
  weightDecay: number;
  gradClip: number;
}

export const DEFAULT_OPTIM: OptimConfig = {
  lr: 1e-3,
  beta1: 0.9,
  beta2: 0.999,
  eps: 1e-8,
  weightDecay: 1e-4,
  gradClip: 1.0,
};

export class AdamW {
  private m: Float64Array[];
  private v: Float64Array[];
  private t = 0;

  constructor(private model: Model, private config: OptimConfig = DEFAULT_OPTIM) {
    this.m = model.params.map((p) => new Float64Array(p.w.length));
    this.v = model.params.map((p) => new Float64Array(p.w.length));
  }

  /** Returns the pre-clip global gradient norm. */
  step(): number {
    const { lr, beta1, beta2, eps, weightDecay, gradClip } = this.config;
    this.t++;
    let sq = 0;
    for (const p of this.model.params) {
      for (let i = 0; i < p.g.length; i++) sq += p.g[i] * p.g[i];
    }
    const norm = Math.sqrt(sq);
    const scale = gradClip > 0 && norm > gradClip ? gradClip / norm : 1;
    const bc1 = 1 - Math.pow(beta1, this.t);
    const bc2 = 1 - Math.pow(beta2, this.t);
    for (let pi = 0; pi < this.model.params.length; pi++) {
      const p = this.model.params[pi];
      const m = this.m[pi];
      const v = this.v[pi];
      const wd = p.decay ? weightDecay : 0;
      for (let i = 0; i < p.w.length; i++) {
        const g = p.g[i] * scale;
        m[i] = beta1 * m[i] + (1 - beta1) * g;
        v[i] = beta2 * v[i] + (1 - beta2) * g * g;
        const mHat = m[i] / bc1;
        const vHat = v[i] / bc2;
        p.w[i] -= lr * (mHat / (Math.sqrt(vHat) + eps) + wd * p.w[i]);
      }
    }
    return norm;
  }
}
