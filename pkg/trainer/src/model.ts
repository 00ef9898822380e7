/**
 * Two-block decoder-only transformer with learned token + position
 * embeddings, pre-norm blocks (LayerNorm, causal multi-head attention, GELU
 * MLP), and a weight-tied language-model head.
 *
 * Forward and backward are written out by hand over Float64Array buffers;
 * the head is fused with the cross-entropy loss so the [tokens, vocab]
 * logit matrix never materializes during training.
 */

import {
  addBias, biasGrad, headBackwardRow, headLogits, mm, mmAT, mmBT, softmaxRow, zeros,
} from "./tensor.js";
import { Rng } from "./rng.js";

export interface ModelConfig {
  vocabSize: number;
  blockSize: number;
  nLayer: number;
  nHead: number;
  nEmbd: number;
}

export const DEFAULT_CONFIG: Omit<ModelConfig, "vocabSize"> = {
  blockSize: 96,
  nLayer: 2,
  nHead: 2,
  nEmbd: 128,
};

export interface Param {
  name: string;
  w: Float64Array;
  g: Float64Array;
  /** weight matrices get weight decay; gains/biases/embeddings do not */
  decay: boolean;
}

interface Block {
  ln1g: Param; ln1b: Param;
  attnW: Param; attnB: Param; // [C, 3C]
  projW: Param; projB: Param; // [C, C]
  ln2g: Param; ln2b: Param;
  fcW: Param; fcB: Param;     // [C, 4C]
  fc2W: Param; fc2B: Param;   // [4C, C]
}

const GELU_K = Math.sqrt(2 / Math.PI);

function gelu(x: number): number {
  return 0.5 * x * (1 + Math.tanh(GELU_K * (x + 0.044715 * x * x * x)));
}

function geluGrad(x: number): number {
  const u = GELU_K * (x + 0.044715 * x * x * x);
  const t = Math.tanh(u);
  const sech2 = 1 - t * t;
  return 0.5 * (1 + t) + 0.5 * x * sech2 * GELU_K * (1 + 3 * 0.044715 * x * x);
}

export class Model {
  readonly config: ModelConfig;
  readonly params: Param[] = [];
  wte!: Param; // [V, C], tied with the head
  wpe!: Param; // [blockSize, C]
  blocks: Block[] = [];
  lnfG!: Param;
  lnfB!: Param;
  private wsCache = new Map<string, Workspace>();

  /** Cached workspace per (B, T); decoding reuses these across steps. */
  workspace(B: number, T: number): Workspace {
    const key = `${B}x${T}`;
    let ws = this.wsCache.get(key);
    if (!ws) {
      ws = makeWorkspace(this, B, T);
      if (this.wsCache.size > 128) this.wsCache.clear();
      this.wsCache.set(key, ws);
    }
    return ws;
  }

  constructor(config: ModelConfig, rng: Rng) {
    this.config = config;
    const { vocabSize: V, blockSize: T, nLayer, nEmbd: C } = config;
    if (C % config.nHead !== 0) throw new Error("nEmbd must divide by nHead");

    const param = (name: string, size: number, std: number, decay: boolean, ones = false) => {
      const w = new Float64Array(size);
      if (ones) w.fill(1);
      else if (std > 0) for (let i = 0; i < size; i++) w[i] = rng.gauss(0, std);
      const p: Param = { name, w, g: new Float64Array(size), decay };
      this.params.push(p);
      return p;
    };

    const projStd = 0.02 / Math.sqrt(2 * nLayer); // residual-branch scaling
    this.wte = param("wte", V * C, 0.02, false);
    this.wpe = param("wpe", T * C, 0.02, false);
    for (let l = 0; l < nLayer; l++) {
      this.blocks.push({
        ln1g: param(`b${l}.ln1g`, C, 0, false, true),
        ln1b: param(`b${l}.ln1b`, C, 0, false),
        attnW: param(`b${l}.attnW`, C * 3 * C, 0.02, true),
        attnB: param(`b${l}.attnB`, 3 * C, 0, false),
        projW: param(`b${l}.projW`, C * C, projStd, true),
        projB: param(`b${l}.projB`, C, 0, false),
        ln2g: param(`b${l}.ln2g`, C, 0, false, true),
        ln2b: param(`b${l}.ln2b`, C, 0, false),
        fcW: param(`b${l}.fcW`, C * 4 * C, 0.02, true),
        fcB: param(`b${l}.fcB`, 4 * C, 0, false),
        fc2W: param(`b${l}.fc2W`, 4 * C * C, projStd, true),
        fc2B: param(`b${l}.fc2B`, C, 0, false),
      });
    }
    this.lnfG = param("lnf.g", C, 0, false, true);
    this.lnfB = param("lnf.b", C, 0, false);
  }

  get nParams(): number {
    return this.params.reduce((n, p) => n + p.w.length, 0);
  }

  zeroGrad(): void {
    for (const p of this.params) p.g.fill(0);
  }
}

// ---------------------------------------------------------------------------
// Activation workspace (reused across steps of the same shape)
// ---------------------------------------------------------------------------

interface LayerActs {
  ln1: Float64Array; ln1Mean: Float64Array; ln1Rstd: Float64Array;
  qkv: Float64Array;
  att: Float64Array; // [B, H, T, T] softmax probabilities
  attOut: Float64Array; // concatenated heads, pre-projection
  x1: Float64Array; // residual after attention
  ln2: Float64Array; ln2Mean: Float64Array; ln2Rstd: Float64Array;
  fcPre: Float64Array; // pre-GELU
  fcAct: Float64Array;
  x2: Float64Array; // residual after MLP
}

export interface Workspace {
  B: number;
  T: number;
  x0: Float64Array;
  layers: LayerActs[];
  lnf: Float64Array; lnfMean: Float64Array; lnfRstd: Float64Array;
  // backward scratch
  dx: Float64Array; dTmp: Float64Array; dQkv: Float64Array;
  dAtt: Float64Array; dAttOut: Float64Array; dFcPre: Float64Array; dFcAct: Float64Array;
  row: Float64Array; // one vocab row for the fused head
}

export function makeWorkspace(model: Model, B: number, T: number): Workspace {
  const { nEmbd: C, nHead: H, nLayer, vocabSize: V } = model.config;
  const rows = B * T;
  const layer = (): LayerActs => ({
    ln1: zeros(rows * C), ln1Mean: zeros(rows), ln1Rstd: zeros(rows),
    qkv: zeros(rows * 3 * C),
    att: zeros(B * H * T * T),
    attOut: zeros(rows * C),
    x1: zeros(rows * C),
    ln2: zeros(rows * C), ln2Mean: zeros(rows), ln2Rstd: zeros(rows),
    fcPre: zeros(rows * 4 * C), fcAct: zeros(rows * 4 * C),
    x2: zeros(rows * C),
  });
  return {
    B, T,
    x0: zeros(rows * C),
    layers: Array.from({ length: nLayer }, layer),
    lnf: zeros(rows * C), lnfMean: zeros(rows), lnfRstd: zeros(rows),
    dx: zeros(rows * C), dTmp: zeros(rows * C), dQkv: zeros(rows * 3 * C),
    dAtt: zeros(B * H * T * T), dAttOut: zeros(rows * C),
    dFcPre: zeros(rows * 4 * C), dFcAct: zeros(rows * 4 * C),
    row: zeros(V),
  };
}

function layerNormForward(
  x: Float64Array, g: Float64Array, b: Float64Array,
  out: Float64Array, means: Float64Array, rstds: Float64Array,
  rows: number, C: number,
): void {
  for (let i = 0; i < rows; i++) {
    const xi = i * C;
    let mean = 0;
    for (let j = 0; j < C; j++) mean += x[xi + j];
    mean /= C;
    let varsum = 0;
    for (let j = 0; j < C; j++) {
      const d = x[xi + j] - mean;
      varsum += d * d;
    }
    const rstd = 1 / Math.sqrt(varsum / C + 1e-5);
    means[i] = mean;
    rstds[i] = rstd;
    for (let j = 0; j < C; j++) out[xi + j] = (x[xi + j] - mean) * rstd * g[j] + b[j];
  }
}

function layerNormBackward(
  dOut: Float64Array, x: Float64Array, g: Float64Array,
  means: Float64Array, rstds: Float64Array,
  dX: Float64Array, dG: Float64Array, dB: Float64Array,
  rows: number, C: number,
): void {
  for (let i = 0; i < rows; i++) {
    const xi = i * C;
    const mean = means[i];
    const rstd = rstds[i];
    let sumDy = 0;
    let sumDyXhat = 0;
    for (let j = 0; j < C; j++) {
      const xhat = (x[xi + j] - mean) * rstd;
      const dy = dOut[xi + j] * g[j];
      sumDy += dy;
      sumDyXhat += dy * xhat;
      dG[j] += dOut[xi + j] * xhat;
      dB[j] += dOut[xi + j];
    }
    for (let j = 0; j < C; j++) {
      const xhat = (x[xi + j] - mean) * rstd;
      const dy = dOut[xi + j] * g[j];
      dX[xi + j] += (dy - sumDy / C - xhat * (sumDyXhat / C)) * rstd;
    }
  }
}

/** Causal multi-head attention over qkv [rows, 3C]; att buffer stores probs. */
function attentionForward(
  qkv: Float64Array, att: Float64Array, out: Float64Array,
  B: number, T: number, C: number, H: number,
): void {
  const hs = C / H;
  const scale = 1 / Math.sqrt(hs);
  out.fill(0);
  for (let b = 0; b < B; b++) {
    for (let h = 0; h < H; h++) {
      const attBase = (b * H + h) * T * T;
      for (let t = 0; t < T; t++) {
        const qOff = (b * T + t) * 3 * C + h * hs;
        const rowOff = attBase + t * T;
        for (let s = 0; s <= t; s++) {
          const kOff = (b * T + s) * 3 * C + C + h * hs;
          let dot = 0;
          for (let j = 0; j < hs; j++) dot += qkv[qOff + j] * qkv[kOff + j];
          att[rowOff + s] = dot * scale;
        }
        softmaxRow(att, rowOff, t + 1);
        for (let s = t + 1; s < T; s++) att[rowOff + s] = 0;
        const oOff = (b * T + t) * C + h * hs;
        for (let s = 0; s <= t; s++) {
          const a = att[rowOff + s];
          const vOff = (b * T + s) * 3 * C + 2 * C + h * hs;
          for (let j = 0; j < hs; j++) out[oOff + j] += a * qkv[vOff + j];
        }
      }
    }
  }
}

function attentionBackward(
  dOut: Float64Array, qkv: Float64Array, att: Float64Array,
  dQkv: Float64Array, dAtt: Float64Array,
  B: number, T: number, C: number, H: number,
): void {
  const hs = C / H;
  const scale = 1 / Math.sqrt(hs);
  for (let b = 0; b < B; b++) {
    for (let h = 0; h < H; h++) {
      const attBase = (b * H + h) * T * T;
      for (let t = 0; t < T; t++) {
        const rowOff = attBase + t * T;
        const oOff = (b * T + t) * C + h * hs;
        // d att and d v
        for (let s = 0; s <= t; s++) {
          const vOff = (b * T + s) * 3 * C + 2 * C + h * hs;
          let da = 0;
          const a = att[rowOff + s];
          for (let j = 0; j < hs; j++) {
            da += dOut[oOff + j] * qkv[vOff + j];
            dQkv[vOff + j] += a * dOut[oOff + j];
          }
          dAtt[rowOff + s] = da;
        }
        // softmax backward within the causal row
        let dot = 0;
        for (let s = 0; s <= t; s++) dot += att[rowOff + s] * dAtt[rowOff + s];
        const qOff = (b * T + t) * 3 * C + h * hs;
        for (let s = 0; s <= t; s++) {
          const dScore = att[rowOff + s] * (dAtt[rowOff + s] - dot) * scale;
          const kOff = (b * T + s) * 3 * C + C + h * hs;
          for (let j = 0; j < hs; j++) {
            dQkv[qOff + j] += dScore * qkv[kOff + j];
            dQkv[kOff + j] += dScore * qkv[qOff + j];
          }
        }
      }
    }
  }
}

/** Forward up to the final layer norm; returns ws.lnf as [rows, C]. */
export function forwardHidden(
  model: Model, ws: Workspace, tokens: Int32Array,
): Float64Array {
  const { nEmbd: C, nHead: H } = model.config;
  const { B, T } = ws;
  const rows = B * T;
  for (let i = 0; i < rows; i++) {
    const t = i % T;
    const tokOff = tokens[i] * C;
    const posOff = t * C;
    const xi = i * C;
    for (let j = 0; j < C; j++) ws.x0[xi + j] = model.wte.w[tokOff + j] + model.wpe.w[posOff + j];
  }
  let x = ws.x0;
  for (let l = 0; l < model.config.nLayer; l++) {
    const blk = model.blocks[l];
    const acts = ws.layers[l];
    layerNormForward(x, blk.ln1g.w, blk.ln1b.w, acts.ln1, acts.ln1Mean, acts.ln1Rstd, rows, C);
    acts.qkv.fill(0);
    mm(acts.ln1, blk.attnW.w, acts.qkv, rows, C, 3 * C);
    addBias(acts.qkv, blk.attnB.w, rows, 3 * C);
    attentionForward(acts.qkv, acts.att, acts.attOut, B, T, C, H);
    acts.x1.set(x);
    mm(acts.attOut, blk.projW.w, acts.x1, rows, C, C);
    addBias(acts.x1, blk.projB.w, rows, C);
    layerNormForward(acts.x1, blk.ln2g.w, blk.ln2b.w, acts.ln2, acts.ln2Mean, acts.ln2Rstd, rows, C);
    acts.fcPre.fill(0);
    mm(acts.ln2, blk.fcW.w, acts.fcPre, rows, C, 4 * C);
    addBias(acts.fcPre, blk.fcB.w, rows, 4 * C);
    for (let i = 0; i < rows * 4 * C; i++) acts.fcAct[i] = gelu(acts.fcPre[i]);
    acts.x2.set(acts.x1);
    mm(acts.fcAct, blk.fc2W.w, acts.x2, rows, 4 * C, C);
    addBias(acts.x2, blk.fc2B.w, rows, C);
    x = acts.x2;
  }
  layerNormForward(x, model.lnfG.w, model.lnfB.w, ws.lnf, ws.lnfMean, ws.lnfRstd, rows, C);
  return ws.lnf;
}

export interface StepStats {
  /** mean cross entropy over loss-masked positions (the training objective) */
  lossTarget: number;
  /** mean cross entropy over every next-token position, prompt included */
  lossTotal: number;
  /** per-task sums and counts of masked-position loss, keyed by task id */
  taskLoss: Map<number, { sum: number; count: number }>;
}

/**
 * Fused head + cross-entropy forward/backward.
 *
 * targets[i] < 0 marks a position with no next token (padding/stream end);
 * mask[i] = 1 marks positions that contribute gradient (target tokens).
 * taskIds[i] labels the example a position belongs to for per-task logging.
 */
export function loss_and_backward(
  model: Model, ws: Workspace, tokens: Int32Array,
  targets: Int32Array, mask: Uint8Array, taskIds: Int8Array,
): StepStats {
  const { nEmbd: C, vocabSize: V } = model.config;
  const { B, T } = ws;
  const rows = B * T;
  forwardHidden(model, ws, tokens);

  let nMasked = 0;
  for (let i = 0; i < rows; i++) if (targets[i] >= 0 && mask[i]) nMasked++;
  const stats: StepStats = {
    lossTarget: 0,
    lossTotal: 0,
    taskLoss: new Map(),
  };
  let nTotal = 0;
  const dLnf = ws.dx;
  dLnf.fill(0);
  const row = ws.row;
  const wte = model.wte.w;
  const dWte = model.wte.g;
  const invMasked = nMasked > 0 ? 1 / nMasked : 0;

  for (let i = 0; i < rows; i++) {
    const target = targets[i];
    if (target < 0) continue;
    const hOff = i * C;
    headLogits(ws.lnf, hOff, wte, row, V, C);
    softmaxRow(row, 0, V);
    const nll = -Math.log(Math.max(row[target], 1e-300));
    stats.lossTotal += nll;
    nTotal++;
    if (!mask[i]) continue;
    stats.lossTarget += nll;
    const entry = stats.taskLoss.get(taskIds[i]) ?? { sum: 0, count: 0 };
    entry.sum += nll;
    entry.count++;
    stats.taskLoss.set(taskIds[i], entry);
    // dlogits = probs - onehot, scaled by 1/nMasked
    for (let v = 0; v < V; v++) row[v] *= invMasked;
    row[target] -= invMasked;
    headBackwardRow(ws.lnf, hOff, wte, row, dLnf, dWte, V, C);
  }
  stats.lossTarget = nMasked ? stats.lossTarget / nMasked : NaN;
  stats.lossTotal = nTotal ? stats.lossTotal / nTotal : NaN;

  backwardFromHidden(model, ws, tokens, dLnf);
  return stats;
}

/** Backprop from d(final layer norm output) down to all parameters. */
function backwardFromHidden(
  model: Model, ws: Workspace, tokens: Int32Array, dLnf: Float64Array,
): void {
  const { nEmbd: C, nHead: H, nLayer } = model.config;
  const { B, T } = ws;
  const rows = B * T;
  const lastX = nLayer > 0 ? ws.layers[nLayer - 1].x2 : ws.x0;
  const dX = ws.dTmp;
  dX.fill(0);
  layerNormBackward(
    dLnf, lastX, model.lnfG.w, ws.lnfMean, ws.lnfRstd,
    dX, model.lnfG.g, model.lnfB.g, rows, C,
  );

  for (let l = nLayer - 1; l >= 0; l--) {
    const blk = model.blocks[l];
    const acts = ws.layers[l];
    const xIn = l > 0 ? ws.layers[l - 1].x2 : ws.x0;

    // MLP branch: x2 = x1 + fcAct @ fc2W + fc2B
    biasGrad(dX, blk.fc2B.g, rows, C);
    ws.dFcAct.fill(0);
    mmBT(dX, blk.fc2W.w, ws.dFcAct, rows, C, 4 * C);
    mmAT(acts.fcAct, dX, blk.fc2W.g, rows, 4 * C, C);
    for (let i = 0; i < rows * 4 * C; i++) ws.dFcPre[i] = ws.dFcAct[i] * geluGrad(acts.fcPre[i]);
    biasGrad(ws.dFcPre, blk.fcB.g, rows, 4 * C);
    const dLn2 = ws.dFcAct; // reuse as [rows, C] scratch
    dLn2.fill(0);
    mmBT(ws.dFcPre, blk.fcW.w, dLn2, rows, 4 * C, C);
    mmAT(acts.ln2, ws.dFcPre, blk.fcW.g, rows, C, 4 * C);
    // dX currently holds d(x2); residual passes it to d(x1), plus ln2 path
    layerNormBackward(
      dLn2, acts.x1, blk.ln2g.w, acts.ln2Mean, acts.ln2Rstd,
      dX, blk.ln2g.g, blk.ln2b.g, rows, C,
    );

    // attention branch: x1 = xIn + attOut @ projW + projB
    biasGrad(dX, blk.projB.g, rows, C);
    ws.dAttOut.fill(0);
    mmBT(dX, blk.projW.w, ws.dAttOut, rows, C, C);
    mmAT(acts.attOut, dX, blk.projW.g, rows, C, C);
    ws.dQkv.fill(0);
    attentionBackward(ws.dAttOut, acts.qkv, acts.att, ws.dQkv, ws.dAtt, B, T, C, H);
    biasGrad(ws.dQkv, blk.attnB.g, rows, 3 * C);
    const dLn1 = ws.dAttOut; // reuse as [rows, C]
    dLn1.fill(0);
    mmBT(ws.dQkv, blk.attnW.w, dLn1, rows, 3 * C, C);
    mmAT(acts.ln1, ws.dQkv, blk.attnW.g, rows, C, 3 * C);
    layerNormBackward(
      dLn1, xIn, blk.ln1g.w, acts.ln1Mean, acts.ln1Rstd,
      dX, blk.ln1g.g, blk.ln1b.g, rows, C,
    );
  }

  // embeddings
  for (let i = 0; i < rows; i++) {
    const t = i % T;
    const xi = i * C;
    const tokOff = tokens[i] * C;
    const posOff = t * C;
    for (let j = 0; j < C; j++) {
      model.wte.g[tokOff + j] += dX[xi + j];
      model.wpe.g[posOff + j] += dX[xi + j];
    }
  }
}

/** Next-token distribution after a prefix (single sequence, no grad). */
export function nextTokenProbs(model: Model, prefix: Int32Array): Float64Array {
  const T = prefix.length;
  if (T > model.config.blockSize) {
    throw new Error(`prefix length ${T} exceeds block size ${model.config.blockSize}`);
  }
  const ws = model.workspace(1, T);
  const hidden = forwardHidden(model, ws, prefix);
  const { nEmbd: C, vocabSize: V } = model.config;
  const out = new Float64Array(V);
  headLogits(hidden, (T - 1) * C, model.wte.w, out, V, C);
  softmaxRow(out, 0, V);
  return out;
}

/** Attention probabilities of a single sequence: [nLayer, nHead, T, T]. */
export function attentionMaps(model: Model, tokens: Int32Array): Float64Array {
  const T = tokens.length;
  const ws = model.workspace(1, T);
  forwardHidden(model, ws, tokens);
  const { nLayer, nHead } = model.config;
  const out = new Float64Array(nLayer * nHead * T * T);
  for (let l = 0; l < nLayer; l++) {
    out.set(ws.layers[l].att.subarray(0, nHead * T * T), l * nHead * T * T);
  }
  return out;
}
