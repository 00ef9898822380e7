import { describe, expect, it } from "vitest";

import { AdamW } from "../src/adam.js";
import {
  Model,
  ModelConfig,
  attentionMaps,
  loss_and_backward,
  makeWorkspace,
  nextTokenProbs,
} from "../src/model.js";
import { Rng } from "../src/rng.js";

const TINY: ModelConfig = { vocabSize: 11, blockSize: 8, nLayer: 2, nHead: 2, nEmbd: 8 };

function tinyBatch(B: number, T: number, seed = 5) {
  const rng = new Rng(seed);
  const n = B * T;
  const tokens = new Int32Array(n);
  const targets = new Int32Array(n);
  const mask = new Uint8Array(n);
  const taskIds = new Int8Array(n);
  for (let i = 0; i < n; i++) {
    tokens[i] = rng.int(TINY.vocabSize);
    targets[i] = rng.int(TINY.vocabSize);
    mask[i] = rng.next() < 0.7 ? 1 : 0;
    taskIds[i] = rng.int(3);
  }
  mask[0] = 1; // at least one contributing position
  return { tokens, targets, mask, taskIds };
}

describe("forward", () => {
  it("initial loss is close to ln(vocab) for uniform-ish logits", () => {
    const V = 101;
    const config: ModelConfig = { vocabSize: V, blockSize: 16, nLayer: 2, nHead: 2, nEmbd: 32 };
    const model = new Model(config, new Rng(1));
    const ws = makeWorkspace(model, 4, 16);
    const rng = new Rng(2);
    const n = 4 * 16;
    const tokens = Int32Array.from({ length: n }, () => rng.int(V));
    const targets = Int32Array.from({ length: n }, () => rng.int(V));
    const stats = loss_and_backward(
      model, ws, tokens, targets, new Uint8Array(n).fill(1), new Int8Array(n),
    );
    expect(stats.lossTarget).toBeGreaterThan(Math.log(V) * 0.9);
    expect(stats.lossTarget).toBeLessThan(Math.log(V) * 1.1);
  });

  it("next-token probabilities form a distribution", () => {
    const model = new Model(TINY, new Rng(3));
    const probs = nextTokenProbs(model, Int32Array.from([1, 2, 3]));
    const sum = probs.reduce((a, b) => a + b, 0);
    expect(sum).toBeCloseTo(1.0, 10);
    expect(Math.min(...probs)).toBeGreaterThan(0);
  });

  it("attention rows sum to one over the causal prefix", () => {
    const model = new Model(TINY, new Rng(4));
    const T = 6;
    const maps = attentionMaps(model, Int32Array.from([0, 1, 2, 3, 4, 5]));
    expect(maps.length).toBe(TINY.nLayer * TINY.nHead * T * T);
    for (let l = 0; l < TINY.nLayer; l++) {
      for (let h = 0; h < TINY.nHead; h++) {
        for (let t = 0; t < T; t++) {
          const off = ((l * TINY.nHead + h) * T + t) * T;
          let sum = 0;
          for (let s = 0; s < T; s++) {
            sum += maps[off + s];
            if (s > t) expect(maps[off + s]).toBe(0); // causal mask
          }
          expect(sum).toBeCloseTo(1.0, 8);
        }
      }
    }
  });

  it("future tokens do not influence past predictions", () => {
    const model = new Model(TINY, new Rng(9));
    const a = nextTokenProbs(model, Int32Array.from([3, 7]));
    // same prefix inside a longer sequence: recompute using only the prefix
    const b = nextTokenProbs(model, Int32Array.from([3, 7]));
    expect(Array.from(a)).toEqual(Array.from(b));
  });
});

describe("backward", () => {
  it("matches central finite differences on every parameter family", () => {
    const model = new Model(TINY, new Rng(7));
    const B = 2;
    const T = 6;
    const ws = makeWorkspace(model, B, T);
    const batch = tinyBatch(B, T);

    const lossOf = () =>
      loss_and_backward(model, ws, batch.tokens, batch.targets, batch.mask, batch.taskIds)
        .lossTarget;

    model.zeroGrad();
    lossOf();
    const analytic = model.params.map((p) => Float64Array.from(p.g));

    const eps = 1e-5;
    const rng = new Rng(11);
    let checked = 0;
    for (const [pi, p] of model.params.entries()) {
      // probe a few coordinates per tensor
      for (let probe = 0; probe < 3; probe++) {
        const i = rng.int(p.w.length);
        const orig = p.w[i];
        p.w[i] = orig + eps;
        const up = lossOf();
        p.w[i] = orig - eps;
        const down = lossOf();
        p.w[i] = orig;
        const numeric = (up - down) / (2 * eps);
        const got = analytic[pi][i];
        expect(Math.abs(numeric - got)).toBeLessThan(1e-6 + 1e-4 * Math.abs(numeric));
        checked++;
      }
    }
    expect(checked).toBe(model.params.length * 3);
  });

  it("unmasked positions contribute no gradient", () => {
    const model = new Model(TINY, new Rng(8));
    const ws = makeWorkspace(model, 1, 4);
    const tokens = Int32Array.from([1, 2, 3, 4]);
    const targets = Int32Array.from([2, 3, 4, 5]);
    model.zeroGrad();
    loss_and_backward(model, ws, tokens, targets, new Uint8Array([0, 0, 0, 0]), new Int8Array(4));
    for (const p of model.params) {
      for (let i = 0; i < p.g.length; i++) expect(p.g[i]).toBe(0);
    }
  });
});

describe("training dynamics", () => {
  it("memorizes a tiny repeated sequence", () => {
    const model = new Model(TINY, new Rng(12));
    const optim = new AdamW(model, {
      lr: 3e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weightDecay: 1e-4, gradClip: 1.0,
    });
    const T = 7;
    const ws = makeWorkspace(model, 1, T);
    const seq = Int32Array.from([9, 1, 4, 6, 2, 8, 5, 0]);
    const tokens = seq.slice(0, T) as Int32Array;
    const targets = seq.slice(1) as Int32Array;
    const mask = new Uint8Array(T).fill(1);
    let first = 0;
    let last = 0;
    for (let step = 0; step < 300; step++) {
      model.zeroGrad();
      const stats = loss_and_backward(model, ws, tokens, targets, mask, new Int8Array(T));
      if (step === 0) first = stats.lossTarget;
      last = stats.lossTarget;
      optim.step();
    }
    expect(first).toBeGreaterThan(1.5);
    expect(last).toBeLessThan(0.05);
    // greedy continuation reproduces the memorized sequence
    const probs = nextTokenProbs(model, seq.slice(0, 3) as Int32Array);
    let argmax = 0;
    for (let v = 1; v < probs.length; v++) if (probs[v] > probs[argmax]) argmax = v;
    expect(argmax).toBe(seq[3]);
  });

  it("is deterministic under a fixed seed", () => {
    const run = () => {
      const model = new Model(TINY, new Rng(21));
      const optim = new AdamW(model);
      const ws = makeWorkspace(model, 2, 5);
      const batch = tinyBatch(2, 5, 33);
      const losses: number[] = [];
      for (let i = 0; i < 5; i++) {
        model.zeroGrad();
        losses.push(
          loss_and_backward(model, ws, batch.tokens, batch.targets, batch.mask, batch.taskIds)
            .lossTarget,
        );
        optim.step();
      }
      return losses;
    };
    expect(run()).toEqual(run());
  });

  it("clips the gradient to the configured norm", () => {
    const model = new Model(TINY, new Rng(14));
    const optim = new AdamW(model);
    const ws = makeWorkspace(model, 2, 6);
    const batch = tinyBatch(2, 6);
    model.zeroGrad();
    loss_and_backward(model, ws, batch.tokens, batch.targets, batch.mask, batch.taskIds);
    const before = model.params.map((p) => Float64Array.from(p.w));
    const norm = optim.step();
    expect(norm).toBeGreaterThan(0);
    // parameters moved
    let moved = 0;
    for (const [pi, p] of model.params.entries()) {
      for (let i = 0; i < p.w.length; i++) if (p.w[i] !== before[pi][i]) moved++;
    }
    expect(moved).toBeGreaterThan(0);
  });
});
