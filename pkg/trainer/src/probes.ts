/**
 * Probe answering: next-token probability + rank, and teacher-forced
 * sequence NLL, in the workbench's probe/response JSONL schemas.
 */

import { readFileSync } from "node:fs";

import { Model, nextTokenProbs, forwardHidden, makeWorkspace } from "./model.js";
import { headLogits, softmaxRow } from "./tensor.js";
import { Vocab } from "./data.js";

export interface ProbeRequestRow {
  id: number;
  kind: "next_token" | "sequence_nll";
  family: string;
  prefix: string[];
  target?: string;
  tokens?: string[];
}

export interface ProbeResponseRow {
  id: number;
  iteration: number;
  prob?: number;
  rank?: number;
  nll?: number;
}

export function loadProbes(path: string): ProbeRequestRow[] {
  const lines = readFileSync(path, "utf-8").split("\n");
  const out: ProbeRequestRow[] = [];
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (!line) continue;
    const rec = JSON.parse(line);
    if (i === 0 && rec.schema !== undefined) {
      if (rec.schema !== "perclang/probes/v1") {
        throw new Error(`unexpected probes schema ${rec.schema}`);
      }
      continue;
    }
    out.push(rec);
  }
  return out;
}

/** Rank of a token: 1 + number of strictly more probable tokens. */
export function rankOf(probs: Float64Array, token: number): number {
  let rank = 1;
  const p = probs[token];
  for (let v = 0; v < probs.length; v++) if (probs[v] > p) rank++;
  return rank;
}

/** Sum of -ln p over `tokens` continued from `prefix` (teacher forcing). */
export function sequenceNll(model: Model, prefix: number[], tokens: number[]): number {
  const full = [...prefix, ...tokens];
  const T = full.length - 1; // the last token is predicted, never fed as input
  if (T + 1 > model.config.blockSize) {
    throw new Error(`sequence length ${T + 1} exceeds block size`);
  }
  const ws = model.workspace(1, T);
  const hidden = forwardHidden(model, ws, Int32Array.from(full.slice(0, T)));
  const { nEmbd: C, vocabSize: V } = model.config;
  const row = new Float64Array(V);
  let nll = 0;
  for (let pos = prefix.length - 1; pos < T; pos++) {
    headLogits(hidden, pos * C, model.wte.w, row, V, C);
    softmaxRow(row, 0, V);
    nll += -Math.log(Math.max(row[full[pos + 1]], 1e-300));
  }
  return nll;
}

export function answerProbes(
  model: Model, vocab: Vocab, probes: ProbeRequestRow[], iteration: number,
): ProbeResponseRow[] {
  const rows: ProbeResponseRow[] = [];
  for (const probe of probes) {
    if (probe.kind === "next_token") {
      if (!probe.target) throw new Error(`probe ${probe.id}: next_token needs a target`);
      const prefix = Int32Array.from(probe.prefix.map((t) => vocab.id(t)));
      const probs = nextTokenProbs(model, prefix);
      const target = vocab.id(probe.target);
      rows.push({ id: probe.id, iteration, prob: probs[target], rank: rankOf(probs, target) });
    } else {
      if (!probe.tokens) throw new Error(`probe ${probe.id}: sequence_nll needs tokens`);
      const nll = sequenceNll(
        model,
        probe.prefix.map((t) => vocab.id(t)),
        probe.tokens.map((t) => vocab.id(t)),
      );
      rows.push({ id: probe.id, iteration, nll });
    }
  }
  return rows;
}
