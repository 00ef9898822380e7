/**
 * Averaged attention-map export: pick corpus sentences whose token streams
 * instantiate one grammatical template (matched by token-name pattern),
 * average the per-layer/head attention over n of them, and write a JSON
 * tensor with shape [nLayer, nHead, T, T].
 */

import { writeFileSync } from "node:fs";

import { attentionMaps, Model } from "./model.js";
import { Vocab, Example } from "./data.js";

/** Role pattern of a free-generation stream, e.g. "eAdj subj lverb pAdj descriptor". */
export function streamPattern(tokens: string[]): string {
  return tokens
    .map((t) => {
      if (t.startsWith("<")) return t;
      if (t.startsWith("subj")) return "subj";
      if (t.startsWith("obj")) return "obj";
      if (t.startsWith("descriptor")) return "descriptor";
      if (t.startsWith("verb")) return "verb";
      if (t.startsWith("eAdj")) return "eAdj";
      if (t.startsWith("pAdj")) return "pAdj";
      if (t.startsWith("adv")) return "adv";
      return t === "is" || t === "has" ? "lverb" : t;
    })
    .join(" ");
}

export interface AttentionExport {
  format: string;
  template: string;
  instances: number;
  shape: [number, number, number, number];
  data: number[];
}

export function exportAttention(
  model: Model, vocab: Vocab, examples: Example[], template: string, n = 100,
): AttentionExport {
  const sep = "<sep>";
  const matches: number[][] = [];
  for (const ex of examples) {
    if (ex.task !== "free") continue;
    const stream = [...ex.input, sep, ...ex.target];
    if (streamPattern(stream) === template) {
      matches.push(stream.map((t) => vocab.id(t)));
      if (matches.length === n) break;
    }
  }
  if (matches.length === 0) {
    throw new Error(`no corpus sentences instantiate template "${template}"`);
  }
  const T = matches[0].length;
  const { nLayer, nHead } = model.config;
  const acc = new Float64Array(nLayer * nHead * T * T);
  for (const tokens of matches) {
    const maps = attentionMaps(model, Int32Array.from(tokens));
    for (let i = 0; i < acc.length; i++) acc[i] += maps[i];
  }
  for (let i = 0; i < acc.length; i++) acc[i] /= matches.length;
  return {
    format: "perclang-trainer/attention/v1",
    template,
    instances: matches.length,
    shape: [nLayer, nHead, T, T],
    data: Array.from(acc),
  };
}

export function writeAttention(path: string, exported: AttentionExport): void {
  writeFileSync(path, JSON.stringify(exported));
}
