/**
 * Autoregressive decoding and generation-record emission.
 *
 * Greedy decoding is the deterministic default for prompted tasks. Free
 * generation always sees the same prompt, so its records are drawn at
 * temperature 1 from a seeded stream instead -- greedy would collapse every
 * record to one sentence and measure nothing.
 */

import { Model, nextTokenProbs } from "./model.js";
import { Rng, categorical } from "./rng.js";
import { Vocab, Example } from "./data.js";

export interface DecodeOptions {
  temperature: number; // 0 = greedy
  maxTokens: number;
  rng?: Rng;
}

export function decode(
  model: Model, vocab: Vocab, prompt: number[], options: DecodeOptions,
): number[] {
  const eos = vocab.id("<eos>");
  const out: number[] = [];
  const context = [...prompt];
  const budget = Math.min(
    options.maxTokens,
    model.config.blockSize - prompt.length,
  );
  for (let i = 0; i < budget; i++) {
    const probs = nextTokenProbs(model, Int32Array.from(context));
    let tok: number;
    if (options.temperature <= 0) {
      tok = 0;
      for (let v = 1; v < probs.length; v++) if (probs[v] > probs[tok]) tok = v;
    } else {
      if (options.temperature !== 1) {
        let sum = 0;
        for (let v = 0; v < probs.length; v++) {
          probs[v] = Math.pow(probs[v], 1 / options.temperature);
          sum += probs[v];
        }
        for (let v = 0; v < probs.length; v++) probs[v] /= sum;
      }
      tok = categorical(probs, options.rng ?? new Rng(0));
    }
    if (tok === eos) break;
    out.push(tok);
    context.push(tok);
  }
  return out;
}

export interface GenerationRecordRow {
  iteration: number;
  task: string;
  input: string[];
  output: string[];
  target?: string[];
}

/** One generation record per example: prompt = input + <sep>, continue to <eos>. */
export function generateRecords(
  model: Model, vocab: Vocab, examples: Example[], iteration: number,
  sampleSeed: number, maxTokens = 80,
): GenerationRecordRow[] {
  const sep = vocab.id("<sep>");
  const rows: GenerationRecordRow[] = [];
  const rng = new Rng(sampleSeed);
  for (const ex of examples) {
    const prompt = [...ex.input.map((t) => vocab.id(t)), sep];
    if (prompt.length + 2 > model.config.blockSize) continue; // no room to generate
    const free = ex.task === "free";
    const out = decode(model, vocab, prompt, {
      temperature: free ? 1 : 0,
      maxTokens,
      rng: free ? rng : undefined,
    });
    rows.push({
      iteration,
      task: ex.task,
      input: ex.input,
      output: vocab.decode(out),
      target: ex.target,
    });
  }
  return rows;
}
