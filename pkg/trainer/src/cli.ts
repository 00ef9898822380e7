/**
 * Trainer CLI: train | generate | probes | attention.
 *
 *   perclang-trainer train --corpus run/corpus.jsonl --vocab run/vocab.txt \
 *       --out run/trainer --iters 2000 --batch 32 --block 96 --eval-every 100
 *   perclang-trainer probes --checkpoint run/trainer/checkpoint.json \
 *       --vocab run/vocab.txt --requests run/probes_seen.jsonl \
 *       --out run/responses.jsonl --iteration 2000
 *   perclang-trainer attention --checkpoint ... --vocab ... --corpus ... \
 *       --template "<free> <sep> eAdj subj lverb pAdj descriptor <eos>" --out maps.json
 */

import { appendFileSync, writeFileSync } from "node:fs";

import { exportAttention, writeAttention } from "./attention.js";
import { loadCheckpoint } from "./checkpoint.js";
import { Vocab, loadCorpus } from "./data.js";
import { generateRecords } from "./decode.js";
import { answerProbes, loadProbes } from "./probes.js";
import { defaultTrainConfig, train } from "./train.js";

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i++) {
    if (!argv[i].startsWith("--")) throw new Error(`unexpected argument ${argv[i]}`);
    flags.set(argv[i].slice(2), argv[i + 1]);
    i++;
  }
  return flags;
}

function need(flags: Map<string, string>, key: string): string {
  const v = flags.get(key);
  if (v === undefined) throw new Error(`missing --${key}`);
  return v;
}

function cmdTrain(flags: Map<string, string>): void {
  const vocab = Vocab.load(need(flags, "vocab"));
  const config = defaultTrainConfig(vocab.size);
  const overrides: Record<string, unknown> = {};
  const setNum = (flag: string, apply: (v: number) => void) => {
    const v = flags.get(flag);
    if (v !== undefined) {
      apply(Number(v));
      overrides[flag] = Number(v);
    }
  };
  setNum("iters", (v) => (config.iterations = v));
  setNum("batch", (v) => (config.batchSize = v));
  setNum("block", (v) => (config.model.blockSize = v));
  setNum("width", (v) => (config.model.nEmbd = v));
  setNum("layers", (v) => (config.model.nLayer = v));
  setNum("heads", (v) => (config.model.nHead = v));
  setNum("lr", (v) => (config.optim.lr = v));
  setNum("eval-every", (v) => (config.evalEvery = v));
  setNum("seed", (v) => (config.seed = v));
  setNum("eval-free", (v) => (config.evalRecords.free = v));
  setNum("eval-unscramble", (v) => (config.evalRecords.unscramble = v));
  setNum("eval-conditional", (v) => (config.evalRecords.conditional = v));
  const framing = flags.get("framing");
  if (framing !== undefined) {
    if (framing !== "rows" && framing !== "packed") throw new Error("--framing rows|packed");
    config.framing = framing;
    overrides["framing"] = framing;
  }
  const outputs = train(need(flags, "corpus"), need(flags, "vocab"), need(flags, "out"), config, overrides);
  console.log(`trained; records at ${outputs.recordsJsonl}`);
}

function cmdGenerate(flags: Map<string, string>): void {
  const model = loadCheckpoint(need(flags, "checkpoint"), need(flags, "checkpoint").replace(/\.json$/, ".bin"));
  const vocab = Vocab.load(need(flags, "vocab"));
  const examples = loadCorpus(need(flags, "corpus"));
  const iteration = Number(flags.get("iteration") ?? "0");
  const count = Number(flags.get("count") ?? "100");
  const rows = generateRecords(model, vocab, examples.slice(0, count), iteration, iteration);
  const out = need(flags, "out");
  writeFileSync(out, JSON.stringify({ schema: "perclang/generations/v1" }) + "\n");
  appendFileSync(out, rows.map((r) => JSON.stringify(r)).join("\n") + "\n");
  console.log(`wrote ${rows.length} records to ${out}`);
}

function cmdProbes(flags: Map<string, string>): void {
  const model = loadCheckpoint(need(flags, "checkpoint"), need(flags, "checkpoint").replace(/\.json$/, ".bin"));
  const vocab = Vocab.load(need(flags, "vocab"));
  const probes = loadProbes(need(flags, "requests"));
  const iteration = Number(flags.get("iteration") ?? "0");
  const rows = answerProbes(model, vocab, probes, iteration);
  const out = need(flags, "out");
  writeFileSync(out, JSON.stringify({ schema: "perclang/probe_responses/v1" }) + "\n");
  appendFileSync(out, rows.map((r) => JSON.stringify(r)).join("\n") + "\n");
  console.log(`answered ${rows.length} probes into ${out}`);
}

function cmdAttention(flags: Map<string, string>): void {
  const model = loadCheckpoint(need(flags, "checkpoint"), need(flags, "checkpoint").replace(/\.json$/, ".bin"));
  const vocab = Vocab.load(need(flags, "vocab"));
  const examples = loadCorpus(need(flags, "corpus"));
  const exported = exportAttention(
    model, vocab, examples, need(flags, "template"), Number(flags.get("count") ?? "100"),
  );
  writeAttention(need(flags, "out"), exported);
  console.log(`averaged attention over ${exported.instances} instances`);
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    const flags = parseFlags(rest);
    switch (command) {
      case "train":
        cmdTrain(flags);
        return 0;
      case "generate":
        cmdGenerate(flags);
        return 0;
      case "probes":
        cmdProbes(flags);
        return 0;
      case "attention":
        cmdAttention(flags);
        return 0;
      default:
        console.error("usage: perclang-trainer <train|generate|probes|attention> [--flags]");
        return 2;
    }
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

const invokedDirectly = process.argv[1] && import.meta.url.endsWith(process.argv[1].split("/").pop() ?? "");
if (invokedDirectly) {
  process.exit(main(process.argv.slice(2)));
}
