/**
 * Training loop: online-order blocks from a pre-generated corpus, AdamW,
 * per-task loss logging, periodic generation-record emission and
 * checkpointing. All file outputs use the workbench schemas so the Python
 * CLI scores them directly.
 */

import { appendFileSync, mkdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { AdamW, DEFAULT_OPTIM, OptimConfig } from "./adam.js";
import {
  BlockLoader, Example, RowLoader, TASK_NAMES, Vocab, encodeStream, loadCorpus,
} from "./data.js";
import { generateRecords } from "./decode.js";
import { DEFAULT_CONFIG, Model, ModelConfig, loss_and_backward } from "./model.js";
import { Rng } from "./rng.js";
import { saveCheckpoint } from "./checkpoint.js";

export interface TrainConfig {
  model: ModelConfig;
  optim: OptimConfig;
  batchSize: number;
  iterations: number;
  evalEvery: number;
  evalRecords: { free: number; unscramble: number; conditional: number };
  seed: number;
  /** "rows" = one example per row (default); "packed" = contiguous stream blocks */
  framing: "rows" | "packed";
}

export function defaultTrainConfig(vocabSize: number): TrainConfig {
  return {
    model: { vocabSize, ...DEFAULT_CONFIG },
    optim: { ...DEFAULT_OPTIM },
    batchSize: 128,
    iterations: 10_000,
    evalEvery: 250,
    evalRecords: { free: 300, unscramble: 150, conditional: 0 },
    seed: 0,
    framing: "rows",
  };
}

export interface TrainOutputs {
  lossCsv: string;
  recordsJsonl: string;
  checkpointHeader: string;
  checkpointBlob: string;
  manifest: string;
}

/** Reserve held-out examples per task for periodic generation records. */
export function splitEvalExamples(
  examples: Example[], counts: TrainConfig["evalRecords"],
): { train: Example[]; evalByTask: Map<string, Example[]> } {
  const wanted = new Map<string, number>(Object.entries(counts));
  const evalByTask = new Map<string, Example[]>(TASK_NAMES.map((t) => [t, []]));
  const train: Example[] = [];
  for (const ex of examples) {
    const need = wanted.get(ex.task) ?? 0;
    const bucket = evalByTask.get(ex.task)!;
    if (bucket.length < need) bucket.push(ex);
    else train.push(ex);
  }
  return { train, evalByTask };
}

export function train(
  corpusPath: string, vocabPath: string, outDir: string, config: TrainConfig,
  overrides: Record<string, unknown> = {},
): TrainOutputs {
  mkdirSync(outDir, { recursive: true });
  const vocab = Vocab.load(vocabPath);
  if (config.model.vocabSize !== vocab.size) {
    throw new Error(
      `model vocabSize ${config.model.vocabSize} != vocabulary size ${vocab.size}`,
    );
  }
  const examples = loadCorpus(corpusPath);
  const { train: trainExamples, evalByTask } = splitEvalExamples(examples, config.evalRecords);
  const loader =
    config.framing === "rows"
      ? new RowLoader(trainExamples, vocab, config.batchSize, config.model.blockSize)
      : new BlockLoader(encodeStream(trainExamples, vocab), config.batchSize, config.model.blockSize);

  const model = new Model(config.model, new Rng(config.seed));
  const optim = new AdamW(model, config.optim);

  const outputs: TrainOutputs = {
    lossCsv: join(outDir, "loss.csv"),
    recordsJsonl: join(outDir, "records.jsonl"),
    checkpointHeader: join(outDir, "checkpoint.json"),
    checkpointBlob: join(outDir, "checkpoint.bin"),
    manifest: join(outDir, "manifest.json"),
  };
  writeFileSync(
    outputs.manifest,
    JSON.stringify(
      {
        config,
        overrides,
        nParams: model.nParams,
        batchesPerEpoch: loader.batchesPerEpoch,
        trainExamples: trainExamples.length,
        droppedOverlongRows: loader instanceof RowLoader ? loader.dropped : 0,
      },
      null,
      2,
    ),
  );
  writeFileSync(
    outputs.lossCsv,
    "# schema: perclang-trainer/loss/v1\n" +
      "iteration,loss_target,loss_total,loss_free,loss_unscramble,loss_conditional,grad_norm\n",
  );
  writeFileSync(outputs.recordsJsonl, JSON.stringify({ schema: "perclang/generations/v1" }) + "\n");

  const emitRecords = (iteration: number) => {
    const rows = [];
    for (const [task, bucket] of evalByTask) {
      if (!bucket.length) continue;
      rows.push(...generateRecords(model, vocab, bucket, iteration, config.seed + iteration));
      void task;
    }
    appendFileSync(outputs.recordsJsonl, rows.map((r) => JSON.stringify(r)).join("\n") + "\n");
  };

  for (let iter = 1; iter <= config.iterations; iter++) {
    const batch = loader.next();
    const ws = model.workspace(config.batchSize, batch.T);
    model.zeroGrad();
    const stats = loss_and_backward(model, ws, batch.tokens, batch.targets, batch.mask, batch.taskIds);
    const gradNorm = optim.step();
    const perTask = TASK_NAMES.map((_, id) => {
      const entry = stats.taskLoss.get(id);
      return entry && entry.count ? entry.sum / entry.count : NaN;
    });
    appendFileSync(
      outputs.lossCsv,
      `${iter},${stats.lossTarget},${stats.lossTotal},${perTask[0]},${perTask[1]},${perTask[2]},${gradNorm}\n`,
    );
    if (iter % config.evalEvery === 0 || iter === config.iterations) {
      emitRecords(iter);
      saveCheckpoint(model, outputs.checkpointHeader, outputs.checkpointBlob);
    }
  }
  return outputs;
}
