/**
 * Readers for the workbench's vocabulary and corpus files, plus the packer
 * that turns task examples into fixed-size training blocks.
 *
 * An example's model-visible stream is input + <sep> + target (the target
 * already ends with <eos>). Streams are concatenated in corpus order -- the
 * deterministic order the generator defined -- and sliced into blocks;
 * positions predicting target tokens carry the loss mask, and every position
 * remembers its example's task for per-task loss logging.
 */

import { readFileSync } from "node:fs";

export const TASK_IDS: Record<string, number> = { free: 0, unscramble: 1, conditional: 2 };
export const TASK_NAMES = ["free", "unscramble", "conditional"];

export class Vocab {
  readonly tokens: string[];
  readonly ids = new Map<string, number>();

  constructor(tokens: string[]) {
    this.tokens = tokens;
    tokens.forEach((t, i) => this.ids.set(t, i));
    for (const required of ["<eos>", "<sep>", "<free>", "<unscramble>", "<cond>"]) {
      if (!this.ids.has(required)) throw new Error(`vocabulary lacks ${required}`);
    }
  }

  static load(path: string): Vocab {
    const lines = readFileSync(path, "utf-8").split("\n").filter((l) => l.length > 0);
    return new Vocab(lines);
  }

  get size(): number {
    return this.tokens.length;
  }

  id(token: string): number {
    const v = this.ids.get(token);
    if (v === undefined) throw new Error(`unknown token ${token}`);
    return v;
  }

  decode(ids: ArrayLike<number>): string[] {
    return Array.from(ids, (i) => this.tokens[i]);
  }
}

export interface Example {
  task: string;
  input: string[];
  target: string[];
}

export function loadCorpus(path: string): Example[] {
  const lines = readFileSync(path, "utf-8").split("\n");
  const out: Example[] = [];
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (!line) continue;
    const rec = JSON.parse(line);
    if (i === 0 && rec.schema !== undefined) {
      if (rec.schema !== "perclang/corpus/v1") {
        throw new Error(`unexpected corpus schema ${rec.schema}`);
      }
      continue;
    }
    out.push({ task: rec.task, input: rec.input, target: rec.target });
  }
  return out;
}

export interface TokenStream {
  tokens: Int32Array;
  /** 1 where the NEXT token belongs to a target region */
  targetMask: Uint8Array;
  /** task id of the example each position belongs to */
  taskIds: Int8Array;
}

export function encodeStream(examples: Example[], vocab: Vocab): TokenStream {
  const sep = vocab.id("<sep>");
  const toks: number[] = [];
  const mask: number[] = [];
  const tasks: number[] = [];
  for (const ex of examples) {
    const task = TASK_IDS[ex.task];
    if (task === undefined) throw new Error(`unknown task ${ex.task}`);
    const ids = [...ex.input.map((t) => vocab.id(t)), sep, ...ex.target.map((t) => vocab.id(t))];
    const targetStart = ex.input.length + 1; // first target token index within ids
    for (let i = 0; i < ids.length; i++) {
      toks.push(ids[i]);
      // position i predicts ids[i+1]; that prediction is "target" when the
      // next token lies in the target region (so the <sep> position counts)
      mask.push(i + 1 >= targetStart && i + 1 < ids.length ? 1 : 0);
      tasks.push(task);
    }
  }
  return {
    tokens: Int32Array.from(toks),
    targetMask: Uint8Array.from(mask),
    taskIds: Int8Array.from(tasks),
  };
}

export interface Batch {
  tokens: Int32Array; // [B*T]
  targets: Int32Array; // [B*T], -1 where no next token exists
  mask: Uint8Array;
  taskIds: Int8Array;
  /** sequence length of this batch (row mode varies it per batch) */
  T: number;
}

/** Sequential non-overlapping blocks over the stream; one batch per call. */
export class BlockLoader {
  private cursor = 0;

  constructor(
    private stream: TokenStream,
    readonly batchSize: number,
    readonly blockSize: number,
  ) {
    const need = batchSize * blockSize + 1;
    if (stream.tokens.length < need) {
      throw new Error(`stream has ${stream.tokens.length} tokens; need at least ${need}`);
    }
  }

  /** Number of full batches one pass over the stream provides. */
  get batchesPerEpoch(): number {
    return Math.floor((this.stream.tokens.length - 1) / (this.batchSize * this.blockSize));
  }

  next(): Batch {
    const { batchSize: B, blockSize: T } = this;
    const n = B * T;
    if (this.cursor + n + 1 > this.stream.tokens.length) this.cursor = 0;
    const start = this.cursor;
    this.cursor += n;
    const tokens = this.stream.tokens.subarray(start, start + n);
    const targets = new Int32Array(n);
    const mask = new Uint8Array(n);
    for (let i = 0; i < n; i++) {
      targets[i] = this.stream.tokens[start + i + 1] ?? -1;
      mask[i] = this.stream.targetMask[start + i];
    }
    // the final position of the whole stream has no successor
    if (start + n >= this.stream.tokens.length) {
      targets[n - 1] = -1;
      mask[n - 1] = 0;
    }
    return {
      tokens: Int32Array.from(tokens),
      targets,
      mask,
      taskIds: Int8Array.from(this.stream.taskIds.subarray(start, start + n)),
      T: this.blockSize,
    };
  }
}

/**
 * One example per row, in corpus order, padded to the longest row in the
 * batch (rounded up so workspace shapes stay few). Task prompts therefore
 * always start at position 0, matching how the model is prompted at
 * evaluation time. Examples whose stream exceeds ``maxRow`` are dropped and
 * counted.
 */
export class RowLoader {
  private cursor = 0;
  readonly rows: TokenStream[];
  readonly dropped: number;

  constructor(
    examples: Example[],
    vocab: Vocab,
    readonly batchSize: number,
    readonly maxRow: number,
    private roundTo = 8,
  ) {
    const all = examples.map((ex) => encodeStream([ex], vocab));
    this.rows = all.filter((r) => r.tokens.length <= maxRow);
    this.dropped = all.length - this.rows.length;
    if (this.rows.length < batchSize) {
      throw new Error(`only ${this.rows.length} rows fit maxRow=${maxRow}`);
    }
  }

  get batchesPerEpoch(): number {
    return Math.floor(this.rows.length / this.batchSize);
  }

  next(): Batch {
    const B = this.batchSize;
    if (this.cursor + B > this.rows.length) this.cursor = 0;
    const rows = this.rows.slice(this.cursor, this.cursor + B);
    this.cursor += B;
    const longest = Math.max(...rows.map((r) => r.tokens.length));
    const T = Math.min(this.maxRow, Math.ceil(longest / this.roundTo) * this.roundTo);
    const n = B * T;
    const tokens = new Int32Array(n); // pad token 0 = <eos>; loss-masked out
    const targets = new Int32Array(n).fill(-1);
    const mask = new Uint8Array(n);
    const taskIds = new Int8Array(n);
    for (let b = 0; b < B; b++) {
      const row = rows[b];
      const L = row.tokens.length;
      const off = b * T;
      tokens.set(row.tokens, off);
      for (let i = 0; i < L - 1; i++) {
        targets[off + i] = row.tokens[i + 1];
        mask[off + i] = row.targetMask[i];
      }
      taskIds.set(row.taskIds, off);
    }
    return { tokens, targets, mask, taskIds, T };
  }
}
