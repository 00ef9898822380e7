/**
 * Checkpoints: a JSON header (config + parameter layout) next to a raw
 * little-endian Float64 blob with all parameters concatenated in layout
 * order. The same format carries exported attention tensors.
 */

import { readFileSync, writeFileSync } from "node:fs";

import { Model, ModelConfig } from "./model.js";
import { Rng } from "./rng.js";

export function saveCheckpoint(model: Model, headerPath: string, blobPath: string): void {
  let total = 0;
  const layout = model.params.map((p) => {
    const entry = { name: p.name, offset: total, length: p.w.length };
    total += p.w.length;
    return entry;
  });
  const blob = new Float64Array(total);
  for (const [i, p] of model.params.entries()) blob.set(p.w, layout[i].offset);
  writeFileSync(
    headerPath,
    JSON.stringify({ format: "perclang-trainer/checkpoint/v1", config: model.config, layout }, null, 2),
  );
  writeFileSync(blobPath, Buffer.from(blob.buffer, 0, total * 8));
}

export function loadCheckpoint(headerPath: string, blobPath: string): Model {
  const header = JSON.parse(readFileSync(headerPath, "utf-8"));
  if (header.format !== "perclang-trainer/checkpoint/v1") {
    throw new Error(`unsupported checkpoint format ${header.format}`);
  }
  const config = header.config as ModelConfig;
  const model = new Model(config, new Rng(0));
  const buf = readFileSync(blobPath);
  const blob = new Float64Array(buf.buffer, buf.byteOffset, buf.byteLength / 8);
  const byName = new Map(model.params.map((p) => [p.name, p]));
  for (const entry of header.layout) {
    const p = byName.get(entry.name);
    if (!p || p.w.length !== entry.length) {
      throw new Error(`checkpoint layout mismatch at ${entry.name}`);
    }
    p.w.set(blob.subarray(entry.offset, entry.offset + entry.length));
  }
  return model;
}
