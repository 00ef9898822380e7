/**
 * Seeded PRNG (mulberry32) with Box-Muller gaussians.
 *
 * Every stochastic component takes its own Rng so training, initialization,
 * and sampling stay reproducible and independent of each other.
 */

export class Rng {
  private s: number;
  private spare: number | null = null;

  constructor(seed: number) {
    this.s = seed | 0;
  }

  next(): number {
    this.s = (this.s + 0x6d2b79f5) | 0;
    let t = Math.imul(this.s ^ (this.s >>> 15), 1 | this.s);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  }

  gauss(mean = 0, std = 1): number {
    if (this.spare !== null) {
      const z = this.spare;
      this.spare = null;
      return mean + std * z;
    }
    let u = 0;
    while (u === 0) u = this.next();
    const v = this.next();
    const r = Math.sqrt(-2 * Math.log(u));
    this.spare = r * Math.sin(2 * Math.PI * v);
    return mean + std * r * Math.cos(2 * Math.PI * v);
  }

  int(bound: number): number {
    return Math.floor(this.next() * bound);
  }

  /** Derived stream: deterministic function of (seed, label), independent draws. */
  derive(label: number): Rng {
    return new Rng((this.s ^ Math.imul(label + 0x9e3779b9, 0x85ebca6b)) | 0);
  }
}

/** Multinomial draw from a probability vector (assumed to sum to ~1). */
export function categorical(probs: Float64Array, rng: Rng): number {
  let r = rng.next();
  for (let i = 0; i < probs.length; i++) {
    r -= probs[i];
    if (r <= 0) return i;
  }
  return probs.length - 1;
}
