/**
 * Dense Float64Array kernels for the transformer: matmuls in the three
 * orientations the backward pass needs, plus bias and reduction helpers.
 * Row-major throughout. Inner loops are blocked over the reduction dimension
 * and unrolled so V8 keeps accumulators in registers; the layouts matter
 * more than elegance here.
 */

export function zeros(n: number): Float64Array {
  return new Float64Array(n);
}

/** out += A[M,K] @ B[K,N] */
export function mm(
  A: Float64Array, B: Float64Array, out: Float64Array,
  M: number, K: number, N: number,
): void {
  const K4 = K - (K % 4);
  for (let i = 0; i < M; i++) {
    const ai = i * K;
    const oi = i * N;
    let k = 0;
    for (; k < K4; k += 4) {
      const a0 = A[ai + k];
      const a1 = A[ai + k + 1];
      const a2 = A[ai + k + 2];
      const a3 = A[ai + k + 3];
      const b0 = k * N;
      const b1 = b0 + N;
      const b2 = b1 + N;
      const b3 = b2 + N;
      for (let j = 0; j < N; j++) {
        out[oi + j] += a0 * B[b0 + j] + a1 * B[b1 + j] + a2 * B[b2 + j] + a3 * B[b3 + j];
      }
    }
    for (; k < K; k++) {
      const a = A[ai + k];
      const bk = k * N;
      for (let j = 0; j < N; j++) out[oi + j] += a * B[bk + j];
    }
  }
}

/** out += A[M,N] @ B^T where B is [K,N]; result [M,K] */
export function mmBT(
  A: Float64Array, B: Float64Array, out: Float64Array,
  M: number, N: number, K: number,
): void {
  const N4 = N - (N % 4);
  for (let i = 0; i < M; i++) {
    const ai = i * N;
    const oi = i * K;
    for (let k = 0; k < K; k++) {
      const bk = k * N;
      let acc0 = 0;
      let acc1 = 0;
      let j = 0;
      for (; j < N4; j += 4) {
        acc0 += A[ai + j] * B[bk + j] + A[ai + j + 1] * B[bk + j + 1];
        acc1 += A[ai + j + 2] * B[bk + j + 2] + A[ai + j + 3] * B[bk + j + 3];
      }
      for (; j < N; j++) acc0 += A[ai + j] * B[bk + j];
      out[oi + k] += acc0 + acc1;
    }
  }
}

/** out += A^T @ G where A is [M,K], G is [M,N]; result [K,N] */
export function mmAT(
  A: Float64Array, G: Float64Array, out: Float64Array,
  M: number, K: number, N: number,
): void {
  const M4 = M - (M % 4);
  let i = 0;
  for (; i < M4; i += 4) {
    const a0 = i * K;
    const a1 = a0 + K;
    const a2 = a1 + K;
    const a3 = a2 + K;
    const g0 = i * N;
    const g1 = g0 + N;
    const g2 = g1 + N;
    const g3 = g2 + N;
    for (let k = 0; k < K; k++) {
      const v0 = A[a0 + k];
      const v1 = A[a1 + k];
      const v2 = A[a2 + k];
      const v3 = A[a3 + k];
      const ok = k * N;
      for (let j = 0; j < N; j++) {
        out[ok + j] += v0 * G[g0 + j] + v1 * G[g1 + j] + v2 * G[g2 + j] + v3 * G[g3 + j];
      }
    }
  }
  for (; i < M; i++) {
    const ai = i * K;
    const gi = i * N;
    for (let k = 0; k < K; k++) {
      const a = A[ai + k];
      if (a === 0) continue;
      const ok = k * N;
      for (let j = 0; j < N; j++) out[ok + j] += a * G[gi + j];
    }
  }
}

export function addBias(x: Float64Array, b: Float64Array, rows: number, cols: number): void {
  for (let i = 0; i < rows; i++) {
    const xi = i * cols;
    for (let j = 0; j < cols; j++) x[xi + j] += b[j];
  }
}

export function biasGrad(g: Float64Array, out: Float64Array, rows: number, cols: number): void {
  for (let i = 0; i < rows; i++) {
    const gi = i * cols;
    for (let j = 0; j < cols; j++) out[j] += g[gi + j];
  }
}

export function softmaxRow(x: Float64Array, off: number, n: number): void {
  let max = -Infinity;
  for (let i = 0; i < n; i++) if (x[off + i] > max) max = x[off + i];
  let sum = 0;
  for (let i = 0; i < n; i++) {
    const e = Math.exp(x[off + i] - max);
    x[off + i] = e;
    sum += e;
  }
  const inv = 1 / sum;
  for (let i = 0; i < n; i++) x[off + i] *= inv;
}

/** logits[v] = dot(h, W[v,:]) for all v; W row-major [V, C]. */
export function headLogits(
  h: Float64Array, hOff: number, W: Float64Array, out: Float64Array,
  V: number, C: number,
): void {
  const C4 = C - (C % 4);
  for (let v = 0; v < V; v++) {
    const w = v * C;
    let acc0 = 0;
    let acc1 = 0;
    let j = 0;
    for (; j < C4; j += 4) {
      acc0 += h[hOff + j] * W[w + j] + h[hOff + j + 1] * W[w + j + 1];
      acc1 += h[hOff + j + 2] * W[w + j + 2] + h[hOff + j + 3] * W[w + j + 3];
    }
    for (; j < C; j++) acc0 += h[hOff + j] * W[w + j];
    out[v] = acc0 + acc1;
  }
}

/**
 * Backward of the tied head for one row: given d = dlogits (already scaled),
 * dH[hOff:] += d @ W and dW[v,:] += d[v] * h[hOff:].
 */
export function headBackwardRow(
  h: Float64Array, hOff: number, W: Float64Array, d: Float64Array,
  dH: Float64Array, dW: Float64Array, V: number, C: number,
): void {
  const C4 = C - (C % 4);
  for (let v = 0; v < V; v++) {
    const dv = d[v];
    if (dv === 0) continue;
    const w = v * C;
    let j = 0;
    for (; j < C4; j += 4) {
      dH[hOff + j] += dv * W[w + j];
      dW[w + j] += dv * h[hOff + j];
      dH[hOff + j + 1] += dv * W[w + j + 1];
      dW[w + j + 1] += dv * h[hOff + j + 1];
      dH[hOff + j + 2] += dv * W[w + j + 2];
      dW[w + j + 2] += dv * h[hOff + j + 2];
      dH[hOff + j + 3] += dv * W[w + j + 3];
      dW[w + j + 3] += dv * h[hOff + j + 3];
    }
    for (; j < C; j++) {
      dH[hOff + j] += dv * W[w + j];
      dW[w + j] += dv * h[hOff + j];
    }
  }
}
