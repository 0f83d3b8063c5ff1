import { fnv1a } from "./rng.js";

/**
 * Deterministic feature-hashing text encoder.
 *
 * Each token (and each adjacent-token bigram, giving mild word-order
 * sensitivity) is hashed to a coordinate and a sign; counts accumulate and
 * the result is L2-normalized. Any encoder producing a fixed-width vector
 * per text satisfies the downstream file contract; this one needs no
 * model weights and is exactly reproducible.
 */
export function encodeText(tokens: string[], dim: number): Float32Array {
  if (dim < 1) throw new RangeError(`dim must be >= 1, got ${dim}`);
  if (tokens.length === 0) throw new RangeError("cannot encode an empty token list");
  const out = new Float32Array(dim);
  const add = (feature: string, weight: number) => {
    const h = fnv1a(feature);
    const idx = h % dim;
    const sign = (h >>> 16) & 1 ? 1 : -1;
    out[idx] += sign * weight;
  };
  for (const token of tokens) add(`u:${token}`, 1);
  for (let i = 0; i + 1 < tokens.length; i++) {
    add(`b:${tokens[i]} ${tokens[i + 1]}`, 0.5);
  }
  let norm = 0;
  for (const x of out) norm += x * x;
  norm = Math.sqrt(norm);
  if (norm === 0) {
    // Fully cancelled hash sums are astronomically unlikely but must not
    // produce a zero row (downstream rejects degenerate vectors).
    out[0] = 1;
    return out;
  }
  for (let i = 0; i < dim; i++) out[i] /= norm;
  return out;
}
