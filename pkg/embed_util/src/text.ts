import { MAX_TOKENS, RawItemRow } from "./types.js";

/** Lowercased whitespace tokens; the encoder's unit of truncation and drop. */
export function tokenize(text: string): string[] {
  return text.toLowerCase().split(/\s+/).filter((t) => t.length > 0);
}

/**
 * Assemble one item's text. Catalog-style rows concatenate title,
 * categories, and brand in that order; rows carrying only a description
 * use it alone. Returns null (caller skips + warns) when every field is
 * empty. The result is truncated to MAX_TOKENS tokens.
 */
export function buildItemText(row: RawItemRow): string | null {
  const catalog = [row.title, row.categories, row.brand]
    .map((f) => f.trim())
    .filter((f) => f.length > 0);
  const text = catalog.length > 0 ? catalog.join(" ") : row.description.trim();
  if (text.length === 0) return null;
  const tokens = tokenize(text);
  if (tokens.length === 0) return null;
  return tokens.slice(0, MAX_TOKENS).join(" ");
}

/**
 * Word drop: each token independently removed with probability `ratio`;
 * at least one token always survives.
 */
export function wordDrop(
  tokens: string[],
  ratio: number,
  draw: () => number,
): string[] {
  if (ratio < 0 || ratio >= 1) {
    throw new RangeError(`word-drop ratio must be in [0, 1), got ${ratio}`);
  }
  if (ratio === 0) return tokens.slice();
  const kept: string[] = [];
  const survivorDraws: number[] = [];
  for (const token of tokens) {
    const u = draw();
    if (u >= ratio) {
      kept.push(token);
    }
    survivorDraws.push(u);
  }
  if (kept.length === 0 && tokens.length > 0) {
    // Keep the token whose draw came closest to surviving.
    let best = 0;
    for (let i = 1; i < tokens.length; i++) {
      if (survivorDraws[i] > survivorDraws[best]) best = i;
    }
    kept.push(tokens[best]);
  }
  return kept;
}
