import * as fs from "node:fs";
import * as path from "node:path";

import {
  encodeEmbeddings,
  encodeIndex,
  IndexEntry,
  writeFileAtomic,
} from "./binary.js";
import { encodeText } from "./encoder.js";
import { itemStream } from "./rng.js";
import { buildItemText, tokenize, wordDrop } from "./text.js";
import { INPUT_COLUMNS, RawItemRow } from "./types.js";

export class InputFormatError extends Error {}

/** Parse the raw-items TSV; header must match INPUT_COLUMNS exactly. */
export function parseRawItems(text: string): RawItemRow[] {
  const lines = text.split("\n");
  if (lines.length === 0 || lines[0].trim() !== INPUT_COLUMNS.join("\t")) {
    throw new InputFormatError(
      `bad header: expected ${JSON.stringify(INPUT_COLUMNS.join("\t"))}`,
    );
  }
  const rows: RawItemRow[] = [];
  const seen = new Set<string>();
  for (let i = 1; i < lines.length; i++) {
    const lineno = i + 1;
    const line = lines[i];
    if (line.trim() === "") continue;
    const parts = line.split("\t");
    if (parts.length !== INPUT_COLUMNS.length) {
      throw new InputFormatError(
        `line ${lineno}: expected ${INPUT_COLUMNS.length} fields, got ${parts.length}`,
      );
    }
    const [domain, token, title, categories, brand, description] = parts;
    if (domain.trim() === "" || token.trim() === "") {
      throw new InputFormatError(`line ${lineno}: empty domain or token`);
    }
    const key = `${domain}\t${token}`;
    if (seen.has(key)) {
      throw new InputFormatError(`line ${lineno}: duplicate item (${domain}, ${token})`);
    }
    seen.add(key);
    rows.push({ domain, token, title, categories, brand, description });
  }
  return rows;
}

export interface ExtractResult {
  kept: number;
  skipped: Array<{ domain: string; token: string }>;
}

export interface ExtractOptions {
  wordDropRatio: number;
  seed: number;
  dim: number;
  warn?: (message: string) => void;
}

/**
 * Encode every item into two embedding rows (original text, word-dropped
 * text) and write embeddings.bin + item_index.tsv under `outDir`.
 */
export function extractEmbeddings(
  rows: RawItemRow[],
  outDir: string,
  opts: ExtractOptions,
): ExtractResult {
  const warn = opts.warn ?? ((m) => console.error(`warning: ${m}`));
  const vectors: Float32Array[] = [];
  const entries: IndexEntry[] = [];
  const skipped: Array<{ domain: string; token: string }> = [];
  for (const row of rows) {
    const text = buildItemText(row);
    if (text === null) {
      warn(`item (${row.domain}, ${row.token}) has no text; skipped`);
      skipped.push({ domain: row.domain, token: row.token });
      continue;
    }
    const tokens = tokenize(text);
    const stream = itemStream(opts.seed, row.domain, row.token);
    const augTokens = wordDrop(tokens, opts.wordDropRatio, () => stream.nextFloat());
    entries.push({
      domain: row.domain,
      token: row.token,
      row: vectors.length,
      augRow: vectors.length + 1,
    });
    vectors.push(encodeText(tokens, opts.dim));
    vectors.push(encodeText(augTokens, opts.dim));
  }
  fs.mkdirSync(outDir, { recursive: true });
  writeFileAtomic(path.join(outDir, "embeddings.bin"), encodeEmbeddings(vectors, opts.dim));
  writeFileAtomic(path.join(outDir, "item_index.tsv"), encodeIndex(entries));
  return { kept: entries.length, skipped };
}
