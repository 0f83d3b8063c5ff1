#!/usr/bin/env node
import * as fs from "node:fs";

import { extractEmbeddings, InputFormatError, parseRawItems } from "./extract.js";
import { DEFAULT_DIM } from "./types.js";

const USAGE = `usage: embed-util extract --in raw_items.tsv --out DIR [--word-drop 0.15] [--seed 0] [--dim ${DEFAULT_DIM}]

Converts a raw item-text TSV (header: domain, token, title, categories,
brand, description) into embeddings.bin + item_index.tsv, with one
original and one word-drop-augmented row per item.`;

interface Args {
  input: string;
  out: string;
  wordDrop: number;
  seed: number;
  dim: number;
}

export function parseArgs(argv: string[]): Args {
  if (argv[0] !== "extract") {
    throw new InputFormatError(`unknown command ${JSON.stringify(argv[0] ?? "")}`);
  }
  const opts: Partial<Args> = { wordDrop: 0.15, seed: 0, dim: DEFAULT_DIM };
  for (let i = 1; i < argv.length; i += 2) {
    const flag = argv[i];
    const value = argv[i + 1];
    if (value === undefined) throw new InputFormatError(`missing value for ${flag}`);
    switch (flag) {
      case "--in":
        opts.input = value;
        break;
      case "--out":
        opts.out = value;
        break;
      case "--word-drop":
        opts.wordDrop = Number(value);
        break;
      case "--seed":
        opts.seed = Number(value);
        break;
      case "--dim":
        opts.dim = Number(value);
        break;
      default:
        throw new InputFormatError(`unknown flag ${flag}`);
    }
  }
  if (!opts.input || !opts.out) {
    throw new InputFormatError("--in and --out are required");
  }
  if (!Number.isFinite(opts.wordDrop!) || opts.wordDrop! < 0 || opts.wordDrop! >= 1) {
    throw new InputFormatError("--word-drop must be in [0, 1)");
  }
  if (!Number.isInteger(opts.seed!)) throw new InputFormatError("--seed must be an integer");
  if (!Number.isInteger(opts.dim!) || opts.dim! < 1) {
    throw new InputFormatError("--dim must be a positive integer");
  }
  return opts as Args;
}

export function main(argv: string[]): number {
  let args: Args;
  try {
    args = parseArgs(argv);
  } catch (e) {
    console.error(`embed-util: ${(e as Error).message}`);
    console.error(USAGE);
    return 2;
  }
  let raw: string;
  try {
    raw = fs.readFileSync(args.input, "utf-8");
  } catch (e) {
    console.error(`embed-util: cannot read ${args.input}: ${(e as Error).message}`);
    return 2;
  }
  try {
    const rows = parseRawItems(raw);
    const result = extractEmbeddings(rows, args.out, {
      wordDropRatio: args.wordDrop,
      seed: args.seed,
      dim: args.dim,
    });
    console.error(
      `embed-util: wrote ${result.kept} items (dim ${args.dim}) to ${args.out}` +
        (result.skipped.length ? `; skipped ${result.skipped.length} empty` : ""),
    );
    if (result.kept === 0) {
      console.error("embed-util: no items with text; nothing written worth loading");
      return 1;
    }
    return 0;
  } catch (e) {
    if (e instanceof InputFormatError) {
      console.error(`embed-util: ${args.input}: ${e.message}`);
      return 2;
    }
    throw e;
  }
}

if (process.argv[1] && process.argv[1].endsWith("cli.js")) {
  process.exit(main(process.argv.slice(2)));
}
