import * as fs from "node:fs";
import * as path from "node:path";

export const EMB_MAGIC = "UEMB";
export const EMB_VERSION = 1;

/** Encode rows as the UEMB binary: magic, version/rows/dim u32 LE, f32 payload. */
export function encodeEmbeddings(rows: Float32Array[], dim: number): Buffer {
  for (const [i, row] of rows.entries()) {
    if (row.length !== dim) {
      throw new RangeError(`row ${i} has length ${row.length}, expected dim ${dim}`);
    }
  }
  const header = Buffer.alloc(16);
  header.write(EMB_MAGIC, 0, "ascii");
  header.writeUInt32LE(EMB_VERSION, 4);
  header.writeUInt32LE(rows.length, 8);
  header.writeUInt32LE(dim, 12);
  const payload = Buffer.alloc(rows.length * dim * 4);
  rows.forEach((row, r) => {
    for (let i = 0; i < dim; i++) payload.writeFloatLE(row[i], (r * dim + i) * 4);
  });
  return Buffer.concat([header, payload]);
}

export interface IndexEntry {
  domain: string;
  token: string;
  row: number;
  augRow: number;
}

/** Render item_index.tsv: sorted by (domain, token) with a fixed header. */
export function encodeIndex(entries: IndexEntry[]): string {
  const lines = ["domain\ttoken\trow\taug_row"];
  const sorted = [...entries].sort((a, b) =>
    a.domain !== b.domain
      ? a.domain < b.domain ? -1 : 1
      : a.token < b.token ? -1 : a.token > b.token ? 1 : 0,
  );
  for (const e of sorted) {
    lines.push(`${e.domain}\t${e.token}\t${e.row}\t${e.augRow}`);
  }
  return lines.join("\n") + "\n";
}

/** Write a file atomically (temp file + rename) so readers never see a torn write. */
export function writeFileAtomic(target: string, data: Buffer | string): void {
  const tmp = path.join(
    path.dirname(target),
    `.${path.basename(target)}.tmp-${process.pid}`,
  );
  fs.writeFileSync(tmp, data);
  fs.renameSync(tmp, target);
}
