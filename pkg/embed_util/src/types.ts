/** One row of the raw item-text input table. */
export interface RawItemRow {
  domain: string;
  token: string;
  title: string;
  categories: string;
  brand: string;
  description: string;
}

export const INPUT_COLUMNS = [
  "domain",
  "token",
  "title",
  "categories",
  "brand",
  "description",
] as const;

/** Maximum number of tokens kept per item text. */
export const MAX_TOKENS = 512;

/** Default encoder output width. */
export const DEFAULT_DIM = 768;
