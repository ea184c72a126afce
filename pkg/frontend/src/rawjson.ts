// Literal-token extraction from raw service responses.
//
// The metrics panel must show the service's numbers byte-for-byte, and
// Number -> string round trips can reformat (e.g. "150.0" becomes "150",
// "1e-06" becomes "0.000001"). So the panel never renders parsed numbers:
// it renders the exact substrings of the response body.

export const QUALITY_KEYS = [
  "robustness",
  "tir",
  "tar",
  "mean_glucose",
  "hypo_episodes",
  "severe_hypo_episodes",
  "score",
] as const;

export type QualityKey = (typeof QUALITY_KEYS)[number];

/** The flat {"quality": {...}} object sliced out of a raw response body. */
export function qualityObjectSlice(rawBody: string): string {
  const keyAt = rawBody.indexOf('"quality"');
  if (keyAt < 0) throw new Error('response has no "quality" object');
  const open = rawBody.indexOf("{", keyAt);
  const close = rawBody.indexOf("}", open);
  if (open < 0 || close < 0) throw new Error("malformed quality object");
  return rawBody.slice(open, close + 1);
}

/** The exact token serialized for one key inside a flat JSON object. */
export function rawNumberToken(flatObject: string, key: string): string {
  const match = flatObject.match(new RegExp(`"${key}":\\s*([^,}]+)`));
  if (!match || match[1] === undefined) throw new Error(`no token for key ${key}`);
  return match[1].trim();
}

/** Every metrics-panel token, keyed by quality field. */
export function qualityTokens(rawBody: string): Record<QualityKey, string> {
  const flat = qualityObjectSlice(rawBody);
  const out = {} as Record<QualityKey, string>;
  for (const key of QUALITY_KEYS) {
    out[key] = rawNumberToken(flat, key);
  }
  return out;
}
