/**
 * Line-JSON oracle protocol: one JSON object per line on stdin/stdout.
 *
 * Request:  {"id": <int>, "shape": [h, w, c], "pixels": [<reals in [0,1], row-major>]}
 * Response: {"id": <int>, "probs": [<n reals>]}
 * Errors:   {"id": <int or -1>, "error": "<message>"} — the process keeps serving.
 */

export interface OracleRequest {
  id: number;
  shape: number[];
  pixels: number[];
}

export interface OracleResponse {
  id: number;
  probs: number[];
}

export interface OracleErrorResponse {
  id: number;
  error: string;
}

export class RequestError extends Error {
  /** id to echo back in the error response; -1 when the line had none. */
  readonly requestId: number;

  constructor(message: string, requestId: number) {
    super(message);
    this.requestId = requestId;
  }
}

export function parseRequest(line: string): OracleRequest {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch {
    throw new RequestError("request line is not valid JSON", -1);
  }
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    throw new RequestError("request must be a JSON object", -1);
  }
  const record = raw as Record<string, unknown>;
  const id = typeof record.id === "number" && Number.isInteger(record.id) ? record.id : null;
  if (id === null) {
    throw new RequestError("request is missing an integer id", -1);
  }
  const shape = record.shape;
  if (!Array.isArray(shape) || shape.length === 0 || !shape.every((d) => Number.isInteger(d) && (d as number) > 0)) {
    throw new RequestError("request shape must be a list of positive integers", id);
  }
  const pixels = record.pixels;
  if (!Array.isArray(pixels) || !pixels.every((p) => typeof p === "number" && Number.isFinite(p))) {
    throw new RequestError("request pixels must be a list of finite numbers", id);
  }
  const expected = (shape as number[]).reduce((acc, d) => acc * d, 1);
  if (pixels.length !== expected) {
    throw new RequestError(`got ${pixels.length} pixels, expected ${expected}`, id);
  }
  return { id, shape: shape as number[], pixels: pixels as number[] };
}

export function serialize(response: OracleResponse | OracleErrorResponse): string {
  return JSON.stringify(response) + "\n";
}
