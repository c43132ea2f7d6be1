import assert from "node:assert/strict";
import { test } from "node:test";

import { parseRequest, RequestError, serialize } from "../src/protocol";

test("parses a well-formed request", () => {
  const request = parseRequest('{"id": 3, "shape": [2, 2, 1], "pixels": [0, 0.5, 1, 0.25]}');
  assert.equal(request.id, 3);
  assert.deepEqual(request.shape, [2, 2, 1]);
  assert.equal(request.pixels.length, 4);
});

test("rejects non-JSON with id -1", () => {
  assert.throws(
    () => parseRequest("not json"),
    (err: unknown) => err instanceof RequestError && err.requestId === -1,
  );
});

test("rejects missing id with id -1", () => {
  assert.throws(
    () => parseRequest('{"shape": [1], "pixels": [0]}'),
    (err: unknown) => err instanceof RequestError && err.requestId === -1,
  );
});

test("echoes the id when shape and pixels disagree", () => {
  assert.throws(
    () => parseRequest('{"id": 9, "shape": [2, 2, 1], "pixels": [0, 0.5]}'),
    (err: unknown) => err instanceof RequestError && err.requestId === 9,
  );
});

test("rejects non-finite pixels", () => {
  assert.throws(
    () => parseRequest('{"id": 1, "shape": [2], "pixels": [0, null]}'),
    (err: unknown) => err instanceof RequestError && err.requestId === 1,
  );
});

test("serializes one line with trailing newline", () => {
  const line = serialize({ id: 4, probs: [0.5, 0.5] });
  assert.ok(line.endsWith("\n"));
  assert.deepEqual(JSON.parse(line), { id: 4, probs: [0.5, 0.5] });
});
