import assert from "node:assert/strict";
import * as fs from "fs";
import * as os from "os";
import * as path from "path";
import { test } from "node:test";

import { loadBridgeConfig } from "../src/config";

function write(doc: unknown): string {
  const file = path.join(fs.mkdtempSync(path.join(os.tmpdir(), "bridge-")), "config.json");
  fs.writeFileSync(file, JSON.stringify(doc));
  return file;
}

test("loads a valid config", () => {
  const config = loadBridgeConfig(
    write({ model: { kind: "stub-uniform" }, shape: [4, 4, 1], classes: 10 }),
  );
  assert.equal(config.classes, 10);
  assert.deepEqual(config.shape, [4, 4, 1]);
  assert.equal(config.expectsUnitPixels, true);
});

test("rejects a missing model section", () => {
  assert.throws(() => loadBridgeConfig(write({ shape: [4, 4, 1], classes: 10 })));
});

test("rejects a malformed shape", () => {
  assert.throws(
    () => loadBridgeConfig(write({ model: { kind: "stub-uniform" }, shape: [4, 4], classes: 10 })),
  );
});

test("rejects fewer than two classes", () => {
  assert.throws(
    () => loadBridgeConfig(write({ model: { kind: "stub-uniform" }, shape: [4, 4, 1], classes: 1 })),
  );
});

test("rejects non-unit pixel contracts", () => {
  assert.throws(
    () => loadBridgeConfig(write({
      model: { kind: "stub-uniform" }, shape: [4, 4, 1], classes: 10,
      expects_unit_pixels: false,
    })),
  );
});
