import * as fs from "fs";

import { ModelSpec } from "./model";

export interface BridgeConfig {
  model: ModelSpec;
  shape: [number, number, number];
  classes: number;
  /** The wire contract always carries [0,1] row-major pixels; a model that
   * wants anything else must adapt inside its loader. Recorded here so a
   * config is explicit about what the hosted model was given. */
  expectsUnitPixels: boolean;
}

export function loadBridgeConfig(path: string): BridgeConfig {
  let raw: Record<string, unknown>;
  try {
    raw = JSON.parse(fs.readFileSync(path, "utf8")) as Record<string, unknown>;
  } catch (err) {
    throw new Error(`cannot read config ${path}: ${(err as Error).message}`);
  }
  const model = raw.model as ModelSpec | undefined;
  if (!model || typeof model.kind !== "string") {
    throw new Error(`${path}: "model" must be an object with a "kind"`);
  }
  const shape = raw.shape;
  if (!Array.isArray(shape) || shape.length !== 3 ||
      !shape.every((d) => Number.isInteger(d) && (d as number) > 0)) {
    throw new Error(`${path}: "shape" must be [height, width, channels]`);
  }
  const classes = raw.classes;
  if (!Number.isInteger(classes) || (classes as number) < 2) {
    throw new Error(`${path}: "classes" must be an integer >= 2`);
  }
  const expectsUnitPixels = raw.expects_unit_pixels;
  if (expectsUnitPixels !== undefined && expectsUnitPixels !== true) {
    throw new Error(`${path}: only unit-range pixels are supported on the wire`);
  }
  return {
    model,
    shape: shape as [number, number, number],
    classes: classes as number,
    expectsUnitPixels: true,
  };
}
