/**
 * Request loop: validate the hosted model with a dummy forward pass, then
 * answer one request per line until stdin closes. Responses are flushed per
 * line and always echo the request id; malformed requests produce an error
 * object instead of killing the process.
 */
import * as readline from "node:readline";

import { BridgeConfig } from "./config";
import { BridgeModel, loadModel } from "./model";
import { parseRequest, RequestError, serialize } from "./protocol";

export class StartupError extends Error {}

const SUM_TOLERANCE = 1e-4;

export function validateModel(config: BridgeConfig): BridgeModel {
  const model = loadModel(config.model, config.classes);
  const [h, w, c] = config.shape;
  const inputSize = h * w * c;
  if (model.inputSize !== null && model.inputSize !== inputSize) {
    throw new StartupError(
      `declared shape ${h}x${w}x${c} (${inputSize} values) does not match the ` +
      `model input size ${model.inputSize}`,
    );
  }
  let probe: number[];
  try {
    probe = model.predict(new Array(inputSize).fill(0));
  } catch (err) {
    throw new StartupError(`dummy forward pass failed: ${(err as Error).message}`);
  }
  if (probe.length !== config.classes) {
    throw new StartupError(
      `model returned ${probe.length} probabilities, config declares ${config.classes}`,
    );
  }
  const total = probe.reduce((acc, v) => acc + v, 0);
  if (!Number.isFinite(total) || Math.abs(total - 1.0) > SUM_TOLERANCE) {
    throw new StartupError(`dummy forward pass sums to ${total}, not 1`);
  }
  return model;
}

export function answerLine(line: string, model: BridgeModel, expectedPixels: number): string {
  let request;
  try {
    request = parseRequest(line);
  } catch (err) {
    if (err instanceof RequestError) {
      return serialize({ id: err.requestId, error: err.message });
    }
    throw err;
  }
  if (request.pixels.length !== expectedPixels) {
    return serialize({
      id: request.id,
      error: `got ${request.pixels.length} pixels, bridge serves ${expectedPixels}`,
    });
  }
  try {
    return serialize({ id: request.id, probs: model.predict(request.pixels) });
  } catch (err) {
    return serialize({ id: request.id, error: (err as Error).message });
  }
}

export function serve(config: BridgeConfig): Promise<void> {
  const model = validateModel(config);
  const [h, w, c] = config.shape;
  const expectedPixels = h * w * c;
  return new Promise((resolve) => {
    const lines = readline.createInterface({ input: process.stdin, terminal: false });
    lines.on("line", (line: string) => {
      if (line.trim() === "") return;
      process.stdout.write(answerLine(line, model, expectedPixels));
    });
    lines.on("close", () => resolve());
  });
}
