/**
 * Model loaders. A model maps a flat [0,1] pixel array to a softmax vector.
 *
 * Two loaders ship here: a uniform stub for protocol testing, and a reader
 * for the toolkit's JSON MLP weight files (relu hidden layers, softmax
 * output), so a natively trained network can be served without retraining.
 * User-supplied models plug in by satisfying the same interface.
 */
import * as fs from "fs";

export interface BridgeModel {
  readonly classes: number;
  readonly inputSize: number | null; // null: accepts any length
  predict(pixels: number[]): number[];
}

export interface ModelSpec {
  kind: string;
  weights?: string;
}

export function uniformStubModel(classes: number): BridgeModel {
  if (!Number.isInteger(classes) || classes < 2) {
    throw new Error(`stub model needs an integer class count >= 2, got ${classes}`);
  }
  const probs = new Array(classes).fill(1.0 / classes);
  return {
    classes,
    inputSize: null,
    predict: () => probs.slice(),
  };
}

interface MlpLayer {
  weights: number[][];
  bias: number[];
}

interface MlpWeightsDoc {
  layer_sizes: number[];
  layers: MlpLayer[];
}

function softmax(logits: number[]): number[] {
  const max = Math.max(...logits);
  const exps = logits.map((v) => Math.exp(v - max));
  const total = exps.reduce((acc, v) => acc + v, 0);
  return exps.map((v) => v / total);
}

export function loadMlpJsonModel(path: string): BridgeModel {
  let doc: MlpWeightsDoc;
  try {
    doc = JSON.parse(fs.readFileSync(path, "utf8")) as MlpWeightsDoc;
  } catch (err) {
    throw new Error(`cannot read weights file ${path}: ${(err as Error).message}`);
  }
  const sizes = doc.layer_sizes;
  const layers = doc.layers;
  if (!Array.isArray(sizes) || !Array.isArray(layers) || layers.length !== sizes.length - 1) {
    throw new Error(`${path}: inconsistent layer structure`);
  }
  for (let i = 0; i < layers.length; i++) {
    const { weights, bias } = layers[i];
    if (weights.length !== sizes[i] || bias.length !== sizes[i + 1] ||
        weights.some((row) => row.length !== sizes[i + 1])) {
      throw new Error(`${path}: layer ${i} shapes do not match layer_sizes`);
    }
  }
  const inputSize = sizes[0];
  const classes = sizes[sizes.length - 1];

  const predict = (pixels: number[]): number[] => {
    if (pixels.length !== inputSize) {
      throw new Error(`model expects ${inputSize} inputs, got ${pixels.length}`);
    }
    let activation = pixels;
    for (let layer = 0; layer < layers.length; layer++) {
      const { weights, bias } = layers[layer];
      const width = bias.length;
      const next = bias.slice();
      for (let i = 0; i < activation.length; i++) {
        const value = activation[i];
        if (value === 0) continue;
        const row = weights[i];
        for (let j = 0; j < width; j++) {
          next[j] += value * row[j];
        }
      }
      if (layer < layers.length - 1) {
        for (let j = 0; j < width; j++) {
          if (next[j] < 0) next[j] = 0;
        }
      }
      activation = next;
    }
    return softmax(activation);
  };

  return { classes, inputSize, predict };
}

export function loadModel(spec: ModelSpec, classes: number): BridgeModel {
  switch (spec.kind) {
    case "stub-uniform":
      return uniformStubModel(classes);
    case "mlp-json":
      if (!spec.weights) {
        throw new Error("mlp-json model needs a weights path");
      }
      return loadMlpJsonModel(spec.weights);
    default:
      throw new Error(`unknown model kind ${JSON.stringify(spec.kind)}`);
  }
}
