"""Classifier oracles: anything that maps an example to a probability vector.

Three interchangeable kinds sit behind one duck-typed surface:

* ``BuiltinOracle`` — a softmax MLP trained here with plain mini-batch SGD;
* ``TableOracle`` — precomputed probability rows looked up by example id;
* ``ExternalOracle`` — a child process answering line-delimited JSON queries,
  which is how real convolutional models plug in.

Every kind returns vectors that pass :func:`validate_probability_vector`.
"""
from __future__ import annotations

import csv
import json
import queue
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Dataset, Example
from .errors import (
    CorruptFile,
    DivergedLoss,
    InvalidVector,
    MissingId,
    ProbabilityVectorError,
    ProcessSpawnFailure,
    ProtocolViolation,
    QueryTimeout,
    ShapeMismatch,
    UnsupportedQuery,
)
from .metrics import ProbabilityVector, validate_probability_vector


@dataclass(frozen=True)
class MlpConfig:
    """Fully-connected layer widths, input first, class count last."""

    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ShapeMismatch("need at least input and output layer sizes")
        if any(s < 1 for s in self.layer_sizes):
            raise ShapeMismatch(f"layer sizes must be positive: {self.layer_sizes}")


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float
    batch_size: int
    epochs: int
    seed: int

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("learning_rate and batch_size must be positive, epochs >= 0")


# Hyperparameter presets for the standard benchmark image sets.
_PRESETS = {
    "mnist": (0.1, 512, 20),
    "fashion-mnist": (0.1, 512, 20),
    "cifar10": (0.01, 512, 60),
    "cifar100": (0.01, 512, 60),
}


def training_preset(name: str, seed: int = 0, epochs: int | None = None) -> TrainingConfig:
    """Named preset; ``epochs`` can be reduced for desk-scale runs."""
    key = name.lower().replace("_", "-")
    if key not in _PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(_PRESETS)}")
    lr, batch, preset_epochs = _PRESETS[key]
    return TrainingConfig(lr, batch, preset_epochs if epochs is None else epochs, seed)


@dataclass
class ModelWeights:
    weights: list[np.ndarray]  # per layer, (fan_in, fan_out)
    biases: list[np.ndarray]  # per layer, (fan_out,)
    seed: int = 0
    final_loss: float = float("nan")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[1]


def init_weights(mlp: MlpConfig, seed: int) -> ModelWeights:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, fixed by ``seed``."""
    rng = np.random.Generator(np.random.PCG64(seed))
    weights, biases = [], []
    for fan_in, fan_out in zip(mlp.layer_sizes[:-1], mlp.layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelWeights(weights=weights, biases=biases, seed=seed)


def _forward(w: ModelWeights, x: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Pre-activations and activations for a batch; ReLU on hidden layers."""
    pre, act = [], [x]
    for i, (W, b) in enumerate(zip(w.weights, w.biases)):
        z = act[-1] @ W + b
        pre.append(z)
        act.append(np.maximum(z, 0.0) if i < len(w.weights) - 1 else z)
    return pre, act


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def mean_loss(w: ModelWeights, x: np.ndarray, y: np.ndarray) -> float:
    """Mean cross-entropy, computed from log-softmax so log(0) never appears."""
    _, act = _forward(w, x)
    log_probs = _log_softmax(act[-1])
    return float(-log_probs[np.arange(len(y)), y].mean())


def loss_and_gradients(
    w: ModelWeights, x: np.ndarray, y: np.ndarray
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean cross-entropy plus its gradients for every weight and bias."""
    pre, act = _forward(w, x)
    log_probs = _log_softmax(act[-1])
    loss = float(-log_probs[np.arange(len(y)), y].mean())

    batch = len(y)
    delta = np.exp(log_probs)
    delta[np.arange(batch), y] -= 1.0
    delta /= batch

    grad_w: list[np.ndarray] = [np.empty(0)] * len(w.weights)
    grad_b: list[np.ndarray] = [np.empty(0)] * len(w.biases)
    for layer in range(len(w.weights) - 1, -1, -1):
        grad_w[layer] = act[layer].T @ delta
        grad_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ w.weights[layer].T) * (pre[layer - 1] > 0.0)
    return loss, grad_w, grad_b


def train_mlp(train: Dataset, mlp: MlpConfig, tc: TrainingConfig) -> ModelWeights:
    """Mini-batch SGD on cross-entropy; fully determined by ``tc.seed``.

    The same seed drives initialization and the per-epoch shuffle, so
    identical inputs give bitwise-identical weights. ``final_loss`` is the
    mean loss over the last epoch (or the initial loss when epochs == 0).
    """
    if len(train) == 0:
        raise ShapeMismatch("cannot train on an empty dataset")
    h, w_, c = train.shape
    if mlp.layer_sizes[0] != h * w_ * c:
        raise ShapeMismatch(f"input layer {mlp.layer_sizes[0]} != {h}*{w_}*{c}")
    if mlp.layer_sizes[-1] != train.n_classes:
        raise ShapeMismatch(f"output layer {mlp.layer_sizes[-1]} != {train.n_classes} classes")

    weights = init_weights(mlp, tc.seed)
    x = train.pixels.reshape(len(train), -1)
    y = train.labels

    if tc.epochs == 0:
        weights.final_loss = mean_loss(weights, x, y)
        return weights

    shuffle_rng = np.random.Generator(np.random.PCG64(tc.seed))
    epoch_mean = float("nan")
    for _ in range(tc.epochs):
        order = shuffle_rng.permutation(len(train))
        batch_losses = []
        for start in range(0, len(train), tc.batch_size):
            idx = order[start : start + tc.batch_size]
            loss, grad_w, grad_b = loss_and_gradients(weights, x[idx], y[idx])
            if not np.isfinite(loss):
                raise DivergedLoss(f"training loss became {loss}")
            for layer in range(len(weights.weights)):
                weights.weights[layer] -= tc.learning_rate * grad_w[layer]
                weights.biases[layer] -= tc.learning_rate * grad_b[layer]
            batch_losses.append(loss)
        epoch_mean = float(np.mean(batch_losses))
    weights.final_loss = epoch_mean
    return weights


def predict(w: ModelWeights, pixels: np.ndarray) -> ProbabilityVector:
    """Forward pass for one example; softmax uses max-subtraction."""
    x = np.asarray(pixels, dtype=np.float64).reshape(-1)
    if x.shape[0] != w.layer_sizes[0]:
        raise ShapeMismatch(f"{x.shape[0]} inputs, model expects {w.layer_sizes[0]}")
    for i, (W, b) in enumerate(zip(w.weights, w.biases)):
        x = x @ W + b
        if i < len(w.weights) - 1:
            x = np.maximum(x, 0.0)
    x = x - x.max()
    exp = np.exp(x)
    return validate_probability_vector(exp / exp.sum())


def predict_batch(w: ModelWeights, examples: Sequence) -> list[ProbabilityVector]:
    """Elementwise :func:`predict` over examples or raw pixel arrays."""
    return [predict(w, e.pixels if isinstance(e, Example) else e) for e in examples]


def accuracy(w: ModelWeights, ds: Dataset) -> float:
    if len(ds) == 0:
        raise ShapeMismatch("empty dataset")
    hits = sum(
        int(np.argmax(predict(w, ds.pixels[i]).values)) == int(ds.labels[i])
        for i in range(len(ds))
    )
    return hits / len(ds)


# --- weight persistence -------------------------------------------------------

def save_weights(w: ModelWeights, path: str | Path) -> None:
    """JSON layer dump; float repr round-trips, so reloads predict identically."""
    doc = {
        "layer_sizes": list(w.layer_sizes),
        "layers": [
            {"weights": W.tolist(), "bias": b.tolist()}
            for W, b in zip(w.weights, w.biases)
        ],
        "seed": w.seed,
        "final_loss": w.final_loss,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_weights(path: str | Path) -> ModelWeights:
    try:
        doc = json.loads(Path(path).read_text())
        sizes = [int(s) for s in doc["layer_sizes"]]
        layers = doc["layers"]
        weights = [np.asarray(layer["weights"], dtype=np.float64) for layer in layers]
        biases = [np.asarray(layer["bias"], dtype=np.float64) for layer in layers]
        seed = int(doc["seed"])
        final_loss = float(doc["final_loss"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    if len(weights) != len(sizes) - 1:
        raise ShapeMismatch(f"{path}: {len(weights)} layers for {len(sizes)} sizes")
    for i, (W, b) in enumerate(zip(weights, biases)):
        if W.ndim != 2 or W.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
            raise ShapeMismatch(f"{path}: layer {i} has shape {W.shape}, expected "
                                f"({sizes[i]}, {sizes[i + 1]})")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise CorruptFile(f"{path}: non-finite values in layer {i}")
    return ModelWeights(weights=weights, biases=biases, seed=seed, final_loss=final_loss)


# --- oracle kinds ---------------------------------------------------------------

class BuiltinOracle:
    """Pixel-query oracle over trained MLP weights."""

    kind = "builtin"

    def __init__(self, weights: ModelWeights):
        self.weights = weights

    @property
    def n_classes(self) -> int:
        return self.weights.n_classes

    def predict(self, pixels: np.ndarray) -> ProbabilityVector:
        return predict(self.weights, pixels)

    def close(self) -> None:
        pass


class TableOracle:
    """Lookup oracle over ``example_id,p_0,...,p_{n-1}`` rows.

    Lets scoring run with no model at all; pixel queries are unsupported, so
    attacks cannot use it.
    """

    kind = "table"

    def __init__(self, path: str | Path):
        self._rows: dict[int, ProbabilityVector] = {}
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row:
                    continue
                try:
                    example_id = int(row[0])
                    probs = [float(cell) for cell in row[1:]]
                except ValueError as exc:
                    raise InvalidVector(f"{path}:{lineno}: {exc}") from exc
                try:
                    self._rows[example_id] = validate_probability_vector(probs)
                except ProbabilityVectorError as exc:
                    raise InvalidVector(f"{path}:{lineno}: {exc}") from exc

    def __len__(self) -> int:
        return len(self._rows)

    def predict_for_id(self, example_id: int) -> ProbabilityVector:
        try:
            return self._rows[example_id]
        except KeyError:
            raise MissingId(f"no stored vector for example {example_id}") from None

    def predict(self, pixels: np.ndarray) -> ProbabilityVector:
        raise UnsupportedQuery("table oracles only answer id lookups, not pixel queries")

    def close(self) -> None:
        pass


class ExternalOracle:
    """Child process speaking one JSON object per line over stdin/stdout.

    Requests are ``{"id": i, "shape": [h, w, c], "pixels": [...]}`` with ids
    counting up from 0; the child must echo the id in its response and flush
    after every line. One instance serializes its requests; run a pool of
    processes for parallel querying.
    """

    kind = "external"

    def __init__(self, command: Sequence[str], timeout: float = 30.0):
        self.timeout = timeout
        self._next_id = 0
        self._lock = threading.Lock()
        try:
            self._proc = subprocess.Popen(
                list(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise ProcessSpawnFailure(f"could not start {command!r}: {exc}") from exc
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self) -> None:
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)  # EOF marker

    def predict(self, pixels: np.ndarray) -> ProbabilityVector:
        arr = np.asarray(pixels, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(arr.shape[0], 1, 1)
        request_shape = list(arr.shape)
        with self._lock:
            request_id = self._next_id
            self._next_id += 1
            payload = json.dumps(
                {"id": request_id, "shape": request_shape, "pixels": arr.reshape(-1).tolist()}
            )
            try:
                self._proc.stdin.write(payload + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, ValueError) as exc:
                raise ProtocolViolation(f"child closed its input: {exc}") from exc
            try:
                line = self._lines.get(timeout=self.timeout)
            except queue.Empty:
                raise QueryTimeout(f"no response within {self.timeout}s") from None
        if line is None:
            raise ProtocolViolation("child closed stdout before responding")
        try:
            response = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolViolation(f"response is not JSON: {line[:200]!r}") from exc
        if not isinstance(response, dict):
            raise ProtocolViolation(f"response is not an object: {line[:200]!r}")
        if response.get("id") != request_id:
            raise ProtocolViolation(
                f"response id {response.get('id')!r} does not echo request id {request_id}"
            )
        if "error" in response:
            raise ProtocolViolation(f"child reported error: {response['error']}")
        try:
            return validate_probability_vector(response.get("probs", []))
        except ProbabilityVectorError as exc:
            raise ProtocolViolation(f"child returned an invalid vector: {exc}") from exc

    def close(self) -> None:
        if self._proc.stdin and not self._proc.stdin.closed:
            try:
                self._proc.stdin.close()
            except BrokenPipeError:
                pass
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()

    def __enter__(self) -> "ExternalOracle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def probabilities_for_example(oracle, ex: Example) -> ProbabilityVector:
    """Dispatch an example to whatever query the oracle kind supports."""
    if isinstance(oracle, TableOracle):
        return oracle.predict_for_id(ex.id)
    return oracle.predict(ex.pixels)
