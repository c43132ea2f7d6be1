"""In-process oracle stubs with scripted behaviour for attack tests."""
from __future__ import annotations

import numpy as np

from noiserank.metrics import ProbabilityVector, validate_probability_vector


def one_hot(n: int, label: int, top: float = 1.0) -> list[float]:
    rest = (1.0 - top) / (n - 1)
    return [top if i == label else rest for i in range(n)]


class ConstantOracle:
    """Ignores pixels entirely; always answers with the same vector."""

    def __init__(self, probs):
        self.vector = validate_probability_vector(probs)
        self.queries = 0

    def predict(self, pixels) -> ProbabilityVector:
        self.queries += 1
        return self.vector

    def close(self):
        pass


class BernoulliOracle:
    """Fools the caller with probability p per query, independent of pixels."""

    def __init__(self, p: float, n: int, true_label: int, seed: int):
        self.p = p
        self.true = validate_probability_vector(one_hot(n, true_label))
        self.other = validate_probability_vector(one_hot(n, (true_label + 1) % n))
        self.rng = np.random.Generator(np.random.PCG64(seed))

    def predict(self, pixels) -> ProbabilityVector:
        return self.other if self.rng.random() < self.p else self.true

    def close(self):
        pass


class RecordingOracle:
    """Wraps another oracle and keeps every queried pixel tensor."""

    def __init__(self, inner):
        self.inner = inner
        self.pixel_log: list[np.ndarray] = []

    def predict(self, pixels) -> ProbabilityVector:
        self.pixel_log.append(np.array(pixels, copy=True))
        return self.inner.predict(pixels)

    def close(self):
        self.inner.close()
