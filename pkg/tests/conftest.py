import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from noiserank.dataset import partition, synthetic_patterns
from noiserank.oracle import BuiltinOracle, MlpConfig, TrainingConfig, train_mlp

settings.register_profile(
    "det",
    derandomize=True,
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("det")


@pytest.fixture(scope="session")
def tiny_model():
    """Small trained model over 12x12 patterns, shared across tests."""
    data = synthetic_patterns(400, seed=11, side=12, n_classes=4)
    train, heldout = partition(data, [320, 80], seed=12)
    weights = train_mlp(
        train,
        MlpConfig((12 * 12 * 1, 32, 4)),
        TrainingConfig(learning_rate=0.1, batch_size=64, epochs=12, seed=13),
    )
    return {"weights": weights, "train": train, "heldout": heldout}


@pytest.fixture()
def tiny_oracle(tiny_model):
    return BuiltinOracle(tiny_model["weights"])


@pytest.fixture()
def faint_pool():
    """Low-intensity patterns whose outputs span the confidence spectrum."""
    return synthetic_patterns(
        60, seed=17, side=12, n_classes=4, ambiguity=0.0, noise=0.0, intensity=(0.05, 0.3)
    )
