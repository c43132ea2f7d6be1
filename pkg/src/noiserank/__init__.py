"""Noise-sensitivity test prioritization for softmax classifiers.

Score test examples from their probability vectors, rank them so the most
perturbation-sensitive come first, attack them with 2x2-pixel perturbations
(random flips or differential evolution), and evaluate how well the ranking
predicts attack effectiveness.
"""

__version__ = "0.1.0"

from .attack import (
    AttackOutcome,
    DeParams,
    Perturbation,
    SampleCount,
    apply_perturbation,
    de_attack,
    first_success_count,
    random_attack,
    random_block_flip,
)
from .dataset import Dataset, Example, load_csv, load_idx, subset, synthetic_patterns
from .errors import NoiseRankError
from .evaluation import (
    DecayComparison,
    EffPoint,
    ExpFit,
    FMeasureReport,
    compare_decay_rates,
    compute_eff,
    correlation_gate,
    f_measure,
    fit_exponential,
    improvement,
    linearize,
    spearman,
)
from .metrics import (
    Metric,
    ProbabilityVector,
    SensitivityScore,
    probability_difference,
    probability_entropy,
    probability_variance,
    score_all,
    validate_probability_vector,
)
from .oracle import (
    BuiltinOracle,
    ExternalOracle,
    MlpConfig,
    ModelWeights,
    TableOracle,
    TrainingConfig,
    load_weights,
    predict,
    predict_batch,
    save_weights,
    train_mlp,
    training_preset,
)
from .prioritizer import (
    RankDirection,
    RankedList,
    ScoredExample,
    default_direction,
    random_select,
    rank,
    select_top,
)
from .seeds import derive_seed
