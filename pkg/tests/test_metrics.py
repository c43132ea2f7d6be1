import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from noiserank.errors import NegativeEntry, NonFinite, SumOutOfTolerance, TooShort
from noiserank.metrics import (
    Metric,
    probability_difference,
    probability_entropy,
    probability_variance,
    score_all,
    validate_probability_vector,
)

# Softmax outputs of two moderately vs highly confident predictions; all
# expected values below were hand-evaluated term by term before implementing.
VEC_A = [0, 0, 0, 0.18, 0.81, 0, 0, 0, 0.01, 0]
VEC_B = [0, 0, 0, 0, 0.95, 0.01, 0, 0, 0.01, 0.03]

ONE_HOT = [1.0] + [0.0] * 9
UNIFORM = [0.1] * 10


def pv(values):
    return validate_probability_vector(values)


class TestValidation:
    def test_symmetric_two_class_vector_is_valid(self):
        assert pv([0.5, 0.5]).n == 2

    def test_sum_out_of_tolerance(self):
        with pytest.raises(SumOutOfTolerance):
            pv([0.6, 0.6])

    def test_reference_vector_is_valid(self):
        assert pv(VEC_A).n == 10

    def test_negative_entry(self):
        with pytest.raises(NegativeEntry):
            pv([1.1, -0.1])

    def test_too_short(self):
        with pytest.raises(TooShort):
            pv([1.0])
        with pytest.raises(TooShort):
            pv([])

    def test_non_finite(self):
        with pytest.raises(NonFinite):
            pv([float("nan"), 1.0])
        with pytest.raises(NonFinite):
            pv([float("inf"), 0.5])

    def test_tolerance_admits_single_precision_sums(self):
        values = np.full(10, np.float32(0.1))
        assert pv(values).n == 10

    def test_values_are_read_only(self):
        vec = pv(UNIFORM)
        with pytest.raises(ValueError):
            vec.values[0] = 0.5


class TestProbabilityDifference:
    def test_one_hot_is_one(self):
        assert probability_difference(pv(ONE_HOT)).value == 1.0

    def test_uniform_is_zero(self):
        assert probability_difference(pv(UNIFORM)).value == 0.0

    def test_hand_computed_vector_a(self):
        # gaps: 0.63/1 + 0.17/2 + 0.01/3
        assert probability_difference(pv(VEC_A)).value == pytest.approx(
            0.63 + 0.17 / 2 + 0.01 / 3, abs=1e-12
        )

    def test_hand_computed_vector_b(self):
        # gaps: 0.92/1 + 0.02/2 + 0/3 + 0.01/4
        assert probability_difference(pv(VEC_B)).value == pytest.approx(0.9325, abs=1e-12)

    def test_vector_b_leading_gap_is_exactly_092(self):
        p = np.sort(pv(VEC_B).values)[::-1]
        assert p[0] - p[1] == pytest.approx(0.92, abs=1e-15)


class TestProbabilityVariance:
    def test_uniform_is_zero(self):
        assert probability_variance(pv(UNIFORM)).value == 0.0

    def test_one_hot_sum_of_squared_deviations(self):
        # (1 - 0.1)^2 + 9 * 0.1^2, with no division by n
        assert probability_variance(pv(ONE_HOT)).value == pytest.approx(0.9, abs=1e-12)

    def test_vector_a(self):
        assert probability_variance(pv(VEC_A)).value == pytest.approx(0.5886, abs=1e-12)

    def test_vector_b(self):
        assert probability_variance(pv(VEC_B)).value == pytest.approx(0.8036, abs=1e-12)


class TestProbabilityEntropy:
    def test_one_hot_is_zero(self):
        assert probability_entropy(pv(ONE_HOT)).value == 0.0

    def test_uniform_is_ln_n(self):
        assert probability_entropy(pv(UNIFORM)).value == pytest.approx(math.log(10), abs=1e-12)

    def test_vector_b(self):
        # independent term-by-term evaluation:
        # -(0.95 ln 0.95 + 2 * 0.01 ln 0.01 + 0.03 ln 0.03)
        expected = -(0.95 * math.log(0.95) + 2 * 0.01 * math.log(0.01) + 0.03 * math.log(0.03))
        assert expected == pytest.approx(0.2460287703075334, abs=1e-15)
        assert probability_entropy(pv(VEC_B)).value == pytest.approx(expected, abs=1e-12)

    def test_tiny_entries_treated_as_zero(self):
        vec = pv([1.0 - 1e-7, 1e-301, 1e-7 - 1e-301])
        assert math.isfinite(probability_entropy(vec).value)


def simplex_vectors(min_n=2, max_n=16):
    return (
        st.lists(st.floats(1e-6, 1.0), min_size=min_n, max_size=max_n)
        .map(lambda raw: [x / sum(raw) for x in raw])
    )


@given(simplex_vectors())
def test_scores_stay_in_their_ranges(values):
    vec = pv(values)
    n = vec.n
    scores = score_all(vec)
    assert 0.0 <= scores[Metric.PD].value <= 1.0 + 1e-12
    assert 0.0 <= scores[Metric.PV].value <= (n - 1) / n + 1e-12
    assert 0.0 <= scores[Metric.PE].value <= math.log(n) + 1e-12


@given(simplex_vectors(), st.randoms(use_true_random=False))
def test_permutation_invariance(values, rnd):
    vec = pv(values)
    shuffled = list(values)
    rnd.shuffle(shuffled)
    other = pv(shuffled)
    for metric in Metric:
        a = score_all(vec)[metric].value
        b = score_all(other)[metric].value
        assert a == pytest.approx(b, abs=1e-12)


def test_pd_and_pv_zero_iff_uniform():
    for n in (2, 5, 10):
        uniform = [1.0 / n] * n
        assert probability_difference(pv(uniform)).value == pytest.approx(0.0, abs=1e-15)
        assert probability_variance(pv(uniform)).value == pytest.approx(0.0, abs=1e-15)
    lopsided = pv([0.4, 0.6])
    assert probability_difference(lopsided).value > 0
    assert probability_variance(lopsided).value > 0


def test_pe_zero_iff_one_hot():
    for n in (2, 5, 10):
        hot = [0.0] * n
        hot[n // 2] = 1.0
        assert probability_entropy(pv(hot)).value == 0.0
    assert probability_entropy(pv([0.999999, 0.000001])).value > 0


def test_agreement_with_brute_force_oracle():
    """Naive pure-python evaluation of each formula on 1,000 seeded vectors."""
    rng = np.random.Generator(np.random.PCG64(20250805))
    for _ in range(1000):
        n = int(rng.integers(2, 12))
        values = rng.dirichlet(np.ones(n)).tolist()
        vec = pv(values)

        ordered = sorted(values, reverse=True)
        naive_pd = sum((ordered[i] - ordered[i + 1]) / (i + 1) for i in range(n - 1))
        naive_pv = sum((x - 1.0 / n) ** 2 for x in values)
        naive_pe = -sum(x * math.log(x) for x in values if x > 0)

        assert probability_difference(vec).value == pytest.approx(naive_pd, abs=1e-12)
        assert probability_variance(vec).value == pytest.approx(naive_pv, abs=1e-12)
        assert probability_entropy(vec).value == pytest.approx(naive_pe, abs=1e-12)
