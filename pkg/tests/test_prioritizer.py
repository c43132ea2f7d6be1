import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from noiserank.errors import DuplicateId, EmptyInput, KTooLarge
from noiserank.metrics import Metric, SensitivityScore
from noiserank.prioritizer import (
    RankDirection,
    ScoredExample,
    default_direction,
    random_select,
    rank,
    read_ranked_csv,
    select_top,
    write_ranked_csv,
)


def scored(pairs, metric=Metric.PD):
    return [ScoredExample(i, SensitivityScore(metric, v)) for i, v in pairs]


class TestRank:
    def test_ascending_sort(self):
        ranked = rank(scored([(0, 0.5), (1, 0.2), (2, 0.9)]), RankDirection.ASCENDING)
        assert ranked.ids() == [1, 0, 2]

    def test_descending_sort(self):
        ranked = rank(scored([(0, 0.5), (1, 0.2), (2, 0.9)]), RankDirection.DESCENDING)
        assert ranked.ids() == [2, 0, 1]

    def test_tie_broken_by_ascending_id(self):
        assert rank(scored([(1, 0.5), (0, 0.5)]), RankDirection.ASCENDING).ids() == [0, 1]
        assert rank(scored([(1, 0.5), (0, 0.5)]), RankDirection.DESCENDING).ids() == [0, 1]

    def test_reference_vector_scores_rank_moderate_first(self):
        # the two hand-checked softmax vectors: pd 0.71833... vs 0.9325
        ranked = rank(scored([(0, 0.7183333333333334), (1, 0.9325)]), RankDirection.ASCENDING)
        assert ranked.ids() == [0, 1]

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            rank([], RankDirection.ASCENDING)

    def test_duplicate_id(self):
        with pytest.raises(DuplicateId):
            rank(scored([(0, 0.1), (0, 0.2)]), RankDirection.ASCENDING)

    def test_mixed_metrics_rejected(self):
        mixed = scored([(0, 0.1)]) + scored([(1, 0.2)], metric=Metric.PE)
        with pytest.raises(ValueError):
            rank(mixed, RankDirection.ASCENDING)

    def test_idempotent(self):
        first = rank(scored([(3, 0.2), (1, 0.9), (2, 0.2)]), RankDirection.ASCENDING)
        again = rank(list(first.entries), RankDirection.ASCENDING)
        assert again == first

    @given(st.permutations(list(range(8))), st.lists(st.floats(0, 1), min_size=8, max_size=8))
    def test_input_order_never_matters(self, order, values):
        base = scored(list(enumerate(values)))
        shuffled = [base[i] for i in order]
        assert rank(base, RankDirection.ASCENDING) == rank(shuffled, RankDirection.ASCENDING)

    @given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=10, unique=True))
    def test_monotone_transform_keeps_order(self, values):
        base = scored(list(enumerate(values)))
        # doubling is exact in binary floats, so distinct scores stay distinct
        transformed = scored([(i, 2.0 * v) for i, v in enumerate(values)])
        assert (
            rank(base, RankDirection.ASCENDING).ids()
            == rank(transformed, RankDirection.ASCENDING).ids()
        )


def test_default_direction_is_ascending_for_all_metrics():
    for metric in Metric:
        assert default_direction(metric) is RankDirection.ASCENDING


class TestSelectTop:
    def test_k_equals_length_returns_all(self):
        ranked = rank(scored([(0, 0.5), (1, 0.2), (2, 0.9)]), RankDirection.ASCENDING)
        assert select_top(ranked, 3) == [1, 0, 2]

    def test_k_one(self):
        ranked = rank(scored([(0, 0.5), (1, 0.2), (2, 0.9)]), RankDirection.ASCENDING)
        assert select_top(ranked, 1) == [1]

    def test_k_two_of_three(self):
        ranked = rank(scored([(0, 0.5), (1, 0.2), (2, 0.9)]), RankDirection.ASCENDING)
        assert select_top(ranked, 2) == [1, 0]

    def test_k_too_large(self):
        ranked = rank(scored([(0, 0.5)]), RankDirection.ASCENDING)
        with pytest.raises(KTooLarge):
            select_top(ranked, 2)

    def test_selection_plus_remainder_is_input_set(self):
        ranked = rank(scored([(i, (i * 7) % 5) for i in range(9)]), RankDirection.ASCENDING)
        chosen = select_top(ranked, 4)
        remainder = [i for i in ranked.ids() if i not in chosen]
        assert sorted(chosen + remainder) == list(range(9))


class TestRandomSelect:
    def test_k_equals_length_is_permutation(self):
        ids = list(range(12))
        assert sorted(random_select(ids, 12, seed=3)) == ids

    def test_same_seed_same_selection(self):
        ids = list(range(50))
        assert random_select(ids, 10, seed=9) == random_select(ids, 10, seed=9)

    def test_different_seed_usually_differs(self):
        ids = list(range(50))
        assert random_select(ids, 10, seed=1) != random_select(ids, 10, seed=2)

    def test_k_too_large(self):
        with pytest.raises(KTooLarge):
            random_select([1, 2], 3, seed=0)

    def test_empirical_uniformity(self):
        # 10,000 seeded draws of k=1 from 10 ids: each frequency within 5 sigma
        ids = list(range(10))
        counts = np.zeros(10)
        for seed in range(10_000):
            counts[random_select(ids, 1, seed=seed)[0]] += 1
        sigma = np.sqrt(10_000 * 0.1 * 0.9)
        assert np.all(np.abs(counts - 1000) < 5 * sigma)


def test_csv_round_trip(tmp_path):
    ranked = rank(scored([(4, 0.25), (7, 0.125), (2, 0.5)]), RankDirection.ASCENDING)
    path = tmp_path / "ranked.csv"
    write_ranked_csv(ranked, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["rank", "example_id", "metric", "score"]
    assert [r[0] for r in rows[1:]] == ["1", "2", "3"]
    assert read_ranked_csv(path) == ranked
