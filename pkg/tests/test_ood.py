import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ndalab.data import BlobSpec, gen_blobs
from ndalab.errors import ContractError
from ndalab.models import build_model
from ndalab.ood import (ScoredPrediction, aupr, auroc, ece, ensemble_probs, fpr_at_95_tpr, ood_report,
                        reliability_table, score_predictions)


def brute_auroc(pos, neg):
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def _pred(conf, correct):
    return ScoredPrediction(np.array([conf, 1 - conf]), conf, 0, 0 if correct else 1)


class TestAuroc:
    def test_perfect(self):
        assert auroc([0.9] * 5, [0.1] * 5) == 1.0

    def test_all_ties(self):
        assert auroc([0.4] * 3, [0.4] * 7) == 0.5

    def test_hand_case(self):
        assert auroc([0.9, 0.6], [0.7, 0.2]) == 0.75

    def test_needs_both_sides(self):
        with pytest.raises(ContractError):
            auroc([0.5], [])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 200), st.integers(1, 200), st.integers(2, 12))
    def test_matches_pairwise_count(self, seed, n_pos, n_neg, levels):
        rng = np.random.default_rng(seed)
        # few distinct levels forces many ties
        pos = rng.integers(0, levels, n_pos) / levels
        neg = rng.integers(0, levels, n_neg) / levels
        assert abs(auroc(pos, neg) - brute_auroc(pos, neg)) <= 1e-12


class TestAupr:
    def test_perfect(self):
        assert aupr([0.9, 0.8], [0.1, 0.2]) == 1.0

    def test_tie_group_enters_together(self):
        # one threshold at 0.9 admits both samples: precision 1/2 at recall 1
        assert aupr([0.9], [0.9]) == 0.5

    def test_hand_sweep(self):
        # thresholds 0.9, 0.7, 0.6: (P=1, R=1/2), (P=1/2, R=1/2), (P=2/3, R=1)
        assert aupr([0.9, 0.6], [0.7, 0.2]) == pytest.approx(0.5 * 1.0 + 0.5 * 2.0 / 3.0)

    def test_all_positive_rejected(self):
        with pytest.raises(ContractError):
            aupr([0.9, 0.8], [])


class TestFpr95:
    def test_perfect(self):
        assert fpr_at_95_tpr([0.9, 0.8, 0.95], [0.1, 0.2]) == 0.0

    def test_boundary_is_inclusive(self):
        pos = np.arange(1, 21) / 20.0  # 0.05 .. 1.0
        neg = np.array([0.07, 0.12, 0.5])
        # threshold 0.1 keeps exactly 19 of 20 in-scores; only 0.12 and 0.5 pass it
        assert fpr_at_95_tpr(pos, neg) == pytest.approx(2.0 / 3.0)

    def test_matched_distributions(self):
        rng = np.random.default_rng(0)
        val = fpr_at_95_tpr(rng.normal(size=20000), rng.normal(size=20000))
        assert abs(val - 0.95) <= 0.02


class TestEce:
    def test_confident_and_right(self):
        assert ece([_pred(1.0, True)] * 4) == 0.0

    def test_confident_and_wrong(self):
        assert ece([_pred(1.0, False)] * 4) == 1.0

    def test_two_sample_hand_case(self):
        assert ece([_pred(0.8, True), _pred(0.6, False)], 10) == pytest.approx(0.4, abs=1e-12)

    def test_reliability_bins(self):
        table = reliability_table([_pred(0.8, True), _pred(0.6, False)], 10)
        assert [(b, n) for b, n, _, _ in table if n] == [(6, 1), (8, 1)]
        assert len(table) == 10

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=60))
    def test_single_bin(self, rows):
        preds = [_pred(c, ok) for c, ok in rows]
        acc = np.mean([ok for _, ok in rows])
        conf = np.mean([c for c, _ in rows])
        assert abs(ece(preds, 1) - abs(acc - conf)) <= 1e-12


class TestReport:
    def test_same_split_is_chance(self):
        data = gen_blobs(BlobSpec(4, 8, 150, seed=1))
        m = build_model(8, [16], 8, 4, seed=0)
        metrics = ood_report(m, data, data)
        assert abs(metrics.auroc - 0.5) <= 0.05
        for value in (metrics.auroc, metrics.aupr, metrics.fpr_at_95_tpr, metrics.ece):
            assert 0.0 <= value <= 1.0

    def test_ensemble_average(self):
        x = np.random.default_rng(0).normal(size=(5, 3))
        ms = [build_model(3, [4], 2, 3, seed=s) for s in range(3)]
        avg = ensemble_probs(ms, x)
        manual = sum(ensemble_probs(m, x) for m in ms) / 3
        np.testing.assert_allclose(avg, manual, atol=1e-15)

    def test_argmax_tie_goes_to_lowest_index(self):
        (p,) = score_predictions(np.array([[0.5, 0.5]]), np.array([1]))
        assert p.predicted == 0 and not p.correct
