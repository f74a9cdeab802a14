import math

import numpy as np
import pytest

from ndalab.autodiff import Tensor
from ndalab.data import BlobSpec, Dataset, gen_blobs
from ndalab.errors import ContractError
from ndalab.models import build_model
from ndalab.ssl import (PseudoLabelSet, SslConfig, consistency_loss, perturb, phase1_train,
                        phase2_train, pseudo_label, run_ssl, ssl_splits)
from ndalab.training import evaluate



def _kl(p, q):
    return sum(a * math.log(a / b) for a, b in zip(p, q) if a > 0)


class TestConsistency:
    def test_identical_is_zero(self):
        p = Tensor([[0.2, 0.8], [0.5, 0.5]])
        assert consistency_loss(p, Tensor(p.data.copy())).item() == pytest.approx(0.0, abs=1e-15)

    def test_point_mass_vs_uniform(self):
        assert consistency_loss(Tensor([[1.0, 0.0]]), Tensor([[0.5, 0.5]])).item() == pytest.approx(math.log(2))

    def test_asymmetry(self):
        p, q = [0.9, 0.1], [0.6, 0.4]
        forward = consistency_loss(Tensor([p]), Tensor([q])).item()
        reverse = consistency_loss(Tensor([q]), Tensor([p])).item()
        assert forward == pytest.approx(_kl(p, q), abs=1e-14)
        assert reverse == pytest.approx(_kl(q, p), abs=1e-14)
        assert abs(forward - reverse) > 1e-3


class TestPerturb:
    def test_identity(self):
        x = np.arange(12.0).reshape(3, 4)
        np.testing.assert_array_equal(perturb(x, "strong", 0.0, np.random.default_rng(0), 0.0), x)

    def test_seeded(self):
        x = np.ones((4, 6))
        a = perturb(x, "strong", 0.3, np.random.default_rng(5), 0.5)
        b = perturb(x, "strong", 0.3, np.random.default_rng(5), 0.5)
        np.testing.assert_array_equal(a, b)

    def test_mask_count(self):
        x = np.ones((50, 8))
        out = perturb(x, "strong", 0.0, np.random.default_rng(1), 0.3)
        np.testing.assert_array_equal((out == 0).sum(axis=1), round(0.3 * 8))

    def test_does_not_mutate_input(self):
        x = np.ones((3, 3))
        perturb(x, "weak", 1.0, np.random.default_rng(0))
        np.testing.assert_array_equal(x, 1.0)

    def test_bad_kind(self):
        with pytest.raises(ContractError):
            perturb(np.ones((1, 1)), "medium", 0.1, np.random.default_rng(0))


def _confident_model(rows):
    """Two-class model whose probs on inputs e_i are exactly ``rows[i]``."""
    rows = np.asarray(rows, dtype=np.float64)
    n = rows.shape[0]
    m = build_model(n, [], n, 2)
    m.layers[0].weight.data[...] = np.eye(n)
    m.layers[1].weight.data[...] = np.log(rows)
    return m, Dataset(np.eye(n), np.zeros(n, dtype=int), 2)


class TestPseudoLabel:
    def test_threshold_gate(self):
        m, data = _confident_model([[0.96, 0.04], [0.90, 0.10], [0.5, 0.5], [0.02, 0.98]])
        pl = pseudo_label([m], data, 0.95)
        np.testing.assert_array_equal(pl.index, [0, 3])
        np.testing.assert_array_equal(pl.labels, [0, 1])
        np.testing.assert_allclose(pl.confidence, [0.96, 0.98])

    def test_even_split_rejected(self):
        m, data = _confident_model([[0.5, 0.5]])
        assert len(pseudo_label([m], data, 0.51)) == 0

    def test_averages_members(self):
        m1, data = _confident_model([[0.99, 0.01]])
        m2, _ = _confident_model([[0.89, 0.11]])
        # each member alone would pass 0.93 or fail it; the average 0.94 decides
        assert len(pseudo_label([m1, m2], data, 0.95)) == 0
        assert len(pseudo_label([m1, m2], data, 0.93)) == 1


def _blob_parts(seed=0):
    data = gen_blobs(BlobSpec(num_classes=3, dim=4, per_class=60, spread=3.0, seed=21))
    return ssl_splits(data, SslConfig(labeled_fraction=0.2, seed=seed))


class TestPhases:
    def test_members_diverge(self):
        labeled, _, unlabeled, _ = _blob_parts()
        cfg = SslConfig(phase1_epochs=1, ensemble_size=2)
        models = [build_model(4, [8], 4, 3, seed=s) for s in (1, 2)]
        phase1_train(models, labeled, unlabeled, cfg)
        a, b = (np.frombuffer(m.state_bytes()) for m in models)
        assert np.linalg.norm(a - b) > 0

    def test_no_unlabeled_is_supervised(self):
        labeled, val, _, _ = _blob_parts()
        cfg = SslConfig(phase1_epochs=20, ensemble_size=1)
        (m,), curves = phase1_train([build_model(4, [8], 4, 3, seed=0)], labeled, None, cfg)
        assert len(curves[0]) == 20
        assert curves[0][-1] < curves[0][0]
        assert evaluate(m, val)[0] > 1 / 3

    def test_predecessor_only_updates_on_improvement(self):
        labeled, val, unlabeled, _ = _blob_parts()
        cfg = SslConfig(phase1_epochs=1, phase2_epochs=4, ensemble_size=2)
        models = [build_model(4, [8], 4, 3, seed=s) for s in (1, 2)]
        phase1_train(models, labeled, unlabeled, cfg)
        pl = pseudo_label(models, unlabeled, 0.4)
        assert len(pl) > 0
        _, report = phase2_train(models, labeled, pl, unlabeled, val, cfg)
        for start, hist, updates in zip(report.start_val, report.val_history, report.updates):
            best = start
            expected = []
            for epoch, acc in enumerate(hist):
                if acc > best:
                    best = acc
                    expected.append(epoch)
            assert updates == expected

    def test_empty_pseudo_set_warns(self):
        labeled, val, unlabeled, _ = _blob_parts()
        cfg = SslConfig(phase2_epochs=1, ensemble_size=1)
        empty = PseudoLabelSet(np.array([], dtype=int), np.array([], dtype=int), np.array([], dtype=int),
                               np.array([]), 0.95)
        with pytest.warns(UserWarning, match="empty pseudo-label"):
            phase2_train([build_model(4, [8], 4, 3)], labeled, empty, unlabeled, val, cfg)


class TestRun:
    def test_end_to_end_small(self):
        data = gen_blobs(BlobSpec(num_classes=3, dim=4, per_class=60, spread=3.0, seed=21))
        cfg = SslConfig(labeled_fraction=0.2, phase1_epochs=3, phase2_epochs=2, nda_phase2=True)
        report, models = run_ssl(data, cfg)
        assert len(models) == 3
        assert np.all(report.pseudo.confidence > 0.95)
        assert report.labeled_count + report.unlabeled_count > 0
        assert 0.0 <= report.phase2_ensemble_test <= 1.0

    def test_labeled_split_needs_every_class(self):
        data = gen_blobs(BlobSpec(num_classes=3, dim=2, per_class=4, seed=0))
        with pytest.raises(ContractError):
            ssl_splits(data, SslConfig(labeled_fraction=0.05))

    def test_threshold_validated(self):
        with pytest.raises(ContractError):
            SslConfig(threshold=0.0)
