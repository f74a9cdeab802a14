import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ndalab.discriminant import (DIAGNOSTICS_HEADER, Diagnostics, ScatterStats, append_diagnostics_row,
                                 diagnose_latents, fisher_score, inter_centroid_distance,
                                 intra_class_distance, jacobi_eigen_symmetric, lda_projection,
                                 scatter_matrices, total_scatter)
from ndalab.errors import ContractError, ConvergenceError


def _direct_scatter(x, y):
    """Element-by-element sums, no vectorised outer products."""
    n, d = x.shape
    mu = [sum(x[i, a] for i in range(n)) / n for a in range(d)]
    sw = [[0.0] * d for _ in range(d)]
    sb = [[0.0] * d for _ in range(d)]
    for j in sorted(set(y.tolist())):
        idx = [i for i in range(n) if y[i] == j]
        m = [sum(x[i, a] for i in idx) / len(idx) for a in range(d)]
        for a in range(d):
            for b in range(d):
                sw[a][b] += sum((x[i, a] - m[a]) * (x[i, b] - m[b]) for i in idx)
                sb[a][b] += len(idx) * (m[a] - mu[a]) * (m[b] - mu[b])
    return np.array(sw) / n, np.array(sb) / n


class TestScatter:
    def test_identical_samples(self):
        stats = scatter_matrices(np.ones((5, 3)), np.array([0, 1, 0, 1, 2]))
        np.testing.assert_array_equal(stats.s_within, 0.0)
        np.testing.assert_allclose(stats.s_between, 0.0, atol=1e-30)

    def test_two_points_one_dimension(self):
        stats = scatter_matrices(np.array([[-1.0], [-1.0], [1.0], [1.0]]), np.array([0, 0, 1, 1]))
        np.testing.assert_array_equal(stats.s_within, [[0.0]])
        np.testing.assert_allclose(stats.s_between, [[1.0]])

    def test_six_point_direct_summation(self):
        x = np.array([[0.0, 1.0], [1.0, 2.0], [2.0, 0.5], [4.0, 4.0], [5.0, 3.0], [3.5, 5.5]])
        y = np.array([0, 0, 0, 1, 1, 1])
        sw, sb = _direct_scatter(x, y)
        stats = scatter_matrices(x, y)
        np.testing.assert_allclose(stats.s_within, sw, atol=1e-13)
        np.testing.assert_allclose(stats.s_between, sb, atol=1e-13)

    def test_single_class_flag(self):
        stats = scatter_matrices(np.random.default_rng(0).normal(size=(6, 2)), np.zeros(6, dtype=int))
        assert stats.single_class

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            scatter_matrices(np.zeros((4, 2)), np.zeros(3, dtype=int))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(1, 8), st.integers(10, 200))
def test_within_plus_between_is_total(seed, k, d, n):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d)) * rng.uniform(0.1, 5.0) + rng.normal(size=d)
    y = rng.integers(0, k, n)
    stats = scatter_matrices(x, y, k)
    np.testing.assert_allclose(stats.s_within + stats.s_between, total_scatter(x), atol=1e-10, rtol=0)
    for mat in (stats.s_within, stats.s_between):
        np.testing.assert_allclose(mat, mat.T, atol=1e-10, rtol=0)
        assert np.linalg.eigvalsh(mat).min() >= -1e-10


class TestFisher:
    def _stats(self, sw, sb):
        d = len(sw)
        return ScatterStats(np.asarray(sw, float), np.asarray(sb, float), np.zeros((2, d)),
                            np.zeros(d), np.array([1, 1]))

    def test_zero_between(self):
        assert fisher_score(self._stats([[1.0]], [[0.0]])) == 0.0

    def test_ridge_keeps_degenerate_finite(self):
        assert fisher_score(self._stats([[0.0]], [[1.0]]), 1e-6) == pytest.approx(1e6)

    def test_two_by_two_inverse(self):
        sw = np.array([[2.0, 0.5], [0.5, 1.0]])
        sb = np.array([[1.0, 0.3], [0.3, 0.4]])
        r = 1e-6
        a, b, c, d = sw[0, 0] + r, sw[0, 1], sw[1, 0], sw[1, 1] + r
        det = a * d - b * c
        inv = np.array([[d, -b], [-c, a]]) / det
        expected = float(np.trace(inv @ sb))
        assert fisher_score(self._stats(sw, sb), r) == pytest.approx(expected, rel=1e-12)

    def test_ridge_must_be_positive(self):
        with pytest.raises(ContractError):
            fisher_score(self._stats([[1.0]], [[1.0]]), 0.0)


class TestJacobi:
    def test_identity(self):
        res = jacobi_eigen_symmetric(np.eye(3))
        np.testing.assert_array_equal(res.eigenvalues, [1.0, 1.0, 1.0])

    def test_diagonal(self):
        res = jacobi_eigen_symmetric(np.diag([2.0, 5.0]))
        np.testing.assert_array_equal(res.eigenvalues, [5.0, 2.0])
        np.testing.assert_allclose(np.abs(res.eigenvectors), [[0.0, 1.0], [1.0, 0.0]])

    def test_two_by_two(self):
        res = jacobi_eigen_symmetric(np.array([[2.0, 1.0], [1.0, 2.0]]))
        np.testing.assert_allclose(res.eigenvalues, [3.0, 1.0], atol=1e-14)

    def test_asymmetric_rejected(self):
        with pytest.raises(ContractError):
            jacobi_eigen_symmetric(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_sweep_budget(self):
        a = np.random.default_rng(0).normal(size=(6, 6))
        with pytest.raises(ConvergenceError) as info:
            jacobi_eigen_symmetric(a + a.T, max_sweeps=1)
        assert info.value.residual > 0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 16))
    def test_reconstruction(self, seed, n):
        a = np.random.default_rng(seed).normal(size=(n, n))
        a = a + a.T
        res = jacobi_eigen_symmetric(a)
        v, lam = res.eigenvectors, res.eigenvalues
        assert np.abs(v @ np.diag(lam) @ v.T - a).max() <= 1e-8
        np.testing.assert_allclose(v.T @ v, np.eye(n), atol=1e-10)
        assert np.all(np.diff(lam) <= 0)
        np.testing.assert_allclose(lam, np.sort(np.linalg.eigvalsh(a))[::-1], atol=1e-9)


class TestLda:
    def test_aligned_with_mean_difference(self):
        rng = np.random.default_rng(4)
        mu0, mu1 = np.array([0.0, 0.0]), np.array([6.0, 2.0])
        x = np.vstack([rng.normal(size=(300, 2)) + mu0, rng.normal(size=(300, 2)) + mu1])
        y = np.repeat([0, 1], 300)
        proj = lda_projection(scatter_matrices(x, y), 1)
        gap = (mu1 - mu0) / np.linalg.norm(mu1 - mu0)
        assert abs(float(proj.matrix[:, 0] @ gap)) >= 0.99

    def test_two_classes_rank_one(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(60, 3))
        y = np.repeat([0, 1], 30)
        x[y == 1] += 2.0
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            proj = lda_projection(scatter_matrices(x, y), 2)
        assert any("rank" in str(w.message) for w in caught)
        assert abs(proj.eigenvalues[1]) <= 1e-8 * proj.eigenvalues[0]

    def test_identical_class_data_is_degenerate(self):
        x = np.tile([1.0, 2.0], (6, 1))
        proj = lda_projection(scatter_matrices(x, np.array([0, 0, 0, 1, 1, 1])), 1)
        assert proj.degenerate
        np.testing.assert_allclose(proj.eigenvalues, 0.0, atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(proj.matrix, axis=0), 1.0)


class TestDistances:
    def test_hand_values(self):
        x = np.array([[0.0, 0.0], [2.0, 0.0], [10.0, 0.0], [10.0, 4.0]])
        y = np.array([0, 0, 1, 1])
        assert intra_class_distance(x, y) == pytest.approx((1 + 1 + 2 + 2) / 4)
        assert inter_centroid_distance(x, y) == pytest.approx(np.hypot(9.0, 2.0))

    def test_diagnostics_csv_appends(self, tmp_path):
        path = tmp_path / "diag.csv"
        append_diagnostics_row(path, 0, Diagnostics(1.5, 0.25, 3.0))
        append_diagnostics_row(path, 1, Diagnostics(2.5, 0.125, 4.0))
        lines = path.read_text().splitlines()
        assert lines == [DIAGNOSTICS_HEADER, "0,1.5,0.25,3.0", "1,2.5,0.125,4.0"]

    def test_diagnose_matches_parts(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(40, 3))
        y = rng.integers(0, 3, 40)
        diag = diagnose_latents(x, y, 3)
        assert diag.fisher_score == pytest.approx(fisher_score(scatter_matrices(x, y, 3)))
        assert diag.intra_distance == pytest.approx(intra_class_distance(x, y))
