"""Scatter matrices, Fisher score and LDA projection for latent diagnostics."""
from __future__ import annotations

import os
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ConvergenceError, NonFiniteError

DEFAULT_RIDGE = 1e-6


@dataclass
class ScatterStats:
    s_within: np.ndarray
    s_between: np.ndarray
    class_means: np.ndarray  # rows for absent classes are NaN
    global_mean: np.ndarray
    counts: np.ndarray
    single_class: bool = False

    @property
    def dim(self) -> int:
        return self.s_within.shape[0]

    @property
    def fisher(self) -> float:
        return fisher_score(self, DEFAULT_RIDGE)


@dataclass
class EigenResult:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # orthonormal columns
    sweeps: int
    off_norm: float


def scatter_matrices(latents, labels, num_classes: int | None = None) -> ScatterStats:
    """Within- and between-class scatter, both normalised by N.

    S_W sums outer products over the members of each class only. With a
    single class present S_B is zero and ``single_class`` is set.
    """
    x = np.asarray(latents, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if x.ndim != 2 or labels.shape != (x.shape[0],):
        raise ContractError(f"latents {x.shape} and labels {labels.shape} disagree")
    n, d = x.shape
    k = int(labels.max()) + 1 if num_classes is None else num_classes
    counts = np.bincount(labels, minlength=k)
    if n < np.count_nonzero(counts):
        raise ContractError("need at least as many samples as classes")
    mu = x.mean(axis=0)
    means = np.full((k, d), np.nan)
    s_w = np.zeros((d, d))
    s_b = np.zeros((d, d))
    for j in np.flatnonzero(counts):
        members = x[labels == j]
        means[j] = members.mean(axis=0)
        centered = members - means[j]
        s_w += centered.T @ centered
        gap = (means[j] - mu)[:, None]
        s_b += counts[j] * (gap @ gap.T)
    s_w /= n
    s_b /= n
    # exact symmetry; rounding in the outer products can leave 1 ulp
    s_w = 0.5 * (s_w + s_w.T)
    s_b = 0.5 * (s_b + s_b.T)
    return ScatterStats(s_w, s_b, means, mu, counts,
                        single_class=np.count_nonzero(counts) < 2)


def total_scatter(latents) -> np.ndarray:
    x = np.asarray(latents, dtype=np.float64)
    c = x - x.mean(axis=0)
    return c.T @ c / x.shape[0]


def fisher_score(stats: ScatterStats, ridge: float = DEFAULT_RIDGE) -> float:
    """trace((S_W + ridge I)^-1 S_B); larger means better separated classes."""
    if ridge <= 0:
        raise ContractError(f"ridge must be > 0, got {ridge}")
    a = stats.s_within + ridge * np.eye(stats.dim)
    score = float(np.trace(np.linalg.solve(a, stats.s_between)))
    if not np.isfinite(score):
        raise NonFiniteError(f"fisher score is not finite ({score})")
    return score


def _off_norm(a):
    off = a - np.diag(np.diag(a))
    return float(np.sqrt((off * off).sum()))


def jacobi_eigen_symmetric(matrix, max_sweeps: int = 64, tol: float | None = None) -> EigenResult:
    """Cyclic Jacobi eigensolver for a real symmetric matrix.

    Each sweep rotates away every off-diagonal pair (p, q) once. Stops when
    the off-diagonal Frobenius norm drops to ``tol`` (default
    1e-14 * ||A||_F).

    Raises:
        ConvergenceError: still above ``tol`` after ``max_sweeps`` sweeps.
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"need a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.abs(a).max(initial=0.0)))
    if np.abs(a - a.T).max(initial=0.0) > 1e-10 * scale:
        raise ContractError("matrix is not symmetric within 1e-10")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    if tol is None:
        tol = 1e-14 * float(np.linalg.norm(a))
    v = np.eye(n)
    off = _off_norm(a)
    sweeps = 0
    while off > tol:
        if sweeps == max_sweeps:
            raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps "
                                   f"(off-diagonal norm {off:.3e})", residual=off)
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                gap = a[q, q] - a[p, p]
                if abs(gap) + 100.0 * abs(apq) == abs(gap):
                    # tiny angle; theta would overflow
                    t = apq / gap
                else:
                    theta = gap / (2.0 * apq)
                    t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(1.0 + theta * theta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        off = _off_norm(a)
    order = np.argsort(-np.diag(a), kind="stable")
    return EigenResult(np.diag(a)[order].copy(), v[:, order], sweeps, off)


@dataclass
class LdaProjection:
    matrix: np.ndarray  # d x target_dim, unit-norm columns
    eigenvalues: np.ndarray  # all generalised eigenvalues, descending
    degenerate: bool


def lda_projection(stats: ScatterStats, target_dim: int, ridge: float = DEFAULT_RIDGE) -> LdaProjection:
    """Top generalised eigenvectors of (S_B, S_W + ridge I) via whitening.

    Decompose S_W + ridge I = Q L Q^T, whiten with W = Q L^-1/2, then take
    the leading eigenvectors P of W^T S_B W; the projection is W P.
    """
    d = stats.dim
    k = int(np.count_nonzero(stats.counts))
    if not 1 <= target_dim <= d:
        raise ContractError(f"target_dim must be in [1, {d}], got {target_dim}")
    if target_dim > min(d, k - 1):
        warnings.warn(f"target_dim {target_dim} exceeds rank bound min(d, K-1) = {min(d, k - 1)}",
                      stacklevel=2)
    within = jacobi_eigen_symmetric(stats.s_within + ridge * np.eye(d))
    whiten = within.eigenvectors / np.sqrt(within.eigenvalues)
    m = whiten.T @ stats.s_between @ whiten
    between = jacobi_eigen_symmetric(0.5 * (m + m.T))
    u = whiten @ between.eigenvectors[:, :target_dim]
    u /= np.linalg.norm(u, axis=0)
    lam = between.eigenvalues
    spread = max(1.0, float(np.abs(stats.s_within).max()))
    degenerate = stats.single_class or float(np.abs(stats.s_between).max()) <= 1e-14 * spread
    return LdaProjection(u, lam, degenerate)


# --- latent-space summaries ------------------------------------------------


def intra_class_distance(latents, labels) -> float:
    """Mean Euclidean distance from each sample to its class centroid."""
    x = np.asarray(latents, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    total = 0.0
    for j in np.unique(labels):
        members = x[labels == j]
        total += np.linalg.norm(members - members.mean(axis=0), axis=1).sum()
    return float(total / x.shape[0])


def inter_centroid_distance(latents, labels) -> float:
    """Mean pairwise Euclidean distance between the class centroids present."""
    x = np.asarray(latents, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    cents = np.array([x[labels == j].mean(axis=0) for j in np.unique(labels)])
    if len(cents) < 2:
        return 0.0
    i, j = np.triu_indices(len(cents), k=1)
    return float(np.linalg.norm(cents[i] - cents[j], axis=1).mean())


@dataclass
class Diagnostics:
    fisher_score: float
    intra_distance: float
    inter_distance: float


def diagnose_latents(latents, labels, num_classes=None, ridge: float = DEFAULT_RIDGE) -> Diagnostics:
    stats = scatter_matrices(latents, labels, num_classes)
    return Diagnostics(fisher_score(stats, ridge), intra_class_distance(latents, labels),
                       inter_centroid_distance(latents, labels))


DIAGNOSTICS_HEADER = "epoch,fisher_score,intra_distance,inter_distance"


def append_diagnostics_row(path, epoch: int, diag: Diagnostics):
    """Append one epoch's diagnostics to a CSV, writing the header on first use."""
    from .data import atomic_write_text

    text = ""
    if os.path.exists(path):
        with open(path) as fh:
            text = fh.read()
    if not text:
        text = DIAGNOSTICS_HEADER + "\n"
    text += f"{epoch},{diag.fisher_score!r},{diag.intra_distance!r},{diag.inter_distance!r}\n"
    atomic_write_text(path, text)
