"""Classification, mean (intra-class) and Siamese (inter-class) losses.

Class means are plain arrays, never graph nodes: they are computed once at
the start of an epoch and act as constants inside every loss built during
that epoch.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12

# Incremented whenever a numeric safeguard kicks in (probability floor,
# pairing fallback). Tests and reports read it; nothing resets it implicitly.
warning_counts: Counter = Counter()


@dataclass(frozen=True)
class NdaConfig:
    alpha: float = 1.0
    beta: float = 1e-3
    gamma: float = 1.0
    mean_loss: str = "l2"  # "l2" | "prototypical"
    siamese: str = "margin"  # "margin" | "literal"
    margin: float = 1.0
    pair_fraction: float = 0.5

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ContractError("alpha, beta and gamma must be non-negative")
        if self.alpha + self.beta <= 0:
            raise ContractError("alpha + beta must be positive")
        if self.margin < 0:
            raise ContractError(f"margin must be >= 0, got {self.margin}")
        if not 0 <= self.pair_fraction <= 1:
            raise ContractError(f"pair_fraction must be in [0, 1], got {self.pair_fraction}")
        if self.mean_loss not in ("l2", "prototypical"):
            raise ContractError(f"unknown mean loss variant {self.mean_loss!r}")
        if self.siamese not in ("margin", "literal"):
            raise ContractError(f"unknown siamese variant {self.siamese!r}")


@dataclass(frozen=True)
class ClassMeans:
    means: np.ndarray  # K x d; rows of absent classes are NaN
    counts: np.ndarray
    epoch: int
    global_mean: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]

    @property
    def present(self) -> np.ndarray:
        return self.counts > 0

    @property
    def absent_classes(self) -> list[int]:
        return [int(j) for j in np.flatnonzero(~self.present)]


def class_means_from_latents(latents, labels, num_classes: int, epoch: int = 0) -> ClassMeans:
    latents = np.asarray(latents, dtype=np.float64)
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=num_classes)
    sums = np.zeros((num_classes, latents.shape[1]))
    np.add.at(sums, labels, latents)
    return _finish_means(sums, counts, epoch)


def _finish_means(sums, counts, epoch) -> ClassMeans:
    means = np.full_like(sums, np.nan)
    present = counts > 0
    means[present] = sums[present] / counts[present, None]
    global_mean = sums.sum(axis=0) / max(int(counts.sum()), 1)
    return ClassMeans(means, counts, epoch, global_mean)


def compute_class_means(model, dataset, batch_size: int = 256, epoch: int = 0) -> ClassMeans:
    """Per-class latent centroids of ``dataset`` under the current model.

    Runs forward only; no gradient reaches the model. Classes with no samples
    get a NaN row and count 0 rather than a fabricated mean.
    """
    from .models import latent_features

    if len(dataset) == 0:
        raise ContractError("dataset is empty")
    k = dataset.num_classes
    sums = np.zeros((k, model.latent_dim))
    for start in range(0, len(dataset), batch_size):
        z = latent_features(model, dataset.features[start:start + batch_size])
        np.add.at(sums, dataset.labels[start:start + batch_size], z)
    return _finish_means(sums, dataset.class_counts(), epoch)


def _check_batch(latents: Tensor, labels):
    labels = np.asarray(labels, dtype=np.intp)
    if latents.ndim != 2 or labels.shape != (latents.shape[0],):
        raise ContractError(f"latents {latents.shape} and labels {labels.shape} disagree")
    return labels


def classification_loss(probs: Tensor, labels) -> Tensor:
    """Mean cross-entropy -log p[true] over the batch.

    Probabilities are floored at 1e-12 before the log; each floored entry
    bumps ``warning_counts['prob_floor']``.
    """
    labels = _check_batch(probs, labels)
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ContractError(f"labels must lie in [0, {probs.shape[1]})")
    p_true = ad.pick(probs, labels)
    floored = int(np.count_nonzero(p_true.data < PROB_FLOOR))
    if floored:
        warning_counts["prob_floor"] += floored
        log.debug("classification_loss floored %d probabilities", floored)
    return ad.scale(ad.mean(ad.log(ad.clamp_min(p_true, PROB_FLOOR))), -1.0)


def _means_for(labels, class_means: ClassMeans) -> np.ndarray:
    for j in np.unique(labels):
        if j >= class_means.num_classes or class_means.counts[j] == 0:
            raise ContractError(f"no class mean available for class {int(j)}")
    return class_means.means[labels]


def mean_loss_l2(latents: Tensor, labels, class_means: ClassMeans) -> Tensor:
    """(1/N) sum_i ||z_i - mu_{y_i}||_2, Euclidean (not squared) distance."""
    labels = _check_batch(latents, labels)
    target = Tensor(_means_for(labels, class_means))
    dist = ad.sqrt(ad.sum(ad.square(ad.sub(latents, target)), axis=1))
    return ad.mean(dist)


def mean_loss_prototypical(latents: Tensor, labels, class_means: ClassMeans) -> Tensor:
    """Cross-entropy of softmax over negative squared distances to all class means."""
    labels = _check_batch(latents, labels)
    if class_means.absent_classes:
        raise ContractError(f"prototypical loss needs every class mean; missing {class_means.absent_classes}")
    if labels.size and labels.max() >= class_means.num_classes:
        raise ContractError(f"label {int(labels.max())} has no prototype")
    mu = class_means.means
    n, k = latents.shape[0], mu.shape[0]
    # -||z - mu_j||^2 = 2 z.mu_j - ||z||^2 - ||mu_j||^2
    cross = ad.scale(ad.matmul(latents, Tensor(mu.T)), 2.0)
    z_sq = ad.reshape(ad.sum(ad.square(latents), axis=1), (n, 1))
    z_sq = ad.matmul(z_sq, Tensor(np.ones((1, k))))
    logits = ad.add_bias(ad.sub(cross, z_sq), Tensor(-(mu * mu).sum(axis=1)))
    return ad.scale(ad.mean(ad.pick(ad.log_softmax_rows(logits), labels)), -1.0)


def mean_loss(latents: Tensor, labels, class_means: ClassMeans, variant: str = "l2") -> Tensor:
    if variant == "l2":
        return mean_loss_l2(latents, labels, class_means)
    if variant == "prototypical":
        return mean_loss_prototypical(latents, labels, class_means)
    raise ContractError(f"unknown mean loss variant {variant!r}")


def siamese_loss(latents_a: Tensor, latents_b: Tensor, diff_flags, config: NdaConfig) -> Tensor:
    """Pairwise loss over matched rows; flag 0 = same class, 1 = different.

    ``literal``: mean of (1 - y) D - y D with D = ||a - b||; unbounded below.
    ``margin``: mean of (1 - y) D^2 + y max(0, margin - D)^2.
    """
    if latents_a.shape != latents_b.shape or latents_a.ndim != 2:
        raise ContractError(f"paired latents must match: {latents_a.shape} vs {latents_b.shape}")
    y = np.asarray(diff_flags, dtype=np.float64)
    if y.shape != (latents_a.shape[0],) or not np.all((y == 0) | (y == 1)):
        raise ContractError("diff_flags must be a 0/1 vector with one entry per pair")
    sq = ad.sum(ad.square(ad.sub(latents_a, latents_b)), axis=1)
    if config.siamese == "literal":
        return ad.mean(ad.mul(ad.sqrt(sq), Tensor(1.0 - 2.0 * y)))
    push = ad.square(ad.relu(ad.scale(ad.sub(ad.sqrt(sq), Tensor(np.full(y.shape, config.margin))), -1.0)))
    return ad.mean(ad.add(ad.mul(sq, Tensor(1.0 - y)), ad.mul(push, Tensor(y))))


def nda_total_loss(class_a: Tensor, class_b: Tensor, mean_a: Tensor, mean_b: Tensor,
                   siamese: Tensor, config: NdaConfig) -> Tensor:
    """alpha (Lc1 + Lc2) + beta (Lm1 + Lm2 + gamma Ls)."""
    for name in ("alpha", "beta", "gamma"):
        if getattr(config, name) < 0:
            raise ContractError(f"{name} must be non-negative")
    parts = (class_a, class_b, mean_a, mean_b, siamese)
    if any(p.size != 1 for p in parts):
        raise ContractError("all loss components must be scalars")
    classification = ad.scale(ad.add(class_a, class_b), config.alpha)
    inner = ad.add(ad.add(mean_a, mean_b), ad.scale(siamese, config.gamma))
    return ad.add(classification, ad.scale(inner, config.beta))


@dataclass
class PairBatch:
    index_a: np.ndarray
    index_b: np.ndarray
    batch_a: np.ndarray
    batch_b: np.ndarray
    labels_a: np.ndarray
    labels_b: np.ndarray
    diff_flags: np.ndarray
    fallbacks: int = 0

    def __len__(self):
        return self.index_a.size


def sample_pairs(dataset, batch_size: int, pair_fraction: float, rng, anchors=None) -> PairBatch:
    """Draw ``batch_size`` pairs, ``round(pair_fraction * batch_size)`` of them same-class.

    Side A is ``anchors`` if given (dataset row indices), otherwise drawn
    uniformly. Side B partners are drawn to make each pair same- or
    cross-class. A same-class request whose class has a single sample
    falls back to a cross-class partner and counts in ``fallbacks``.
    """
    if not 0 <= pair_fraction <= 1:
        raise ContractError(f"pair_fraction must be in [0, 1], got {pair_fraction}")
    labels = dataset.labels
    n = labels.size
    if anchors is None:
        anchors = rng.integers(0, n, size=batch_size)
    anchors = np.asarray(anchors, dtype=np.intp)
    batch_size = anchors.size
    n_same = int(round(pair_fraction * batch_size))
    want_same = np.zeros(batch_size, dtype=bool)
    want_same[rng.permutation(batch_size)[:n_same]] = True

    members = {j: np.flatnonzero(labels == j) for j in range(dataset.num_classes)}
    partners = np.empty(batch_size, dtype=np.intp)
    fallbacks = 0
    for i, (a, same) in enumerate(zip(anchors, want_same)):
        cls = labels[a]
        if same:
            pool = members[cls]
            if pool.size >= 2:
                j = rng.integers(0, pool.size - 1)
                own = np.searchsorted(pool, a)
                partners[i] = pool[j + (j >= own)]  # skip the anchor itself
                continue
            fallbacks += 1
        others = np.flatnonzero(labels != cls)
        if others.size == 0:
            raise ContractError("cross-class pairs need at least two classes")
        partners[i] = others[rng.integers(0, others.size)]
    if fallbacks:
        warning_counts["pair_fallback"] += fallbacks
    la, lb = labels[anchors], labels[partners]
    return PairBatch(anchors, partners, dataset.features[anchors], dataset.features[partners],
                     la, lb, (la != lb).astype(np.int64), fallbacks)


def batch_mean_decomposition(latents, labels) -> float:
    """sum_j (N_Bj / N) sum_{i in j} ||z_i - mu^B_j||^2 with batch-local means.

    The closed form that the all-pairs squared-distance same-class Siamese
    loss reduces to over one batch.
    """
    latents = np.asarray(latents, dtype=np.float64)
    labels = np.asarray(labels)
    n = labels.size
    total = 0.0
    for j in np.unique(labels):
        z = latents[labels == j]
        total += z.shape[0] / n * float(((z - z.mean(axis=0)) ** 2).sum())
    return total


def all_pairs_same_class_siamese(latents: Tensor, labels) -> Tensor:
    """(1/N) sum over unordered same-class pairs of ||z_i1 - z_i2||^2.

    The all-pairs form of the Siamese loss restricted to same-class pairs
    with squared distance. Summing over ordered pairs instead would double it.
    """
    labels = _check_batch(latents, labels)
    n = labels.size
    same = labels[:, None] == labels[None, :]
    i1, i2 = np.nonzero(np.triu(same, k=1))
    diff = ad.sub(ad.row_select(latents, i1), ad.row_select(latents, i2))
    return ad.scale(ad.sum(ad.square(diff)), 1.0 / n)
