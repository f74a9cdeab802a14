"""Two-phase semi-supervised training with deep-ensemble pseudo-labels.

Phase 1 trains each ensemble member on labeled cross-entropy plus a KL
consistency term between a weak and a strong perturbation of unlabeled
inputs. The averaged ensemble then pseudo-labels the unlabeled pool once,
keeping samples whose averaged max-class probability clears the threshold.
Phase 2 continues training on labeled + pseudo-labeled data and writes a
member back over its phase-1 predecessor whenever its validation accuracy
strictly improves.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Dataset, sub_seed
from .errors import ContractError, NonFiniteError, TrainingError
from .losses import PROB_FLOOR, NdaConfig, classification_loss
from .models import build_model, forward_batch
from .ood import ensemble_probs
from .training import TrainConfig, evaluate, split_dataset, train_epoch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SslConfig:
    labeled_fraction: float = 0.1
    validation_fraction: float = 0.1
    test_fraction: float = 0.4
    ensemble_size: int = 3
    threshold: float = 0.95
    phase1_epochs: int = 20
    phase2_epochs: int = 20
    weak_noise: float = 0.2
    strong_noise: float = 0.5
    mask_fraction: float = 0.25
    consistency_weight: float = 1.0
    nda_phase2: bool = False
    nda: NdaConfig = field(default_factory=lambda: NdaConfig(beta=0.3, margin=10.0, mean_loss="prototypical"))
    batch_size: int = 32
    learning_rate: float = 0.02
    momentum: float = 0.9
    hidden_dims: tuple = (32,)
    latent_dim: int = 16
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.threshold <= 1:
            raise ContractError(f"threshold must be in (0, 1], got {self.threshold}")
        if self.ensemble_size < 1:
            raise ContractError("ensemble_size must be >= 1")
        if not 0 <= self.mask_fraction < 1:
            raise ContractError("mask_fraction must be in [0, 1)")
        if self.phase1_epochs < 0 or self.phase2_epochs < 0:
            raise ContractError("phase epochs must be >= 0")


@dataclass(frozen=True)
class PseudoLabelSet:
    index: np.ndarray  # rows of the unlabeled dataset
    ids: np.ndarray
    labels: np.ndarray
    confidence: np.ndarray
    threshold: float

    def __len__(self):
        return self.index.size


def consistency_loss(probs_weak: Tensor, probs_strong: Tensor) -> Tensor:
    """Batch mean of KL(weak || strong), both floored at 1e-12."""
    if probs_weak.shape != probs_strong.shape or probs_weak.ndim != 2:
        raise ContractError(f"probability batches differ: {probs_weak.shape} vs {probs_strong.shape}")
    log_w = ad.log(ad.clamp_min(probs_weak, PROB_FLOOR))
    log_s = ad.log(ad.clamp_min(probs_strong, PROB_FLOOR))
    return ad.mean(ad.sum(ad.mul(probs_weak, ad.sub(log_w, log_s)), axis=1))


def perturb(inputs, kind: str, strength: float, rng, mask_fraction: float = 0.0) -> np.ndarray:
    """Gaussian noise (``weak``), or noise plus per-row coordinate masking (``strong``).

    A strong view zeroes exactly ``round(mask_fraction * dim)`` coordinates
    of every row.
    """
    if strength < 0:
        raise ContractError(f"strength must be >= 0, got {strength}")
    if not 0 <= mask_fraction < 1:
        raise ContractError(f"mask fraction must be in [0, 1), got {mask_fraction}")
    if kind not in ("weak", "strong"):
        raise ContractError(f"unknown perturbation kind {kind!r}")
    x = np.array(inputs, dtype=np.float64)
    x += rng.normal(0.0, 1.0, size=x.shape) * strength
    if kind == "strong":
        n_mask = int(round(mask_fraction * x.shape[1]))
        if n_mask:
            cols = np.argsort(rng.random(x.shape), axis=1)[:, :n_mask]
            np.put_along_axis(x, cols, 0.0, axis=1)
    return x


def _member_step(model, optimizer, xb, yb, ub, config, rng):
    out = forward_batch(model, xb)
    loss = classification_loss(out.probs, yb)
    if ub is not None and config.consistency_weight > 0:
        weak = perturb(ub, "weak", config.weak_noise, rng)
        strong = perturb(ub, "strong", config.strong_noise, rng, config.mask_fraction)
        # the weak view is the target: no gradient through it
        target = Tensor(forward_batch(model, weak).probs.data)
        loss = ad.add(loss, ad.scale(consistency_loss(target, forward_batch(model, strong).probs),
                                     config.consistency_weight))
    ad.backward(loss, optimizer.params)
    optimizer.step()
    return loss.item()


def phase1_train(models, labeled: Dataset, unlabeled: Dataset | None, config: SslConfig):
    """Train every member independently; returns the models and per-member loss curves."""
    curves = []
    for i, model in enumerate(models):
        rng = np.random.default_rng(sub_seed(config.seed, f"phase1-member{i}"))
        opt = ad.SGD(model.parameters(), config.learning_rate, config.momentum)
        n_unl = 0 if unlabeled is None else len(unlabeled)
        steps = max(math.ceil(len(labeled) / config.batch_size), math.ceil(n_unl / config.batch_size))
        curve = []
        for epoch in range(config.phase1_epochs):
            lab_order = np.concatenate([rng.permutation(len(labeled))
                                        for _ in range(math.ceil(steps * config.batch_size / len(labeled)))])
            unl_order = rng.permutation(n_unl) if n_unl else None
            total = 0.0
            for s in range(steps):
                lb = lab_order[s * config.batch_size:(s + 1) * config.batch_size]
                ub = None
                if unl_order is not None:
                    chunk = unl_order[s * config.batch_size:(s + 1) * config.batch_size]
                    ub = unlabeled.features[chunk] if chunk.size else None
                try:
                    total += _member_step(model, opt, labeled.features[lb], labeled.labels[lb], ub, config, rng)
                except NonFiniteError as exc:
                    raise TrainingError(f"member {i}: non-finite loss at phase-1 epoch {epoch}, step {s}",
                                        {"member": i, "epoch": epoch, "step": s}) from exc
            curve.append(total / steps)
        curves.append(curve)
    return models, curves


def pseudo_label(models, unlabeled: Dataset, threshold: float) -> PseudoLabelSet:
    """Keep samples whose ensemble-averaged max probability is strictly above ``threshold``."""
    if not 0 < threshold <= 1:
        raise ContractError(f"threshold must be in (0, 1], got {threshold}")
    probs = ensemble_probs(list(models), unlabeled.features)
    conf = probs.max(axis=1)
    keep = np.flatnonzero(conf > threshold)
    return PseudoLabelSet(keep, unlabeled.ids[keep], probs[keep].argmax(axis=1),
                          conf[keep], threshold)


@dataclass
class Phase2Report:
    val_history: list[list[float]] = field(default_factory=list)  # per member, per epoch
    updates: list[list[int]] = field(default_factory=list)  # epochs where the predecessor was replaced
    start_val: list[float] = field(default_factory=list)


def phase2_train(models, labeled: Dataset, pseudo: PseudoLabelSet, unlabeled: Dataset | None,
                 validation: Dataset, config: SslConfig):
    """Continue training on labeled + pseudo-labeled data with fresh optimizers.

    ``models`` are the phase-1 predecessors; each is overwritten in place
    whenever its continuing copy beats the best validation accuracy so far.
    """
    if len(pseudo) == 0 or unlabeled is None:
        warnings.warn("empty pseudo-label set; phase 2 trains on labeled data only", stacklevel=2)
        train_set = labeled
    else:
        pl = unlabeled.subset(pseudo.index, name="pseudo")
        pl.labels = pseudo.labels.astype(np.int64)
        train_set = Dataset(np.vstack([labeled.features, pl.features]),
                            np.concatenate([labeled.labels, pl.labels]), labeled.num_classes,
                            name="labeled+pseudo", ids=np.concatenate([labeled.ids, pl.ids]))
    nda = config.nda if config.nda_phase2 else replace(config.nda, beta=0.0)
    tcfg = TrainConfig(epochs=max(config.phase2_epochs, 1), batch_size=config.batch_size,
                       learning_rate=config.learning_rate, momentum=config.momentum,
                       seed=config.seed, nda=nda)
    report = Phase2Report()
    for i, predecessor in enumerate(models):
        rng = np.random.default_rng(sub_seed(config.seed, f"phase2-member{i}"))
        member = predecessor.copy()
        opt = ad.SGD(member.parameters(), config.learning_rate, config.momentum)
        best = evaluate(predecessor, validation)[0]
        report.start_val.append(best)
        history, updates = [], []
        for epoch in range(config.phase2_epochs):
            train_epoch(member, opt, train_set, tcfg, epoch, rng)
            acc = evaluate(member, validation)[0]
            history.append(acc)
            if acc > best:
                best = acc
                predecessor.load_state(member)
                updates.append(epoch)
        report.val_history.append(history)
        report.updates.append(updates)
    return models, report


@dataclass
class SslReport:
    phase1_member_val: list[float]
    phase1_ensemble_test: float
    pseudo: PseudoLabelSet
    pseudo_accuracy: float
    phase2: Phase2Report
    phase2_member_val: list[float]
    phase2_ensemble_test: float
    labeled_count: int
    unlabeled_count: int


def ssl_splits(dataset: Dataset, config: SslConfig):
    """(labeled, validation, unlabeled, test), all stratified and seeded."""
    pool, _, test = split_dataset(dataset, (1.0 - config.test_fraction, 0.0, config.test_fraction),
                                  seed=sub_seed(config.seed, "split-test"))
    rest = 1.0 - config.labeled_fraction - config.validation_fraction
    unlabeled, val, labeled = split_dataset(pool, (rest, config.validation_fraction, config.labeled_fraction),
                                            seed=sub_seed(config.seed, "split-labeled"))
    if labeled is None or np.count_nonzero(labeled.class_counts()) < dataset.num_classes:
        raise ContractError("labeled split must contain every class")
    return labeled, val, unlabeled, test


def run_ssl(dataset: Dataset, config: SslConfig) -> tuple[SslReport, list]:
    """Full two-phase pipeline; returns the report and the final ensemble."""
    labeled, val, unlabeled, test = ssl_splits(dataset, config)
    models = [build_model(dataset.dim, config.hidden_dims, config.latent_dim, dataset.num_classes,
                          seed=sub_seed(config.seed, f"init-member{i}"))
              for i in range(config.ensemble_size)]
    phase1_train(models, labeled, unlabeled, config)
    p1_val = [evaluate(m, val)[0] for m in models]
    p1_test = evaluate(models, test)[0]
    pseudo = pseudo_label(models, unlabeled, config.threshold)
    truth = unlabeled.labels[pseudo.index]
    pseudo_acc = float(np.mean(truth == pseudo.labels)) if len(pseudo) else float("nan")
    log.info("pseudo-labeled %d of %d samples (accuracy %.3f)", len(pseudo), len(unlabeled), pseudo_acc)
    _, p2 = phase2_train(models, labeled, pseudo, unlabeled, val, config)
    report = SslReport(
        phase1_member_val=p1_val,
        phase1_ensemble_test=p1_test,
        pseudo=pseudo,
        pseudo_accuracy=pseudo_acc,
        phase2=p2,
        phase2_member_val=[evaluate(m, val)[0] for m in models],
        phase2_ensemble_test=evaluate(models, test)[0],
        labeled_count=len(labeled),
        unlabeled_count=len(unlabeled),
    )
    return report, models
