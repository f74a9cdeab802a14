"""The NDA training loop: epoch-start class means, paired batches, Eq.-style
weighted loss over a shared-weight pair of forward passes, SGD step."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .data import Dataset, sub_seed
from .discriminant import Diagnostics, diagnose_latents
from .errors import ContractError, NonFiniteError, TrainingError
from .losses import (NdaConfig, classification_loss, compute_class_means, mean_loss,
                     nda_total_loss, sample_pairs, siamese_loss)
from .models import Model, forward_siamese, latent_features
from .ood import ScoredPrediction, score_predictions

log = logging.getLogger(__name__)

COMPONENTS = ("class_a", "class_b", "mean_a", "mean_b", "siamese", "total")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    lr_decay: float = 1.0  # multiplied in every `lr_decay_every` epochs
    lr_decay_every: int = 0
    seed: int = 0
    nda: NdaConfig = field(default_factory=NdaConfig)
    validation_fraction: float = 0.2
    use_mean_loss: bool = True
    use_siamese: bool = True
    alternate: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ContractError(f"batch_size must be >= 2, got {self.batch_size}")
        if not 0 <= self.validation_fraction <= 0.5:
            raise ContractError("validation_fraction must be in [0, 0.5]")
        if self.learning_rate <= 0 or not 0 <= self.momentum < 1:
            raise ContractError("need learning_rate > 0 and momentum in [0, 1)")


@dataclass
class EpochRecord:
    epoch: int
    losses: dict
    val_accuracy: float
    fisher_score: float
    intra_distance: float
    inter_distance: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_accuracy: float = float("nan")
    test_accuracy: float = float("nan")
    mean_refreshes: int = 0

    def series(self, name: str) -> np.ndarray:
        if name in COMPONENTS:
            return np.array([r.losses[name] for r in self.epochs])
        return np.array([getattr(r, name) for r in self.epochs])


def split_dataset(dataset: Dataset, fractions=(0.8, 0.2, 0.0), seed: int = 0):
    """Stratified, seeded (train, val, test) split.

    Per class, the val and test counts are ``round(fraction * n_class)`` and
    train keeps the rest. A split with a positive fraction that would get no
    sample of some class is an error.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ContractError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    for j in range(dataset.num_classes):
        members = np.flatnonzero(dataset.labels == j)
        if members.size == 0:
            continue
        members = rng.permutation(members)
        n_val = int(round(fractions[1] * members.size))
        n_test = int(round(fractions[2] * members.size))
        n_train = members.size - n_val - n_test
        sizes = (n_train, n_val, n_test)
        for s, f in zip(sizes, fractions):
            if f > 0 and s < 1:
                raise ContractError(f"class {j} has {members.size} samples, too few to stratify")
        cuts = np.cumsum(sizes)[:-1]
        for part, chunk in zip(parts, np.split(members, cuts)):
            part.append(chunk)
    out = []
    for part, name in zip(parts, ("train", "val", "test")):
        index = np.sort(np.concatenate(part)) if part else np.array([], dtype=np.intp)
        # an empty split is returned as None
        out.append(dataset.subset(index, name=f"{dataset.name}-{name}") if index.size else None)
    return tuple(out)


def evaluate(model, split: Dataset) -> tuple[float, list[ScoredPrediction]]:
    """Accuracy of argmax predictions plus one ScoredPrediction per sample."""
    if split is None or len(split) == 0:
        raise ContractError("evaluation split is empty")
    from .ood import ensemble_probs

    preds = score_predictions(ensemble_probs(model, split.features), split.labels)
    acc = float(np.mean([p.correct for p in preds]))
    return acc, preds


def epoch_nda_config(config: TrainConfig, epoch: int) -> tuple[NdaConfig, bool, bool]:
    """Effective (nda config, mean on, siamese on) for an epoch.

    With alternation, even epochs train the mean loss and odd epochs the
    Siamese loss.
    """
    use_mean, use_siamese = config.use_mean_loss, config.use_siamese
    if config.alternate:
        use_mean = use_mean and epoch % 2 == 0
        use_siamese = use_siamese and epoch % 2 == 1
    return config.nda, use_mean, use_siamese


def nda_step_loss(model: Model, pairs, means, nda: NdaConfig, use_mean=True, use_siamese=True):
    """Build the five component losses and the weighted total on one graph."""
    ra, rb = forward_siamese(model, pairs.batch_a, pairs.batch_b)
    zero = ad.Tensor(0.0)
    parts = {
        "class_a": classification_loss(ra.probs, pairs.labels_a),
        "class_b": classification_loss(rb.probs, pairs.labels_b),
        "mean_a": mean_loss(ra.latent, pairs.labels_a, means, nda.mean_loss) if use_mean else zero,
        "mean_b": mean_loss(rb.latent, pairs.labels_b, means, nda.mean_loss) if use_mean else zero,
        "siamese": siamese_loss(ra.latent, rb.latent, pairs.diff_flags, nda) if use_siamese else zero,
    }
    parts["total"] = nda_total_loss(parts["class_a"], parts["class_b"], parts["mean_a"],
                                    parts["mean_b"], parts["siamese"], nda)
    return parts


def train_epoch(model, optimizer, train_set: Dataset, config: TrainConfig, epoch: int, rng) -> dict:
    """One pass over ``train_set``; returns the per-batch average of each component."""
    nda, use_mean, use_siamese = epoch_nda_config(config, epoch)
    means = compute_class_means(model, train_set, epoch=epoch)
    order = rng.permutation(len(train_set))
    sums = dict.fromkeys(COMPONENTS, 0.0)
    batches = 0
    for b, start in enumerate(range(0, len(order), config.batch_size)):
        anchors = order[start:start + config.batch_size]
        if anchors.size < 2 and batches:
            continue
        pairs = sample_pairs(train_set, anchors.size, nda.pair_fraction, rng, anchors=anchors)
        try:
            parts = nda_step_loss(model, pairs, means, nda, use_mean, use_siamese)
        except NonFiniteError as exc:
            raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}: {exc}",
                                {"epoch": epoch, "batch": b}) from exc
        values = {k: v.item() for k, v in parts.items()}
        if not np.isfinite(values["total"]):
            raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}",
                                {"epoch": epoch, "batch": b, "losses": values})
        ad.backward(parts["total"], optimizer.params)
        optimizer.step()
        for k in COMPONENTS:
            sums[k] += values[k]
        batches += 1
    return {k: v / batches for k, v in sums.items()}


def _learning_rate(config: TrainConfig, epoch: int) -> float:
    if config.lr_decay_every > 0:
        return config.learning_rate * config.lr_decay ** (epoch // config.lr_decay_every)
    return config.learning_rate


def train(model: Model, splits, config: TrainConfig, diagnostics_split: str = "train",
          on_epoch=None) -> TrainReport:
    """Train ``model`` in place and restore the best-validation parameters.

    ``splits`` is (train, val, test); val and test may be None. Without a
    validation split the last epoch is kept. ``on_epoch(record)`` is called
    after each epoch's diagnostics are in.
    """
    train_set, val_set, test_set = splits
    if train_set is None or len(train_set) == 0:
        raise ContractError("train split is empty")
    missing = np.flatnonzero(train_set.class_counts() == 0)
    if missing.size:
        raise ContractError(f"classes {missing.tolist()} are absent from the train split")
    if train_set.num_classes != model.num_classes:
        raise ContractError(f"model has {model.num_classes} outputs, data has {train_set.num_classes} classes")
    rng = np.random.default_rng(sub_seed(config.seed, "pairing"))
    optimizer = ad.SGD(model.parameters(), config.learning_rate, config.momentum)
    report = TrainReport()
    best_state = None
    diag_set = {"train": train_set, "val": val_set, "test": test_set}[diagnostics_split] or train_set
    for epoch in range(config.epochs):
        optimizer.learning_rate = _learning_rate(config, epoch)
        losses = train_epoch(model, optimizer, train_set, config, epoch, rng)
        report.mean_refreshes += 1
        val_acc = evaluate(model, val_set)[0] if val_set is not None else float("nan")
        diag = diagnose_latents(latent_features(model, diag_set.features), diag_set.labels,
                                diag_set.num_classes)
        report.epochs.append(EpochRecord(epoch, losses, val_acc, diag.fisher_score,
                                         diag.intra_distance, diag.inter_distance))
        if on_epoch is not None:
            on_epoch(report.epochs[-1])
        if val_set is None or report.best_epoch < 0 or val_acc > report.best_val_accuracy:
            report.best_epoch = epoch
            report.best_val_accuracy = val_acc
            best_state = model.copy()
        log.debug("epoch %d total %.5f val %.4f fisher %.4f", epoch, losses["total"], val_acc,
                  diag.fisher_score)
    if best_state is not None:
        model.load_state(best_state)
    if test_set is not None:
        report.test_accuracy = evaluate(model, test_set)[0]
    return report


def final_diagnostics(report: TrainReport) -> Diagnostics:
    last = report.epochs[-1]
    return Diagnostics(last.fisher_score, last.intra_distance, last.inter_distance)


def baseline_config(config: TrainConfig) -> TrainConfig:
    """Same schedule with beta = 0: plain cross-entropy on both pair branches."""
    return replace(config, nda=replace(config.nda, beta=0.0))
