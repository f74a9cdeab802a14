"""MCP confidence scoring and OOD / calibration metrics.

In-distribution samples are the positive class throughout: a good detector
gives them higher confidence than OOD samples, so higher AUROC and AUPR are
better and FPR-at-95%-TPR counts OOD samples that slip past the threshold.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

DEFAULT_BINS = 15


@dataclass(frozen=True)
class ScoredPrediction:
    probs: np.ndarray
    confidence: float
    predicted: int
    label: int  # true class, or -1 for OOD samples
    in_distribution: bool = True

    @property
    def correct(self) -> bool:
        return self.in_distribution and self.predicted == self.label


def score_predictions(probs, labels=None, in_distribution: bool = True) -> list[ScoredPrediction]:
    """Wrap rows of class probabilities; argmax ties go to the lowest index."""
    probs = np.asarray(probs, dtype=np.float64)
    if labels is None or not in_distribution:
        labels = np.full(probs.shape[0], -1)
    out = []
    for row, label in zip(probs, labels):
        pred = int(np.argmax(row))
        out.append(ScoredPrediction(row, float(row[pred]), pred, int(label), in_distribution))
    return out


def _sweep(scores_in, scores_out):
    """Cumulative (TP, FP) counts at each distinct threshold, highest first."""
    pos = np.asarray(scores_in, dtype=np.float64).ravel()
    neg = np.asarray(scores_out, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ContractError("need at least one in-distribution and one OOD score")
    scores = np.concatenate([pos, neg])
    is_pos = np.concatenate([np.ones(pos.size, dtype=np.int64), np.zeros(neg.size, dtype=np.int64)])
    order = np.argsort(-scores, kind="stable")
    scores, is_pos = scores[order], is_pos[order]
    # last index of each group of equal scores
    ends = np.flatnonzero(np.r_[scores[1:] != scores[:-1], True])
    tp = np.cumsum(is_pos)[ends]
    fp = (ends + 1) - tp
    return tp, fp, pos.size, neg.size


def auroc(scores_in, scores_out) -> float:
    """Area under the ROC curve = P(s_in > s_out) + P(tie) / 2.

    Trapezoids over the threshold sweep; integer arithmetic until the final
    division so it matches a pairwise count exactly.
    """
    tp, fp, n_pos, n_neg = _sweep(scores_in, scores_out)
    tp_prev = np.r_[0, tp[:-1]]
    fp_prev = np.r_[0, fp[:-1]]
    twice_area = int(((fp - fp_prev) * (tp + tp_prev)).sum())
    return twice_area / (2 * n_pos * n_neg)


def aupr(scores_in, scores_out) -> float:
    """Average precision with in-distribution positive.

    Step-wise sum of recall increments times precision, one step per
    distinct score. A tie group enters all at once, so tied OOD samples
    count against every tied in-distribution sample.
    """
    tp, fp, n_pos, _ = _sweep(scores_in, scores_out)
    precision = tp / (tp + fp)
    recall_step = np.diff(np.r_[0, tp]) / n_pos
    return float((recall_step * precision).sum())


def fpr_at_95_tpr(scores_in, scores_out) -> float:
    """FPR at the strictest threshold whose TPR reaches 0.95 (score >= t is positive)."""
    tp, fp, n_pos, n_neg = _sweep(scores_in, scores_out)
    # 20 * tp >= 19 * n_pos is TPR >= 0.95 without rounding trouble
    k = int(np.flatnonzero(20 * tp >= 19 * n_pos)[0])
    return float(fp[k] / n_neg)


def _conf_correct(predictions):
    if len(predictions) == 0:
        raise ContractError("need at least one prediction")
    conf = np.array([p.confidence for p in predictions], dtype=np.float64)
    correct = np.array([p.correct for p in predictions], dtype=np.float64)
    return conf, correct


def reliability_table(predictions, num_bins: int = DEFAULT_BINS) -> list[tuple[int, int, float, float]]:
    """(bin, count, accuracy, mean confidence) for each equal-width bin.

    Bin b covers [b/B, (b+1)/B); confidence 1.0 lands in the last bin.
    Empty bins report accuracy and confidence 0.
    """
    if num_bins < 1:
        raise ContractError(f"num_bins must be >= 1, got {num_bins}")
    conf, correct = _conf_correct(predictions)
    idx = np.minimum(np.floor(conf * num_bins).astype(np.int64), num_bins - 1)
    rows = []
    for b in range(num_bins):
        members = idx == b
        n = int(members.sum())
        if n:
            rows.append((b, n, float(correct[members].mean()), float(conf[members].mean())))
        else:
            rows.append((b, 0, 0.0, 0.0))
    return rows


def ece(predictions, num_bins: int = DEFAULT_BINS) -> float:
    """sum_b (n_b / N) |accuracy_b - confidence_b|; empty bins add nothing."""
    table = reliability_table(predictions, num_bins)
    total = sum(n for _, n, _, _ in table)
    return float(sum(n / total * abs(acc - c) for _, n, acc, c in table))


@dataclass(frozen=True)
class OodMetrics:
    auroc: float
    aupr: float
    fpr_at_95_tpr: float
    ece: float
    median_confidence_in: float = float("nan")
    median_confidence_out: float = float("nan")

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def ensemble_probs(models, inputs) -> np.ndarray:
    """Average of the members' class-probability rows."""
    from .models import predict_proba

    if not isinstance(models, (list, tuple)):
        models = [models]
    if not models:
        raise ContractError("need at least one model")
    return sum(predict_proba(m, inputs) for m in models) / len(models)


def metrics_from_predictions(pred_in, pred_out, num_bins: int = DEFAULT_BINS) -> OodMetrics:
    s_in = [p.confidence for p in pred_in]
    s_out = [p.confidence for p in pred_out]
    return OodMetrics(
        auroc=auroc(s_in, s_out),
        aupr=aupr(s_in, s_out),
        fpr_at_95_tpr=fpr_at_95_tpr(s_in, s_out),
        ece=ece(pred_in, num_bins),
        median_confidence_in=float(np.median(s_in)),
        median_confidence_out=float(np.median(s_out)),
    )


def ood_report(model, in_split, out_split, num_bins: int = DEFAULT_BINS) -> OodMetrics:
    """MCP-based OOD metrics; ``model`` may be a single model or an ensemble list."""
    pred_in = score_predictions(ensemble_probs(model, in_split.features), in_split.labels)
    pred_out = score_predictions(ensemble_probs(model, out_split.features), in_distribution=False)
    return metrics_from_predictions(pred_in, pred_out, num_bins)
