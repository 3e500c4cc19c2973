"""Evaluation metrics: accuracy, weighted OVR AUC, F1, kappa, log losses.

All functions are pure. Probabilistic log loss clamps scores to
[1e-15, 1 - 1e-15]; the hard variant first replaces scores with a one-hot of
the predicted label, so each error costs -ln(1e-15) ~ 34.539. Both are
reported because hard-label pipelines produce the latter magnitudes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_LOSS_CLAMP = 1e-15


@dataclass(frozen=True)
class MetricsReport:
    """Flat evaluation summary plus a per-class breakdown.

    per_class maps a class index to support, precision, recall, f1, and auc
    (auc is None for classes without both positives and negatives).
    """

    accuracy: float
    weighted_ovr_auc: float
    weighted_f1: float
    log_loss: float
    log_loss_hard: float
    cohen_kappa: float
    macro_precision: float
    macro_recall: float
    n: int
    per_class: tuple[dict, ...]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "weighted_ovr_auc": self.weighted_ovr_auc,
            "weighted_f1": self.weighted_f1,
            "log_loss": self.log_loss,
            "log_loss_hard": self.log_loss_hard,
            "cohen_kappa": self.cohen_kappa,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "n": self.n,
            "per_class": list(self.per_class),
        }


def _check_scores(scores: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] == 0 or scores.shape[1] < 2:
        raise ValueError("scores must be a non-empty (n, num_classes>=2) matrix")
    return scores


def _check_labels(labels: np.ndarray, n: int, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ValueError("labels must align with scores/predictions")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError("labels outside 0..num_classes-1")
    return labels


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the average rank."""
    _, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    upper = np.cumsum(counts)
    average = upper - counts + (counts + 1) / 2.0
    return average[inverse]


def weighted_ovr_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Support-weighted mean of per-class one-vs-rest rank AUC values.

    Per class, AUC is the Mann-Whitney statistic of that class's score column
    against the class indicator, ties scored by average rank. Classes lacking
    positives or negatives are excluded and the support weights renormalized.
    """
    scores = _check_scores(scores)
    labels = _check_labels(labels, scores.shape[0], scores.shape[1])
    total_weight = 0.0
    accum = 0.0
    for c in range(scores.shape[1]):
        positive = labels == c
        n_pos = int(positive.sum())
        n_neg = scores.shape[0] - n_pos
        if n_pos == 0 or n_neg == 0:
            continue
        ranks = _average_ranks(scores[:, c])
        auc = (ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
        accum += n_pos * auc
        total_weight += n_pos
    if total_weight == 0:
        raise ValueError("AUC undefined: no class has both positives and negatives")
    return float(accum / total_weight)


def confusion_matrix(pred_labels: np.ndarray, labels: np.ndarray, num_classes: int) -> np.ndarray:
    """(num_classes, num_classes) counts; rows = true class, columns = predicted."""
    pred = np.asarray(pred_labels, dtype=np.int64)
    true = np.asarray(labels, dtype=np.int64)
    if pred.shape != true.shape or pred.ndim != 1 or pred.size == 0:
        raise ValueError("predictions and labels must be equal-length non-empty vectors")
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(matrix, (true, pred), 1)
    return matrix


def _per_class_prf(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    tp = np.diag(matrix).astype(np.float64)
    pred_totals = matrix.sum(axis=0).astype(np.float64)
    true_totals = matrix.sum(axis=1).astype(np.float64)
    precision = np.divide(tp, pred_totals, out=np.zeros_like(tp), where=pred_totals > 0)
    recall = np.divide(tp, true_totals, out=np.zeros_like(tp), where=true_totals > 0)
    pr = precision + recall
    f1 = np.divide(2.0 * precision * recall, pr, out=np.zeros_like(tp), where=pr > 0)
    return precision, recall, f1


def weighted_f1(pred_labels: np.ndarray, labels: np.ndarray, num_classes: int | None = None) -> float:
    """Per-class F1 weighted by true-class support (F1 = 0 where P + R = 0)."""
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(max(np.max(pred_labels), np.max(labels))) + 1
    matrix = confusion_matrix(pred_labels, labels, num_classes)
    _, _, f1 = _per_class_prf(matrix)
    support = matrix.sum(axis=1)
    return float((f1 * support).sum() / support.sum())


def cohen_kappa(pred_labels: np.ndarray, labels: np.ndarray, num_classes: int | None = None) -> float:
    """(p_o - p_e) / (1 - p_e) with p_e from marginal products."""
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(max(np.max(pred_labels), np.max(labels))) + 1
    matrix = confusion_matrix(pred_labels, labels, num_classes)
    n = matrix.sum()
    p_o = np.diag(matrix).sum() / n
    p_e = float((matrix.sum(axis=0) * matrix.sum(axis=1)).sum()) / (n * n)
    if p_e >= 1.0:
        raise ValueError("kappa undefined: both labelings constant and equal")
    return float((p_o - p_e) / (1.0 - p_e))


def log_loss(scores: np.ndarray, labels: np.ndarray, clamp: float = LOG_LOSS_CLAMP) -> float:
    """Mean negative log of the (clamped) true-class probability."""
    scores = _check_scores(scores)
    labels = _check_labels(labels, scores.shape[0], scores.shape[1])
    p_true = scores[np.arange(scores.shape[0]), labels]
    return float(np.mean(-np.log(np.clip(p_true, clamp, 1.0 - clamp))))


def log_loss_hard(
    pred_labels: np.ndarray, labels: np.ndarray, clamp: float = LOG_LOSS_CLAMP
) -> float:
    """Log loss of one-hot predicted labels: each error costs -ln(clamp)."""
    pred = np.asarray(pred_labels, dtype=np.int64)
    true = np.asarray(labels, dtype=np.int64)
    if pred.shape != true.shape or pred.size == 0:
        raise ValueError("predictions and labels must be equal-length non-empty vectors")
    errors = float(np.mean(pred != true))
    return float(errors * -np.log(clamp) + (1.0 - errors) * -np.log(1.0 - clamp))


def accuracy(pred_labels: np.ndarray, labels: np.ndarray) -> float:
    pred = np.asarray(pred_labels, dtype=np.int64)
    true = np.asarray(labels, dtype=np.int64)
    if pred.shape != true.shape or pred.size == 0:
        raise ValueError("predictions and labels must be equal-length non-empty vectors")
    return float(np.mean(pred == true))


def evaluate_predictions(scores: np.ndarray, labels: np.ndarray) -> MetricsReport:
    """Full report from probability scores; predicted label = argmax."""
    scores = _check_scores(scores)
    num_classes = scores.shape[1]
    labels = _check_labels(labels, scores.shape[0], num_classes)
    pred = scores.argmax(axis=1)
    matrix = confusion_matrix(pred, labels, num_classes)
    precision, recall, f1 = _per_class_prf(matrix)
    support = matrix.sum(axis=1)

    per_class = []
    for c in range(num_classes):
        positive = labels == c
        n_pos = int(positive.sum())
        auc_c: float | None = None
        if 0 < n_pos < scores.shape[0]:
            ranks = _average_ranks(scores[:, c])
            auc_c = float(
                (ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0)
                / (n_pos * (scores.shape[0] - n_pos))
            )
        per_class.append(
            {
                "class_index": c,
                "support": int(support[c]),
                "precision": float(precision[c]),
                "recall": float(recall[c]),
                "f1": float(f1[c]),
                "auc": auc_c,
            }
        )

    return MetricsReport(
        accuracy=accuracy(pred, labels),
        weighted_ovr_auc=weighted_ovr_auc(scores, labels),
        weighted_f1=float((f1 * support).sum() / support.sum()),
        log_loss=log_loss(scores, labels),
        log_loss_hard=log_loss_hard(pred, labels),
        cohen_kappa=cohen_kappa(pred, labels, num_classes),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        n=scores.shape[0],
        per_class=tuple(per_class),
    )
