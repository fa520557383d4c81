"""Classification loss and ranking metrics.

Average precision follows the step-wise precision/recall summation used by
the usual detection benchmarks (no 11-point smoothing); thresholds walk the
descending score order with tied scores collapsed into one group.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T


@dataclass
class ScoredSet:
    """Scores in [0, 1] paired with binary labels."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores.shape != self.labels.shape or self.scores.ndim != 1:
            raise ValueError(
                f"scores {self.scores.shape} and labels {self.labels.shape} "
                "must be equal-length 1-D sequences")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")

    def __len__(self) -> int:
        return len(self.scores)

    def require_both_classes(self, what: str) -> None:
        pos = int(self.labels.sum())
        if pos == 0 or pos == len(self.labels):
            raise ValueError(f"{what} needs at least one positive and one negative")


def bce_loss(pred, labels, from_logits: bool = False) -> T.Tensor:
    """Mean binary cross-entropy, differentiable.

    ``pred`` holds probabilities by default; pass ``from_logits=True`` to
    feed raw scores through a numerically exact sigmoid+log path.
    Probabilities are clamped at 1e-12 away from {0, 1}.
    """
    pred = T.as_tensor(pred)
    y = np.asarray(labels, dtype=np.float64)
    if pred.data.shape != y.shape:
        raise ValueError(f"predictions {pred.data.shape} and labels {y.shape} must match")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")
    if from_logits:
        # softplus(z) - z*y == -[y log p + (1-y) log(1-p)] for p = sigmoid(z)
        per_item = T.softplus(pred) - pred * y
    else:
        p = T.clip(pred, 1e-12, 1.0 - 1e-12)
        per_item = -(T.log(p) * y + T.log(1.0 - p) * (1.0 - y))
    return per_item.mean()


def average_precision(scored: ScoredSet) -> float:
    """Area under the stepwise precision/recall curve."""
    scored.require_both_classes("average_precision")
    order = np.argsort(-scored.scores, kind="stable")
    s = scored.scores[order]
    y = scored.labels[order]
    total_pos = int(y.sum())
    ap = 0.0
    tp = 0
    fp = 0
    recall_prev = 0.0
    i = 0
    n = len(s)
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            j += 1
        group_pos = int(y[i:j].sum())
        tp += group_pos
        fp += (j - i) - group_pos
        recall = tp / total_pos
        precision = tp / (tp + fp)
        ap += (recall - recall_prev) * precision
        recall_prev = recall
        i = j
    return ap


def accuracy(scored: ScoredSet, threshold: float) -> float:
    """Fraction of items where (score >= threshold) equals the label."""
    pred = (scored.scores >= threshold).astype(np.int64)
    return float((pred == scored.labels).mean())


def class_accuracies(scored: ScoredSet, threshold: float) -> tuple[float, float, float]:
    """(real accuracy, fake accuracy, their mean); a missing class scores nan."""
    pred = (scored.scores >= threshold).astype(np.int64)
    correct = pred == scored.labels
    real = scored.labels == 0
    fake = scored.labels == 1
    real_acc = float(correct[real].mean()) if real.any() else float("nan")
    fake_acc = float(correct[fake].mean()) if fake.any() else float("nan")
    if real.any() and fake.any():
        mean = 0.5 * (real_acc + fake_acc)
    else:
        mean = real_acc if real.any() else fake_acc
    return real_acc, fake_acc, mean


def balanced_accuracy(scored: ScoredSet, threshold: float) -> float:
    return class_accuracies(scored, threshold)[2]


def tune_threshold(val: ScoredSet, balanced: bool = True) -> float:
    """Threshold maximizing (balanced) accuracy on the validation scores.

    Candidates are midpoints of adjacent distinct sorted scores; with all
    scores equal the lone score itself is the only candidate. Ties resolve
    to the lowest threshold.
    """
    val.require_both_classes("tune_threshold")
    uniq = np.unique(val.scores)
    if len(uniq) == 1:
        return float(uniq[0])
    candidates = (uniq[:-1] + uniq[1:]) / 2.0
    criterion = balanced_accuracy if balanced else accuracy
    best_t = float(candidates[0])
    best_a = criterion(val, best_t)
    for t in candidates[1:]:
        a = criterion(val, float(t))
        if a > best_a:
            best_a = a
            best_t = float(t)
    return best_t


@dataclass
class GeneratorMetrics:
    generator_id: str
    n_real: int
    n_fake: int
    ap: float
    acc: float
    acc_real: float
    acc_fake: float


@dataclass
class MetricsReport:
    """Per-generator AP/accuracy table plus the mean row."""

    rows: list[GeneratorMetrics] = field(default_factory=list)
    threshold: float = 0.5
    perturbation: str = "none"

    @property
    def mean_ap(self) -> float:
        return float(np.mean([r.ap for r in self.rows])) if self.rows else float("nan")

    @property
    def mean_acc(self) -> float:
        return float(np.mean([r.acc for r in self.rows])) if self.rows else float("nan")

    def to_tsv(self) -> str:
        lines = [f"# threshold={self.threshold!r}\tperturbation={self.perturbation}"]
        lines.append("generator\tn_real\tn_fake\tAP\tAcc\tAcc_real\tAcc_fake")
        for r in self.rows:
            lines.append(f"{r.generator_id}\t{r.n_real}\t{r.n_fake}\t"
                         f"{r.ap:.4f}\t{r.acc:.4f}\t{r.acc_real:.4f}\t{r.acc_fake:.4f}")
        lines.append(f"mean\t-\t-\t{self.mean_ap:.4f}\t{self.mean_acc:.4f}\t-\t-")
        return "\n".join(lines) + "\n"
