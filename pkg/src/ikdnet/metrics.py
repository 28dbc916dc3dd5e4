"""Segmentation metrics over a K x K confusion matrix (truth rows, prediction
columns): overall/per-class accuracy, IoU, Cohen's kappa, per-class F1.

Per-class values with an empty denominator are reported as NaN and excluded
from the class means; the excluded set is carried in the summary.
"""

import io
from dataclasses import dataclass, field

import numpy as np

from .engine import ContractViolation


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (K,K) int64

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ContractViolation(f"confusion matrix must be square, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise ContractViolation("confusion matrix counts must be nonnegative")

    @property
    def num_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def merge(self, other):
        if other.num_classes != self.num_classes:
            raise ContractViolation(
                f"cannot merge {other.num_classes}-class into {self.num_classes}-class matrix"
            )
        return ConfusionMatrix(self.counts + other.counts)

    def true_positive(self):
        return np.diag(self.counts)

    def false_negative(self):
        return self.counts.sum(axis=1) - np.diag(self.counts)

    def false_positive(self):
        return self.counts.sum(axis=0) - np.diag(self.counts)


def confusion_matrix(pred, truth, num_classes, ignore_mask=None):
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)
    truth = np.asarray(truth, dtype=np.int64).reshape(-1)
    if pred.shape != truth.shape:
        raise ContractViolation(f"pred {pred.shape} vs truth {truth.shape}")
    if ignore_mask is not None:
        keep = ~np.asarray(ignore_mask, dtype=bool).reshape(-1)
        pred, truth = pred[keep], truth[keep]
    if pred.size:
        for name, arr in (("pred", pred), ("truth", truth)):
            if arr.min() < 0 or arr.max() >= num_classes:
                raise ContractViolation(
                    f"{name} label {arr.max() if arr.max() >= num_classes else arr.min()} "
                    f"outside [0, {num_classes})"
                )
    counts = np.bincount(
        truth * num_classes + pred, minlength=num_classes * num_classes
    ).reshape(num_classes, num_classes)
    return ConfusionMatrix(counts)


@dataclass
class MetricsSummary:
    overall_accuracy: float
    mean_accuracy: float
    kappa: float
    mean_iou: float
    class_accuracy: np.ndarray  # NaN where undefined
    class_iou: np.ndarray
    undefined_classes: list = field(default_factory=list)


def _nanmean_or_nan(values):
    finite = values[~np.isnan(values)]
    return float(finite.mean()) if finite.size else float("nan")


def summary_metrics(cm):
    if cm.total == 0:
        raise ContractViolation("summary_metrics: empty confusion matrix")
    tp = cm.true_positive().astype(np.float64)
    fn = cm.false_negative().astype(np.float64)
    fp = cm.false_positive().astype(np.float64)
    total = float(cm.total)
    oa = float(tp.sum() / total)

    with np.errstate(invalid="ignore", divide="ignore"):
        acc = np.where(tp + fn > 0, tp / (tp + fn), np.nan)
        iou = np.where(tp + fp + fn > 0, tp / (tp + fp + fn), np.nan)

    pe = float((((tp + fp) * (tp + fn)).sum()) / (total * total))
    if pe >= 1.0:
        kappa = 1.0 if oa == 1.0 else float("nan")
    else:
        kappa = (oa - pe) / (1.0 - pe)

    undefined = [int(k) for k in range(cm.num_classes) if np.isnan(acc[k]) or np.isnan(iou[k])]
    return MetricsSummary(
        overall_accuracy=oa,
        mean_accuracy=_nanmean_or_nan(acc),
        kappa=kappa,
        mean_iou=_nanmean_or_nan(iou),
        class_accuracy=acc,
        class_iou=iou,
        undefined_classes=undefined,
    )


def f1_scores(cm):
    """Per-class F1 = 2TP / (2TP + FP + FN), NaN where the class is absent
    from both prediction and truth; mean over defined classes."""
    if cm.total == 0:
        raise ContractViolation("f1_scores: empty confusion matrix")
    tp = cm.true_positive().astype(np.float64)
    fn = cm.false_negative().astype(np.float64)
    fp = cm.false_positive().astype(np.float64)
    denom = 2 * tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        f1 = np.where(denom > 0, 2 * tp / denom, np.nan)
    return f1, _nanmean_or_nan(f1)


def report_text(cm, class_names=None):
    """Aligned-column report: per-class section then summary section."""
    s = summary_metrics(cm)
    f1, mean_f1 = f1_scores(cm)
    names = class_names or [f"class_{k}" for k in range(cm.num_classes)]
    width = max(len(n) for n in names) + 2

    def fmt(v):
        return "   undef" if np.isnan(v) else f"{v:8.4f}"

    buf = io.StringIO()
    buf.write(f"{'class':<{width}}{'acc':>8}{'iou':>8}{'f1':>8}\n")
    for k, name in enumerate(names):
        buf.write(f"{name:<{width}}{fmt(s.class_accuracy[k])}{fmt(s.class_iou[k])}{fmt(f1[k])}\n")
    buf.write("\n")
    for label, v in (
        ("overall_accuracy", s.overall_accuracy),
        ("mean_accuracy", s.mean_accuracy),
        ("kappa", s.kappa),
        ("mean_iou", s.mean_iou),
        ("mean_f1", mean_f1),
    ):
        buf.write(f"{label:<{max(width, 18)}}{fmt(v)}\n")
    if s.undefined_classes:
        buf.write(f"undefined classes: {s.undefined_classes}\n")
    return buf.getvalue()


def report_csv(cm, class_names=None):
    s = summary_metrics(cm)
    f1, mean_f1 = f1_scores(cm)
    names = class_names or [f"class_{k}" for k in range(cm.num_classes)]
    lines = ["section,name,acc,iou,f1"]
    for k, name in enumerate(names):
        lines.append(
            f"class,{name},{s.class_accuracy[k]:.6f},{s.class_iou[k]:.6f},{f1[k]:.6f}"
        )
    lines.append(f"summary,overall_accuracy,{s.overall_accuracy:.6f},,")
    lines.append(f"summary,mean_accuracy,{s.mean_accuracy:.6f},,")
    lines.append(f"summary,kappa,{s.kappa:.6f},,")
    lines.append(f"summary,mean_iou,{s.mean_iou:.6f},,")
    lines.append(f"summary,mean_f1,{mean_f1:.6f},,")
    return "\n".join(lines) + "\n"
