"""Confusion matrices, per-class precision/recall/F1, and KL histograms."""

import csv
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ConfusionMatrix",
    "ClassReport",
    "confusion",
    "class_report",
    "kl_histogram",
    "write_confusion_csv",
    "write_report_csv",
    "write_ratio_csv",
    "format_report",
    "write_histogram_csv",
]


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts indexed by (true class, predicted class)."""

    counts: np.ndarray
    class_labels: tuple

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError("confusion counts must be a square matrix")
        if counts.shape[0] != len(self.class_labels):
            raise ValueError("one class label per row is required")
        if np.any(counts < 0) or np.any(counts != np.round(counts)):
            raise ValueError("confusion counts must be nonnegative integers")
        object.__setattr__(self, "counts", counts.astype(np.int64))
        object.__setattr__(self, "class_labels", tuple(str(c) for c in self.class_labels))

    @classmethod
    def from_predictions(cls, y_true, y_pred, class_labels):
        k = len(class_labels)
        counts = np.zeros((k, k), dtype=np.int64)
        np.add.at(counts, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
        return cls(counts, class_labels)

    @property
    def total(self):
        return int(self.counts.sum())


@dataclass(frozen=True, eq=False)
class ClassReport:
    """Per-class precision, recall, F1 and classification ratio, plus macro averages.

    ``undefined`` lists (class, metric) pairs whose denominator was zero and
    which were therefore reported as 0.
    """

    class_labels: tuple
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    undefined: tuple = ()

    @property
    def ratio(self):
        """Classification ratio per class, i.e. recall."""
        return self.recall

    @property
    def macro(self):
        return {
            "precision": float(np.mean(self.precision)),
            "recall": float(np.mean(self.recall)),
            "f1": float(np.mean(self.f1)),
            "ratio": float(np.mean(self.recall)),
        }


def confusion(model, ds):
    """Confusion matrix of ``model`` predictions on ``ds``, in ``ds.class_labels`` order.

    Raises
    ------
    ValueError
        If the model's classes differ from the dataset's.
    """
    model_classes = [str(c) for c in model.classes_]
    if set(model_classes) != set(ds.class_labels):
        raise ValueError(f"model classes {model_classes} do not match data classes {list(ds.class_labels)}")
    index = {c: k for k, c in enumerate(ds.class_labels)}
    pred = np.array([index[str(p)] for p in model.predict(ds.X)], dtype=np.int64)
    return ConfusionMatrix.from_predictions(ds.y, pred, ds.class_labels)


def _safe_ratio(num, den, labels, metric, undefined):
    out = np.zeros(len(num))
    for c in range(len(num)):
        if den[c] > 0:
            out[c] = num[c] / den[c]
        else:
            undefined.append((labels[c], metric))
    return out


def class_report(cm):
    """Precision, recall and F1 per class from a confusion matrix.

    ``TP`` is the diagonal, ``FP`` the column sum minus ``TP``, ``FN`` the
    row sum minus ``TP``. A zero denominator yields 0 and is recorded in
    ``ClassReport.undefined`` with a warning.
    """
    if cm.total == 0:
        raise ValueError("confusion matrix is empty")
    counts = cm.counts
    tp = np.diag(counts).astype(np.float64)
    predicted = counts.sum(axis=0)
    actual = counts.sum(axis=1)
    undefined = []
    precision = _safe_ratio(tp, predicted, cm.class_labels, "precision", undefined)
    recall = _safe_ratio(tp, actual, cm.class_labels, "recall", undefined)
    f1 = _safe_ratio(2 * precision * recall, precision + recall, cm.class_labels, "f1", undefined)
    if undefined:
        warnings.warn(f"zero denominators reported as 0: {undefined}", RuntimeWarning, stacklevel=2)
    return ClassReport(
        class_labels=cm.class_labels,
        precision=precision,
        recall=recall,
        f1=f1,
        support=actual,
        undefined=tuple(undefined),
    )


def kl_histogram(values, bins):
    """Equal-width histogram over ``[min(values), max(values)]``.

    Returns ``(counts, edges)``. When every value is equal the range is
    widened by 0.5 on each side, so the value falls in a single bin.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("cannot histogram an empty sequence")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if not np.all(np.isfinite(values)):
        raise ValueError("histogram values must be finite")
    return np.histogram(values, bins=int(bins), range=(values.min(), values.max()))


def _writer(f):
    return csv.writer(f, lineterminator="\n")


def write_confusion_csv(cm, path):
    with open(path, "w", newline="") as f:
        w = _writer(f)
        w.writerow(["true\\predicted", *cm.class_labels])
        for label, row in zip(cm.class_labels, cm.counts):
            w.writerow([label, *row.tolist()])


def write_report_csv(report, path):
    with open(path, "w", newline="") as f:
        w = _writer(f)
        w.writerow(["class", "precision", "recall", "f1", "classification_ratio", "support"])
        for k, label in enumerate(report.class_labels):
            w.writerow([label, repr(float(report.precision[k])), repr(float(report.recall[k])),
                        repr(float(report.f1[k])), repr(float(report.ratio[k])), int(report.support[k])])
        m = report.macro
        w.writerow(["macro", repr(m["precision"]), repr(m["recall"]), repr(m["f1"]), repr(m["ratio"]),
                    int(report.support.sum())])


def write_ratio_csv(report, path):
    """Per-class classification ratio in percent, with the average as the last row."""
    with open(path, "w", newline="") as f:
        w = _writer(f)
        w.writerow(["class", "classification_ratio_percent"])
        for label, r in zip(report.class_labels, report.ratio):
            w.writerow([label, f"{100 * r:.1f}"])
        w.writerow(["average", f"{100 * report.macro['ratio']:.1f}"])


def format_report(cm, report):
    """Plain-text document with one table per metric."""
    labels = cm.class_labels
    width = max(10, *(len(c) for c in labels)) + 2
    lines = ["# Confusion matrix (rows: true, columns: predicted)", ""]
    lines.append("".ljust(width) + "".join(c.rjust(width) for c in labels))
    for label, row in zip(labels, cm.counts):
        lines.append(label.ljust(width) + "".join(str(v).rjust(width) for v in row))
    lines += ["", "# Classification ratio", ""]
    for label, r in zip(labels, report.ratio):
        lines.append(label.ljust(width) + f"{100 * r:.1f}%".rjust(width))
    lines.append("Ave.".ljust(width) + f"{100 * report.macro['ratio']:.1f}%".rjust(width))
    lines += ["", "# Precision / recall / F1", ""]
    lines.append("".ljust(width) + "".join(h.rjust(width) for h in ("precision", "recall", "f1")))
    for k, label in enumerate(labels):
        vals = (report.precision[k], report.recall[k], report.f1[k])
        lines.append(label.ljust(width) + "".join(f"{v:.3f}".rjust(width) for v in vals))
    m = report.macro
    lines.append("macro".ljust(width) + "".join(f"{m[k]:.3f}".rjust(width) for k in ("precision", "recall", "f1")))
    if report.undefined:
        lines += ["", "# Undefined (reported as 0)", ""]
        lines += [f"{c}: {metric}" for c, metric in report.undefined]
    return "\n".join(lines) + "\n"


def write_histogram_csv(counts, edges, path):
    with open(path, "w", newline="") as f:
        w = _writer(f)
        w.writerow(["bin_lower", "bin_upper", "count"])
        for k, c in enumerate(counts):
            w.writerow([repr(float(edges[k])), repr(float(edges[k + 1])), int(c)])
