"""Parent/child re-learning guided by per-sample KL divergence.

A trained parent model splits the focus-class samples into the ones it
classifies correctly (set 1) and the ones it gets wrong (set 2). Child models
trained on each set are compared with the parent through the KL divergence of
their softmax outputs, and the high-KL part of set 2 is re-learned by fresh
children, one per KL threshold.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import clone

from .data import split
from .exceptions import DegeneratePartitionError
from .numerics import derive_seed

__all__ = [
    "RelearnPlan",
    "KlReport",
    "SweepResult",
    "EVALUATION_SETS",
    "build_plan",
    "train_child",
    "kl_rows",
    "kl_divergence",
    "partition_by_threshold",
    "quantile_thresholds",
    "relearn_sweep",
    "export_scatter",
    "write_sweep_csv",
]

logger = logging.getLogger(__name__)

Q_CLAMP = 1e-12
EVALUATION_SETS = ("set2", "set0", "heldout")


@dataclass(frozen=True, eq=False)
class RelearnPlan:
    """Parent model plus the correct/wrong partition of the focus-class data.

    ``dataset`` holds only focus-class samples, relabeled so that
    ``dataset.class_labels == focus_classes``. The id arrays refer to
    ``dataset.ids``.
    """

    parent: object
    focus_classes: tuple
    dataset: object
    set0: np.ndarray
    set1: np.ndarray
    set2: np.ndarray

    def subset(self, which):
        ids = {"set0": self.set0, "set1": self.set1, "set2": self.set2}[which]
        return self.dataset.select_ids(ids)

    def summary(self):
        rows = [
            ("Set 0", "All focus-class samples", len(self.set0)),
            ("Set 1", "Parent-correct samples (trains Q1)", len(self.set1)),
            ("Set 2", "Parent-wrong samples (trains Q2)", len(self.set2)),
        ]
        lines = [f"focus_classes: {', '.join(self.focus_classes)}", ""]
        lines.append(f"{'dataset':<8}{'description':<40}{'cases':>8}")
        lines += [f"{name:<8}{desc:<40}{n:>8}" for name, desc, n in rows]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class KlReport:
    """Per-sample KL divergence between two models' focus-class distributions."""

    ids: np.ndarray
    kl: np.ndarray
    valence: np.ndarray = None
    arousal: np.ndarray = None
    model_pair: tuple = ("P", "Q")

    def __len__(self):
        return len(self.ids)

    @property
    def aggregate(self):
        return float(np.mean(self.kl))


@dataclass(eq=False)
class SweepResult:
    theta: float
    n_above: int
    classification_ratio: float
    flag: str
    report: KlReport = field(repr=False)
    model: object = field(default=None, repr=False)


def build_plan(parent, ds, focus_classes):
    """Partition the focus-class samples of ``ds`` by parent correctness.

    The parent predicts over all of its classes; a sample is correct when the
    predicted label equals its true label.

    Raises
    ------
    DegeneratePartitionError
        When either the correct or the wrong set is empty.
    """
    focus_classes = tuple(str(c) for c in focus_classes)
    if not focus_classes:
        raise ValueError("focus_classes must not be empty")
    unknown = [c for c in focus_classes if c not in ds.class_labels]
    if unknown:
        raise ValueError(f"focus classes {unknown} are not dataset classes {list(ds.class_labels)}")
    parent_classes = [str(c) for c in parent.classes_]
    missing = [c for c in focus_classes if c not in parent_classes]
    if missing:
        raise ValueError(f"focus classes {missing} are unknown to the parent model")

    keep = np.flatnonzero(np.isin(ds.labels, focus_classes))
    focus = ds.subset(keep, class_labels=focus_classes)
    predicted = np.asarray([str(p) for p in parent.predict(focus.X)], dtype=object)
    correct = predicted == focus.labels
    set0 = focus.ids.copy()
    set1 = focus.ids[correct]
    set2 = focus.ids[~correct]
    logger.info("plan: set0=%d set1=%d set2=%d", len(set0), len(set1), len(set2))
    if len(set1) == 0 or len(set2) == 0:
        raise DegeneratePartitionError(
            f"degenerate partition: set0={len(set0)} set1={len(set1)} set2={len(set2)}",
            len(set0), len(set1), len(set2),
        )
    return RelearnPlan(parent, focus_classes, focus, set0, set1, set2)


def _fit_child(template, ds, focus_classes, random_state):
    if len(ds) == 0:
        raise ValueError("cannot train a child model on an empty set")
    child = clone(template).set_params(random_state=random_state)
    return child.fit(ds.X, ds.labels, classes=np.asarray(focus_classes, dtype=object))


def train_child(plan, which, estimator=None, random_state=None):
    """Fresh model trained only on ``which`` ("set1" or "set2") of ``plan``.

    ``estimator`` is an unfitted template whose hyperparameters are reused;
    it defaults to the parent's. The child's classes are the focus classes.
    """
    if which not in ("set0", "set1", "set2"):
        raise ValueError(f"unknown subset {which!r}")
    template = plan.parent if estimator is None else estimator
    return _fit_child(template, plan.subset(which), plan.focus_classes, random_state)


def kl_rows(p, q):
    """Row-wise ``sum_c p_c log(p_c / q_c)`` (natural log).

    ``q`` is clamped below at 1e-12, terms with ``p_c == 0`` contribute 0 and
    tiny negative round-off is clamped to 0.
    """
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    if p.shape != q.shape:
        raise ValueError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    q = np.maximum(q, Q_CLAMP)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0) / q), 0.0)
    return np.maximum(terms.sum(axis=1), 0.0)


def focus_proba(model, X, focus_classes):
    """``model`` probabilities restricted to ``focus_classes`` and renormalized."""
    classes = [str(c) for c in model.classes_]
    missing = [c for c in focus_classes if c not in classes]
    if missing:
        raise ValueError(f"model lacks focus classes {missing}")
    cols = [classes.index(c) for c in focus_classes]
    p = model.predict_proba(X)[:, cols]
    total = p.sum(axis=1, keepdims=True)
    uniform = np.full_like(p, 1.0 / len(cols))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total > 0, p / np.where(total > 0, total, 1.0), uniform)


def kl_divergence(parent, child, ds, focus_classes=None, model_pair=("P", "Q")):
    """Per-sample KL(parent || child) on ``ds`` over the focus classes.

    ``focus_classes`` defaults to the child's classes. Both models are
    restricted to those classes (and renormalized), so a parent trained on
    more classes compares against a child trained on the focus classes only.

    Raises
    ------
    ValueError
        If the child's class set differs from ``focus_classes``, or the parent
        lacks one of them.
    """
    child_classes = tuple(str(c) for c in child.classes_)
    focus_classes = child_classes if focus_classes is None else tuple(str(c) for c in focus_classes)
    if set(child_classes) != set(focus_classes):
        raise ValueError(f"child classes {list(child_classes)} differ from focus classes {list(focus_classes)}")
    p = focus_proba(parent, ds.X, focus_classes)
    q = focus_proba(child, ds.X, focus_classes)
    return KlReport(
        ids=ds.ids.copy(),
        kl=kl_rows(p, q),
        valence=None if ds.valence is None else ds.valence.copy(),
        arousal=None if ds.arousal is None else ds.arousal.copy(),
        model_pair=tuple(model_pair),
    )


def partition_by_threshold(report, theta):
    """Split report ids into ``(above, below)`` with ``above = {KL > theta}``."""
    if len(report) == 0:
        raise ValueError("empty KL report")
    theta = float(theta)
    if np.isnan(theta) or theta < 0:
        raise ValueError(f"KL threshold must be >= 0, got {theta}")
    mask = report.kl > theta
    return report.ids[mask], report.ids[~mask]


def quantile_thresholds(report, levels):
    """Thresholds at the given quantile levels of the report's KL values."""
    levels = np.asarray(levels, dtype=np.float64)
    if levels.size == 0 or np.any(levels < 0) or np.any(levels > 1):
        raise ValueError("quantile levels must lie in [0, 1]")
    return [float(t) for t in np.quantile(report.kl, levels)]


def relearn_sweep(plan, thresholds, estimator=None, random_state=0, q2=None, evaluate_on="set2"):
    """Re-learn the high-KL part of set 2 once per threshold.

    For each threshold the samples of set 2 whose KL(P, Q2) exceeds it train a
    fresh child (seeded from ``random_state`` and the threshold's position),
    and the child's accuracy on the evaluation set is recorded. Thresholds
    with no sample above them are flagged ``"empty"`` and train nothing.

    Parameters
    ----------
    plan : RelearnPlan
    thresholds : sequence of float
    estimator : unfitted estimator, optional
        Template for Q2 and the re-learning children; defaults to the parent.
    random_state : int
    q2 : fitted model, optional
        Child trained on set 2. Trained here when omitted. Ignored for
        ``evaluate_on="heldout"``, which trains Q2 on the held-in half.
    evaluate_on : {"set2", "set0", "heldout"}
        ``"heldout"`` splits set 2 in half (stratified), computes KL and
        trains on one half and evaluates on the other.
    """
    thresholds = [float(t) for t in thresholds]
    if not thresholds:
        raise ValueError("at least one threshold is required")
    if evaluate_on not in EVALUATION_SETS:
        raise ValueError(f"evaluate_on must be one of {EVALUATION_SETS}")
    for t in thresholds:
        if np.isnan(t) or t < 0:
            raise ValueError(f"KL threshold must be >= 0, got {t}")
    template = plan.parent if estimator is None else estimator
    set2 = plan.subset("set2")
    pool = set2
    if evaluate_on == "heldout":
        pool, evaluation = split(set2, 0.5, derive_seed(random_state, 2, 1))
        q2 = None
    elif evaluate_on == "set0":
        evaluation = plan.subset("set0")
    else:
        evaluation = set2
    if q2 is None:
        q2 = _fit_child(template, pool, plan.focus_classes, derive_seed(random_state, 2))
    report = kl_divergence(plan.parent, q2, pool, plan.focus_classes, model_pair=("P", "Q2"))

    results = []
    for i, theta in enumerate(thresholds):
        above, _ = partition_by_threshold(report, theta)
        if len(above) == 0:
            results.append(SweepResult(theta, 0, float("nan"), "empty", report))
            continue
        child = _fit_child(template, pool.select_ids(above), plan.focus_classes,
                           derive_seed(random_state, 100 + i))
        ratio = float(np.mean(np.asarray(child.predict(evaluation.X), dtype=str) == evaluation.labels.astype(str)))
        results.append(SweepResult(theta, len(above), ratio, "ok", report, child))
        logger.info("theta=%g above=%d ratio=%.4f", theta, len(above), ratio)
    return results


def export_scatter(report, theta, path):
    """CSV of ``id,valence,arousal,kl,above`` for plotting the threshold split."""
    if report.valence is None or report.arousal is None:
        raise ValueError("KL report has no valence/arousal annotations")
    theta = float(theta)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "valence", "arousal", "kl", "above"])
        for i, v, a, kl in zip(report.ids, report.valence, report.arousal, report.kl):
            w.writerow([int(i), repr(float(v)), repr(float(a)), repr(float(kl)), int(kl > theta)])


def write_sweep_csv(results, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["theta", "n_above", "classification_ratio", "flag"])
        for r in results:
            ratio = "" if r.flag == "empty" else repr(r.classification_ratio)
            w.writerow([repr(r.theta), r.n_above, ratio, r.flag])
