"""Labeled datasets: CSV and IDX loaders, stratified splits, and a synthetic overlap fixture.

CSV layout: a header ``label[,valence][,arousal],f0,f1,...`` followed by one
row per sample. Feature columns are min-max normalized into [0, 1] on load.
"""

import csv
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DataError
from .numerics import check_rng

__all__ = [
    "LabeledSample",
    "LabeledDataset",
    "load_csv",
    "save_csv",
    "load_idx",
    "write_idx",
    "split",
    "make_overlap_fixture",
    "normalize",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class LabeledSample:
    input: np.ndarray
    label: int
    valence: float | None
    arousal: float | None
    id: int


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Immutable collection of samples sharing one feature length.

    Parameters
    ----------
    X : ndarray of shape (n_samples, n_features)
        Inputs in [0, 1].
    y : ndarray of shape (n_samples,)
        Integer class indices into ``class_labels``.
    class_labels : tuple of str
    ids : ndarray of shape (n_samples,), optional
        Stable integer identifiers; defaults to ``0..n_samples-1``.
    valence, arousal : ndarray of shape (n_samples,), optional
        Affect annotations in [-1, 1]. Either both or neither.
    feature_min, feature_max : ndarray, optional
        Per-column bounds used when the features were normalized.
    """

    X: np.ndarray
    y: np.ndarray
    class_labels: tuple
    ids: np.ndarray = None
    valence: np.ndarray = None
    arousal: np.ndarray = None
    feature_min: np.ndarray = None
    feature_max: np.ndarray = None

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64, ndmin=2)
        y = np.asarray(self.y, dtype=np.int64).ravel()
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "class_labels", tuple(str(c) for c in self.class_labels))
        ids = np.arange(len(y)) if self.ids is None else np.asarray(self.ids, dtype=np.int64).ravel()
        object.__setattr__(self, "ids", ids)
        if X.shape[0] != len(y) or len(ids) != len(y):
            raise DataError("inputs, labels and ids must have the same length")
        if len(set(ids.tolist())) != len(ids):
            raise DataError("sample ids must be unique")
        if X.size and (np.any(~np.isfinite(X)) or X.min() < 0.0 or X.max() > 1.0):
            raise DataError("inputs must lie in [0, 1]")
        if len(y) and (y.min() < 0 or y.max() >= len(self.class_labels)):
            raise DataError("label index outside class_labels")
        if (self.valence is None) != (self.arousal is None):
            raise DataError("valence and arousal must be given together")
        if self.valence is not None:
            for name in ("valence", "arousal"):
                arr = np.asarray(getattr(self, name), dtype=np.float64).ravel()
                if len(arr) != len(y):
                    raise DataError(f"{name} must have one value per sample")
                if np.any(~np.isfinite(arr)) or np.any(np.abs(arr) > 1.0):
                    raise DataError(f"{name} must lie in [-1, 1]")
                object.__setattr__(self, name, arr)
        for arr in (X, y, ids, self.valence, self.arousal):
            if arr is not None:
                arr.setflags(write=False)

    def __len__(self):
        return len(self.y)

    @property
    def n_features(self):
        return self.X.shape[1]

    @property
    def has_affect(self):
        return self.valence is not None

    @property
    def labels(self):
        """Label names, one per sample."""
        return np.asarray(self.class_labels, dtype=object)[self.y]

    @property
    def samples(self):
        for i in range(len(self)):
            yield LabeledSample(
                input=self.X[i],
                label=int(self.y[i]),
                valence=None if self.valence is None else float(self.valence[i]),
                arousal=None if self.arousal is None else float(self.arousal[i]),
                id=int(self.ids[i]),
            )

    def subset(self, indices, class_labels=None):
        """Samples at positional ``indices``, optionally relabeled onto ``class_labels``."""
        indices = np.asarray(indices, dtype=np.int64)
        y = self.y[indices]
        labels = self.class_labels
        if class_labels is not None:
            class_labels = tuple(str(c) for c in class_labels)
            remap = {labels.index(c): k for k, c in enumerate(class_labels) if c in labels}
            missing = set(y.tolist()) - set(remap)
            if missing:
                raise DataError(f"classes {[labels[m] for m in sorted(missing)]} not in {class_labels}")
            y = np.array([remap[int(v)] for v in y], dtype=np.int64)
            labels = class_labels
        return LabeledDataset(
            X=self.X[indices],
            y=y,
            class_labels=labels,
            ids=self.ids[indices],
            valence=None if self.valence is None else self.valence[indices],
            arousal=None if self.arousal is None else self.arousal[indices],
            feature_min=self.feature_min,
            feature_max=self.feature_max,
        )

    def select_ids(self, ids, class_labels=None):
        pos = {int(i): k for k, i in enumerate(self.ids)}
        try:
            indices = [pos[int(i)] for i in ids]
        except KeyError as exc:
            raise DataError(f"unknown sample id {exc.args[0]}") from None
        return self.subset(indices, class_labels)


def normalize(X):
    """Min-max scale each column into [0, 1]; constant columns map to 0.

    Returns the scaled array and the per-column (min, max) bounds.
    """
    X = np.asarray(X, dtype=np.float64)
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = hi - lo
    # (x - min) / span hits 0 and 1 exactly, so a second pass is the identity
    scaled = (X - lo) / np.where(span > 0, span, 1.0)
    scaled[:, span == 0] = 0.0
    return np.clip(scaled, 0.0, 1.0), lo, hi


def _parse_float(text, path, lineno, column):
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"{path}: row {lineno}: column {column!r} is not numeric: {text!r}") from None
    if not np.isfinite(value):
        raise DataError(f"{path}: row {lineno}: column {column!r} is not finite")
    return value


def load_csv(path, class_labels=None, normalize_features=True):
    """Read a labeled CSV file.

    Parameters
    ----------
    path : str or Path
    class_labels : sequence of str, optional
        Allowed label names in index order. Defaults to the sorted set of
        labels found in the file; with an explicit list, any other label is
        an error.
    normalize_features : bool, default=True
        Min-max normalize each feature column (bounds kept on the dataset).

    Raises
    ------
    DataError
        On an empty file, malformed rows, unknown labels, or valence/arousal
        outside [-1, 1]. Messages name the offending row (1-based, header is
        row 1).
    """
    path = Path(path)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise DataError(f"{path}: no samples")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "label":
        raise DataError(f"{path}: first column must be 'label'")
    pos = 1
    has_valence = len(header) > pos and header[pos] == "valence"
    pos += has_valence
    has_arousal = len(header) > pos and header[pos] == "arousal"
    pos += has_arousal
    if has_valence != has_arousal:
        raise DataError(f"{path}: valence and arousal columns must appear together")
    feature_names = header[pos:]
    if not feature_names:
        raise DataError(f"{path}: no feature columns")
    body = [(i + 2, r) for i, r in enumerate(rows[1:]) if any(c.strip() for c in r)]
    if not body:
        raise DataError(f"{path}: no samples")

    names, va, X = [], [], []
    for lineno, row in body:
        if len(row) != len(header):
            raise DataError(f"{path}: row {lineno}: expected {len(header)} columns, got {len(row)}")
        names.append(row[0].strip())
        if has_valence:
            pair = [_parse_float(row[k], path, lineno, header[k]) for k in (1, 2)]
            if any(abs(v) > 1.0 for v in pair):
                raise DataError(f"{path}: row {lineno}: valence/arousal outside [-1, 1]")
            va.append(pair)
        X.append([_parse_float(row[k], path, lineno, header[k]) for k in range(pos, len(header))])

    if class_labels is None:
        class_labels = tuple(sorted(set(names)))
    else:
        class_labels = tuple(str(c) for c in class_labels)
        for (lineno, _), name in zip(body, names):
            if name not in class_labels:
                raise DataError(f"{path}: row {lineno}: unknown label {name!r}")
    index = {c: k for k, c in enumerate(class_labels)}
    X = np.array(X, dtype=np.float64)
    fmin = fmax = None
    if normalize_features:
        X, fmin, fmax = normalize(X)
    elif X.min() < 0.0 or X.max() > 1.0:
        raise DataError(f"{path}: features outside [0, 1] and normalization disabled")
    va = np.array(va, dtype=np.float64) if has_valence else None
    return LabeledDataset(
        X=X,
        y=[index[n] for n in names],
        class_labels=class_labels,
        valence=None if va is None else va[:, 0],
        arousal=None if va is None else va[:, 1],
        feature_min=fmin,
        feature_max=fmax,
    )


def save_csv(ds, path):
    """Write ``ds`` in the layout :func:`load_csv` reads (floats via ``repr``)."""
    header = ["label"]
    if ds.has_affect:
        header += ["valence", "arousal"]
    header += [f"f{k}" for k in range(ds.n_features)]
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for i in range(len(ds)):
            row = [ds.class_labels[ds.y[i]]]
            if ds.has_affect:
                row += [repr(float(ds.valence[i])), repr(float(ds.arousal[i]))]
            row += [repr(float(x)) for x in ds.X[i]]
            w.writerow(row)


def _open_maybe_gzip(path):
    with open(path, "rb") as f:
        head = f.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def _read_idx(path, magic, ndim):
    with _open_maybe_gzip(path) as f:
        raw = f.read()
    if len(raw) < 4 + 4 * ndim:
        raise DataError(f"{path}: truncated IDX header")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise DataError(f"{path}: bad IDX magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    count = int(np.prod(dims))
    body = raw[4 + 4 * ndim:]
    if len(body) < count:
        raise DataError(f"{path}: truncated IDX data ({len(body)} of {count} bytes)")
    return np.frombuffer(body[:count], dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path, class_labels=None):
    """Read an IDX image/label pair (plain or gzipped), scaling pixels by 1/255.

    Labels are byte values used directly as class indices; ``class_labels``
    defaults to ``"0" .. str(max label)``.
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"IDX count mismatch: {images.shape[0]} images, {labels.shape[0]} labels")
    if images.shape[0] == 0:
        raise DataError(f"{images_path}: no samples")
    if class_labels is None:
        class_labels = tuple(str(k) for k in range(int(labels.max()) + 1))
    elif int(labels.max()) >= len(class_labels):
        raise DataError(f"{labels_path}: label {int(labels.max())} has no class name")
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return LabeledDataset(X=X, y=labels.astype(np.int64), class_labels=class_labels)


def write_idx(images, labels, images_path, labels_path):
    """Write uint8 ``images`` (n, rows, cols) and ``labels`` (n,) as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes())


def split(ds, fraction, rng=None):
    """Stratified split into ``(train, test)`` with ``fraction`` of each class in train."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    rng = check_rng(rng)
    train, test = [], []
    for c in range(len(ds.class_labels)):
        members = np.flatnonzero(ds.y == c)
        if len(members) == 0:
            continue
        if len(members) < 2:
            raise DataError(f"class {ds.class_labels[c]!r} has fewer than 2 samples")
        members = rng.permutation(members)
        k = min(max(int(round(fraction * len(members))), 1), len(members) - 1)
        train.extend(members[:k])
        test.extend(members[k:])
    return ds.subset(np.sort(train)), ds.subset(np.sort(test))


FIXTURE_SEPARATION = 8.0


def make_overlap_fixture(n_per_class, overlap, rng=None, class_labels=("anger", "disgust")):
    """Two unit-variance Gaussian blobs in 2-D whose centres approach as ``overlap`` grows.

    The centre distance is ``8 * (1 - overlap)`` standard deviations along the
    diagonal, so ``overlap=0`` is separable in practice and ``overlap=1``
    gives identical classes. Coordinates are min-max normalized into the
    inputs, and mapped onto [-1, 1] as valence/arousal.
    """
    if not 0.0 <= overlap <= 1.0:
        raise ValueError(f"overlap must lie in [0, 1], got {overlap}")
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    rng = check_rng(rng)
    half = 0.5 * FIXTURE_SEPARATION * (1.0 - overlap)
    direction = np.array([1.0, 1.0]) / np.sqrt(2.0)
    points, labels = [], []
    for k, sign in enumerate((-1.0, 1.0)):
        points.append(sign * half * direction + rng.standard_normal((n_per_class, 2)))
        labels.append(np.full(n_per_class, k))
    points = np.vstack(points)
    labels = np.concatenate(labels)
    order = rng.permutation(len(labels))
    X, fmin, fmax = normalize(points[order])
    affect = 2.0 * X - 1.0
    return LabeledDataset(
        X=X,
        y=labels[order],
        class_labels=class_labels,
        valence=np.clip(affect[:, 0], -1.0, 1.0),
        arousal=np.clip(affect[:, 1], -1.0, 1.0),
        feature_min=fmin,
        feature_max=fmax,
    )
