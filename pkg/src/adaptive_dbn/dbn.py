"""Greedy stack of adaptive RBMs with automatic layer growth and a softmax head."""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .numerics import check_rng, softmax
from .rbm import AdaptiveRBM

__all__ = ["SoftmaxHead", "TrainLog", "AdaptiveDBN", "save_model", "load_model", "MODEL_FORMAT_VERSION"]

logger = logging.getLogger(__name__)

MODEL_FORMAT = "adaptive-dbn"
MODEL_FORMAT_VERSION = 1

_RBM_PARAMS = (
    "learning_rate", "cd_steps", "epochs", "batch_size", "gen_threshold",
    "annihilate_threshold", "inherit_noise", "max_hidden", "wd_window",
)


class SoftmaxHead:
    """Multinomial logistic layer trained by full-batch gradient descent."""

    def __init__(self, weights, bias):
        self.weights = np.array(weights, dtype=np.float64, ndmin=2)
        self.bias = np.array(bias, dtype=np.float64).ravel()
        if self.weights.shape[1] != self.bias.shape[0]:
            raise ValueError("head weights and bias disagree on the number of classes")

    @classmethod
    def zeros(cls, n_features, n_classes):
        return cls(np.zeros((n_features, n_classes)), np.zeros(n_classes))

    @property
    def n_features(self):
        return self.weights.shape[0]

    @property
    def n_classes(self):
        return self.weights.shape[1]

    def predict_proba(self, features):
        return softmax(np.asarray(features, dtype=np.float64) @ self.weights + self.bias, axis=-1)

    def cross_entropy(self, features, onehot):
        return _cross_entropy(self.predict_proba(features), onehot)

    def fit(self, features, onehot, learning_rate, epochs):
        """Gradient descent on cross-entropy; returns the loss before each step and after the last.

        Steps are taken in standardized feature coordinates and folded back
        into ``weights`` and ``bias``, so the fitted head still computes
        ``softmax(features @ weights + bias)``.
        """
        features = np.asarray(features, dtype=np.float64)
        mean = features.mean(axis=0)
        scale = features.std(axis=0)
        scale[scale < 1e-12] = 1.0
        Z = (features - mean) / scale
        W = self.weights * scale[:, None]
        b = self.bias + mean @ self.weights
        n = Z.shape[0]
        losses = []
        for _ in range(epochs):
            p = softmax(Z @ W + b, axis=-1)
            losses.append(_cross_entropy(p, onehot))
            grad = p - onehot
            W -= learning_rate * (Z.T @ grad) / n
            b -= learning_rate * grad.mean(axis=0)
        self.weights = W / scale[:, None]
        self.bias = b - mean @ self.weights
        losses.append(self.cross_entropy(features, onehot))
        return losses


def _cross_entropy(p, onehot):
    return float(-np.mean(np.sum(onehot * np.log(np.clip(p, 1e-300, None)), axis=1)))


@dataclass
class TrainLog:
    """Per-epoch layer statistics, structural events and the head loss curve."""

    epochs: list = field(default_factory=list)
    events: list = field(default_factory=list)
    head_loss: list = field(default_factory=list)

    EPOCH_FIELDS = ("layer", "epoch", "n_hidden", "reconstruction_error", "wd_mean", "wd_max", "wd_total")
    EVENT_FIELDS = ("layer", "epoch", "kind", "detail")

    def write_epochs_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(self.EPOCH_FIELDS)
            for rec in self.epochs:
                w.writerow([_fmt(rec[k]) for k in self.EPOCH_FIELDS])

    def write_events_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(self.EVENT_FIELDS)
            for ev in self.events:
                detail = ";".join(
                    f"{k}={_fmt(v)}" for k, v in ev.items() if k not in ("layer", "epoch", "kind")
                )
                w.writerow([ev.get("layer", ""), ev.get("epoch", ""), ev["kind"], detail])


def _fmt(value):
    return repr(value) if isinstance(value, float) else str(value)


class AdaptiveDBN(ClassifierMixin, BaseEstimator):
    """Deep Belief Network that decides its own depth, with a softmax classifier on top.

    Layers are trained greedily. After a layer finishes, a new RBM is stacked
    on top when both its total Walking Distance and its mean energy stay above
    ``layer_wd_threshold`` and ``layer_energy_threshold`` respectively, up to
    ``max_layers``. Trained layers are frozen; only the softmax head is
    trained with labels (full-batch gradient descent on cross-entropy).

    Parameters
    ----------
    n_hidden : int or sequence of int, default=16
        Initial hidden size of each layer. A sequence gives per-layer sizes,
        its last entry reused for deeper layers.
    learning_rate, cd_steps, epochs, batch_size, gen_threshold,
    annihilate_threshold, inherit_noise, max_hidden, wd_window
        Per-layer settings forwarded to :class:`AdaptiveRBM`.
    layer_wd_threshold : float, default=1e-6
    layer_energy_threshold : float, default=-2.0
    max_layers : int, default=3
    head_learning_rate : float, default=0.5
    head_epochs : int, default=2000
    random_state : None, int or numpy.random.Generator, default=None
        One generator is created per fit and threaded through every layer.

    Attributes
    ----------
    classes_ : ndarray
        Ordered class labels; column order of :meth:`predict_proba`.
    layers_ : list of AdaptiveRBM
    head_ : SoftmaxHead
    log_ : TrainLog
    """

    def __init__(
        self,
        n_hidden=16,
        learning_rate=0.1,
        cd_steps=1,
        epochs=10,
        batch_size=10,
        gen_threshold=0.05,
        annihilate_threshold=0.01,
        inherit_noise=0.01,
        max_hidden=None,
        wd_window=10,
        layer_wd_threshold=1e-6,
        layer_energy_threshold=-2.0,
        max_layers=3,
        head_learning_rate=0.5,
        head_epochs=2000,
        random_state=None,
    ):
        self.n_hidden = n_hidden
        self.learning_rate = learning_rate
        self.cd_steps = cd_steps
        self.epochs = epochs
        self.batch_size = batch_size
        self.gen_threshold = gen_threshold
        self.annihilate_threshold = annihilate_threshold
        self.inherit_noise = inherit_noise
        self.max_hidden = max_hidden
        self.wd_window = wd_window
        self.layer_wd_threshold = layer_wd_threshold
        self.layer_energy_threshold = layer_energy_threshold
        self.max_layers = max_layers
        self.head_learning_rate = head_learning_rate
        self.head_epochs = head_epochs
        self.random_state = random_state

    def _layer_hidden(self, index):
        if np.isscalar(self.n_hidden):
            return int(self.n_hidden)
        sizes = list(self.n_hidden)
        return int(sizes[min(index, len(sizes) - 1)])

    def _new_layer(self):
        params = {k: getattr(self, k) for k in _RBM_PARAMS}
        return AdaptiveRBM(n_hidden=self._layer_hidden(len(self.layers_)), **params)

    def maybe_generate_layer(self, total_wd, mean_energy):
        """Stack a fresh RBM when both WD and energy of the top layer stay large.

        Returns ``True`` when a layer was appended. Reaching ``max_layers``
        with both signals large records a ``layer_capped`` event instead.
        """
        large = total_wd > self.layer_wd_threshold and mean_energy > self.layer_energy_threshold
        if not large:
            return False
        if len(self.layers_) >= self.max_layers:
            self.log_.events.append({"layer": len(self.layers_) - 1, "epoch": "", "kind": "layer_capped",
                                     "total_wd": total_wd, "mean_energy": mean_energy})
            return False
        self.layers_.append(self._new_layer())
        self.log_.events.append({"layer": len(self.layers_) - 1, "epoch": "", "kind": "layer_generated",
                                 "total_wd": total_wd, "mean_energy": mean_energy})
        logger.debug("stacked layer %d (total WD=%g, energy=%g)", len(self.layers_), total_wd, mean_energy)
        return True

    def fit(self, X, y, classes=None):
        """Fit the stack on ``X`` and the softmax head on ``(X, y)``.

        Parameters
        ----------
        X : array-like of shape (n_samples, n_features), values in [0, 1]
        y : array-like of shape (n_samples,)
        classes : array-like, optional
            Full ordered label set. Needed when some classes are absent from
            ``y`` or when the output column order matters.
        """
        if self.max_layers < 1:
            raise ValueError("max_layers must be >= 1")
        if not self.head_learning_rate > 0:
            raise ValueError("head_learning_rate must be > 0")
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ValueError(f"y must have shape ({X.shape[0]},), got {y.shape}")
        if classes is None:
            self.classes_ = np.unique(y)
        else:
            self.classes_ = np.asarray(classes)
            unknown = np.setdiff1d(y, self.classes_)
            if unknown.size:
                raise ValueError(f"labels {unknown.tolist()} are not in classes")
        self.n_features_in_ = X.shape[1]
        rng = check_rng(self.random_state)
        self.log_ = TrainLog()
        self.layers_ = []
        self.layers_.append(self._new_layer())
        features = X
        while True:
            index = len(self.layers_) - 1
            rbm = self.layers_[index]
            rbm.set_params(random_state=rng)
            rbm.fit(features)
            rbm.set_params(random_state=None)
            for rec in rbm.history_:
                self.log_.epochs.append({"layer": index, **rec})
            for ev in rbm.events_:
                self.log_.events.append({"layer": index, **ev})
            total_wd = rbm.total_wd()
            energy = rbm.mean_energy(features, rng)
            features = rbm.transform(features)
            if not self.maybe_generate_layer(total_wd, energy):
                break

        onehot = (y[:, None] == self.classes_[None, :]).astype(np.float64)
        self.head_ = SoftmaxHead.zeros(features.shape[1], len(self.classes_))
        self.log_.head_loss = self.head_.fit(features, onehot, self.head_learning_rate, self.head_epochs)
        return self

    def transform(self, X):
        """Top-layer features: hidden activations propagated through every layer."""
        check_is_fitted(self, "layers_")
        features = check_array(X, dtype=np.float64)
        if features.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {features.shape[1]}")
        for rbm in self.layers_:
            features = rbm.transform(features)
        return features

    def propagate(self, v):
        """:meth:`transform` for a single input vector."""
        return self.transform(np.asarray(v, dtype=np.float64).reshape(1, -1))[0]

    def predict_proba(self, X):
        return self.head_.predict_proba(self.transform(X))

    def predict(self, X):
        # np.argmax returns the first maximum: ties go to the lowest class index
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    @property
    def n_layers_(self):
        return len(self.layers_)


def save_model(model, path):
    """Write a fitted :class:`AdaptiveDBN` to a JSON model file.

    Floats are written with ``repr`` so loading reproduces every parameter
    bit for bit.
    """
    check_is_fitted(model, "head_")
    params = model.get_params()
    params["random_state"] = None
    if not np.isscalar(params["n_hidden"]):
        params["n_hidden"] = [int(n) for n in params["n_hidden"]]
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_FORMAT_VERSION,
        "params": params,
        "class_labels": model.classes_.tolist(),
        "n_features": int(model.n_features_in_),
        "layers": [
            {
                "n_visible": int(rbm.n_visible_),
                "n_hidden": int(rbm.n_hidden_),
                "weights": rbm.weights_.ravel().tolist(),
                "visible_bias": rbm.visible_bias_.tolist(),
                "hidden_bias": rbm.hidden_bias_.tolist(),
            }
            for rbm in model.layers_
        ],
        "head": {
            "n_features": int(model.head_.n_features),
            "n_classes": int(model.head_.n_classes),
            "weights": model.head_.weights.ravel().tolist(),
            "bias": model.head_.bias.tolist(),
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_model(path):
    """Read a model file written by :func:`save_model`."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path} is not an adaptive-dbn model file")
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model file version {doc.get('version')!r}")
    model = AdaptiveDBN(**doc["params"])
    rbm_params = {k: doc["params"][k] for k in _RBM_PARAMS}
    model.layers_ = []
    for rec in doc["layers"]:
        weights = np.array(rec["weights"], dtype=np.float64).reshape(rec["n_visible"], rec["n_hidden"])
        model.layers_.append(AdaptiveRBM.from_params(
            weights, rec["visible_bias"], rec["hidden_bias"], n_hidden=rec["n_hidden"], **rbm_params
        ))
    for lower, upper in zip(model.layers_, model.layers_[1:]):
        if lower.n_hidden_ != upper.n_visible_:
            raise ValueError("layer dimensions in model file do not chain")
    head = doc["head"]
    model.head_ = SoftmaxHead(
        np.array(head["weights"], dtype=np.float64).reshape(head["n_features"], head["n_classes"]),
        head["bias"],
    )
    model.classes_ = np.asarray(doc["class_labels"])
    model.n_features_in_ = doc["n_features"]
    model.log_ = TrainLog()
    return model
