"""Bernoulli RBM whose hidden layer grows and shrinks during training.

Hidden neurons are generated when the variance of their weight updates keeps
shifting between consecutive windows (the Walking Distance signal), and
removed when their activation degenerates to always-off or always-on.
"""

import logging
from collections import deque

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .numerics import check_rng, sample_bernoulli, sigmoid

__all__ = ["WalkingDistance", "AdaptiveRBM"]

logger = logging.getLogger(__name__)


class WalkingDistance:
    """Per-neuron Walking Distance over two adjacent windows of update magnitudes.

    Each hidden neuron keeps a ring buffer of its last ``2 * window`` update
    magnitudes. Once the buffer is full the WD of the neuron is
    ``|var(newest window) - var(oldest window)|`` (population variance);
    before that it is 0.

    Parameters
    ----------
    n_neurons : int
        Number of tracked hidden neurons.
    window : int
        Length of each of the two windows.
    """

    def __init__(self, n_neurons, window):
        if window < 1:
            raise ValueError(f"window must be >= 1, got {window}")
        self.window = int(window)
        # column k holds the k-th most recent magnitude, oldest last
        self._buffer = np.zeros((int(n_neurons), 2 * self.window))
        self._count = np.zeros(int(n_neurons), dtype=np.int64)

    @property
    def n_neurons(self):
        return self._buffer.shape[0]

    def push(self, magnitudes):
        """Record one update per neuron and return the current WD values."""
        self.record(magnitudes)
        return self.values()

    def record(self, magnitudes):
        magnitudes = np.abs(np.asarray(magnitudes, dtype=np.float64)).ravel()
        if magnitudes.shape[0] != self.n_neurons:
            raise ValueError(
                f"expected {self.n_neurons} magnitudes, got {magnitudes.shape[0]}"
            )
        self._buffer[:, 1:] = self._buffer[:, :-1]
        self._buffer[:, 0] = magnitudes
        self._count = np.minimum(self._count + 1, 2 * self.window)

    def full(self):
        return self._count == 2 * self.window

    def values(self):
        w = self.window
        current = self._buffer[:, :w].var(axis=1)
        past = self._buffer[:, w:].var(axis=1)
        return np.where(self.full(), np.abs(current - past), 0.0)

    def add_neuron(self):
        self._buffer = np.vstack([self._buffer, np.zeros((1, 2 * self.window))])
        self._count = np.append(self._count, 0)

    def remove(self, indices):
        keep = np.setdiff1d(np.arange(self.n_neurons), np.asarray(list(indices), dtype=np.int64))
        self._buffer = self._buffer[keep]
        self._count = self._count[keep]


class AdaptiveRBM(TransformerMixin, BaseEstimator):
    """Bernoulli-Bernoulli RBM trained by CD-k with neuron generation and annihilation.

    Inputs in [0, 1] are treated as Bernoulli probabilities of the visible
    units. After every epoch each hidden neuron whose Walking Distance exceeds
    ``gen_threshold`` spawns a copy of itself (weights and bias perturbed by
    uniform noise in ``[-inherit_noise, inherit_noise]``). In epochs after the
    first generation, neurons whose mean activation over the training data is
    below ``annihilate_threshold`` or above ``1 - annihilate_threshold`` are
    removed, never emptying the layer.

    Parameters
    ----------
    n_hidden : int, default=16
        Initial number of hidden neurons.
    learning_rate : float, default=0.1
    cd_steps : int, default=1
        Number of Gibbs steps of contrastive divergence.
    epochs : int, default=10
    batch_size : int, default=10
    gen_threshold : float, default=0.05
        WD strictly above which a neuron is duplicated. ``np.inf`` disables
        generation.
    annihilate_threshold : float, default=0.01
    inherit_noise : float, default=0.01
    max_hidden : int or None, default=None
        Cap on the hidden layer size; ``None`` means ``8 * n_hidden``.
    wd_window : int, default=10
        Number of minibatch updates per WD window.
    random_state : None, int or numpy.random.Generator, default=None
        A Generator is used in place, so one generator can drive a whole run.

    Attributes
    ----------
    weights_ : ndarray of shape (n_visible, n_hidden_)
    visible_bias_ : ndarray of shape (n_visible,)
    hidden_bias_ : ndarray of shape (n_hidden_,)
    n_hidden_ : int
        Current hidden layer size.
    tracker_ : WalkingDistance
    history_ : list of dict
        One record per epoch: reconstruction error and WD statistics.
    events_ : list of dict
        Structural events (``generate``, ``generate_capped``, ``annihilate``,
        ``annihilate_floor``) in the order they happened.
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
        self.random_state = random_state

    @classmethod
    def from_params(cls, weights, visible_bias, hidden_bias, **params):
        """Build an already-fitted RBM from explicit parameters."""
        rbm = cls(**params)
        weights = np.array(weights, dtype=np.float64, ndmin=2)
        visible_bias = np.array(visible_bias, dtype=np.float64).ravel()
        hidden_bias = np.array(hidden_bias, dtype=np.float64).ravel()
        if weights.shape != (visible_bias.shape[0], hidden_bias.shape[0]):
            raise ValueError(
                f"weights shape {weights.shape} does not match biases "
                f"({visible_bias.shape[0]}, {hidden_bias.shape[0]})"
            )
        rbm.weights_ = weights
        rbm.visible_bias_ = visible_bias
        rbm.hidden_bias_ = hidden_bias
        rbm.n_features_in_ = weights.shape[0]
        rbm.tracker_ = WalkingDistance(weights.shape[1], rbm.wd_window)
        rbm.history_ = []
        rbm.events_ = []
        return rbm

    @property
    def n_visible_(self):
        return self.weights_.shape[0]

    @property
    def n_hidden_(self):
        return self.weights_.shape[1]

    def _max_hidden(self):
        return self.max_hidden if self.max_hidden is not None else 8 * self.n_hidden

    def _check_params(self):
        if self.n_hidden < 1:
            raise ValueError("n_hidden must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.cd_steps < 1:
            raise ValueError("cd_steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.gen_threshold >= 0:
            raise ValueError("gen_threshold must be >= 0")
        if not 0 < self.annihilate_threshold < 0.5:
            raise ValueError("annihilate_threshold must lie in (0, 0.5)")
        if self.inherit_noise < 0:
            raise ValueError("inherit_noise must be >= 0")
        if self._max_hidden() < self.n_hidden:
            raise ValueError("max_hidden must be >= n_hidden")

    def _check_input(self, X, reset=False):
        X = check_array(X, dtype=np.float64)
        if np.any(X < 0.0) or np.any(X > 1.0):
            raise ValueError("RBM inputs must lie in [0, 1]")
        if not reset and X.shape[1] != self.n_visible_:
            raise ValueError(f"expected {self.n_visible_} visible units, got {X.shape[1]}")
        return X

    def fit(self, X, y=None):
        """Train on ``X`` (n_samples, n_visible) with values in [0, 1]."""
        self._check_params()
        X = self._check_input(X, reset=True)
        rng = check_rng(self.random_state)
        n_visible = X.shape[1]
        limit = np.sqrt(6.0 / (n_visible + self.n_hidden))
        self.weights_ = rng.uniform(-limit, limit, (n_visible, self.n_hidden))
        self.visible_bias_ = np.zeros(n_visible)
        self.hidden_bias_ = np.zeros(self.n_hidden)
        self.n_features_in_ = n_visible
        self.tracker_ = WalkingDistance(self.n_hidden, self.wd_window)
        self.history_ = []
        self.events_ = []
        first_generation = None
        for epoch in range(self.epochs):
            order = rng.permutation(X.shape[0])
            for start in range(0, X.shape[0], self.batch_size):
                batch = X[order[start:start + self.batch_size]]
                self.tracker_.record(self.cd_update(batch, rng))
            wd = self.tracker_.values()
            self.history_.append({
                "epoch": epoch,
                "n_hidden": self.n_hidden_,
                "reconstruction_error": self.reconstruction_error(X),
                "wd_mean": float(wd.mean()),
                "wd_max": float(wd.max()),
                "wd_total": float(wd.sum()),
            })
            events = self.maybe_generate_neurons(rng)
            if first_generation is None and any(e["kind"] == "generate" for e in events):
                first_generation = epoch
            elif first_generation is not None:
                events += self.maybe_annihilate_neurons(X)
            for e in events:
                e["epoch"] = epoch
            self.events_.extend(events)
        return self

    def cd_update(self, batch, rng):
        """Apply one CD-k step to ``batch`` and return per-neuron update norms.

        The returned vector holds the L2 norm of the change applied to each
        hidden neuron's incoming weight column.
        """
        batch = self._check_input(batch)
        if batch.shape[0] == 0:
            raise ValueError("cannot update on an empty batch")
        rng = check_rng(rng)
        W, a, b = self.weights_, self.visible_bias_, self.hidden_bias_
        n = batch.shape[0]

        pos_hidden = sigmoid(batch @ W + b)
        h = sample_bernoulli(pos_hidden, rng)
        for step in range(self.cd_steps):
            neg_visible = sigmoid(h @ W.T + a)
            neg_hidden = sigmoid(neg_visible @ W + b)
            if step + 1 < self.cd_steps:
                h = sample_bernoulli(neg_hidden, rng)

        lr = self.learning_rate
        dW = lr * (batch.T @ pos_hidden - neg_visible.T @ neg_hidden) / n
        da = lr * (batch - neg_visible).mean(axis=0)
        db = lr * (pos_hidden - neg_hidden).mean(axis=0)
        self.weights_ = W + dW
        self.visible_bias_ = a + da
        self.hidden_bias_ = b + db
        return np.linalg.norm(dW, axis=0)

    def add_hidden_neuron(self, parent, rng):
        """Append a perturbed copy of hidden neuron ``parent``; return its index."""
        rng = check_rng(rng)
        eps = self.inherit_noise
        col = self.weights_[:, parent] + rng.uniform(-eps, eps, self.n_visible_)
        bias = self.hidden_bias_[parent] + rng.uniform(-eps, eps)
        self.weights_ = np.column_stack([self.weights_, col])
        self.hidden_bias_ = np.append(self.hidden_bias_, bias)
        self.tracker_.add_neuron()
        return self.n_hidden_ - 1

    def remove_hidden_neurons(self, indices):
        indices = sorted(set(int(i) for i in indices))
        if len(indices) >= self.n_hidden_:
            raise ValueError("cannot remove every hidden neuron")
        keep = np.setdiff1d(np.arange(self.n_hidden_), indices)
        self.weights_ = self.weights_[:, keep]
        self.hidden_bias_ = self.hidden_bias_[keep]
        self.tracker_.remove(indices)

    def maybe_generate_neurons(self, rng):
        """Duplicate every neuron whose WD exceeds ``gen_threshold``.

        Candidates are handled lowest index first; once ``max_hidden`` is
        reached the remaining candidates produce ``generate_capped`` events.
        """
        wd = self.tracker_.values()
        events = []
        for j in np.flatnonzero(wd > self.gen_threshold):
            if self.n_hidden_ >= self._max_hidden():
                events.append({"kind": "generate_capped", "parent": int(j), "wd": float(wd[j])})
                continue
            new = self.add_hidden_neuron(j, rng)
            events.append({"kind": "generate", "parent": int(j), "new": new, "wd": float(wd[j])})
            logger.debug("generated hidden neuron %d from %d (WD=%g)", new, j, wd[j])
        return events

    def maybe_annihilate_neurons(self, X):
        """Remove neurons whose mean activation over ``X`` is near 0 or 1."""
        X = self._check_input(X)
        if X.shape[0] == 0:
            raise ValueError("cannot measure activations on an empty batch")
        mean = self.transform(X).mean(axis=0)
        alpha = self.annihilate_threshold
        dead = np.flatnonzero((mean < alpha) | (mean > 1.0 - alpha))
        events = []
        if dead.size == 0:
            return events
        if dead.size == self.n_hidden_:
            # keep the least saturated neuron so the layer never empties
            kept = int(np.argmin(np.abs(mean - 0.5)))
            dead = dead[dead != kept]
            events.append({"kind": "annihilate_floor", "index": kept,
                           "mean_activation": float(mean[kept])})
        for j in dead:
            events.append({"kind": "annihilate", "index": int(j),
                           "mean_activation": float(mean[j])})
        if dead.size:
            self.remove_hidden_neurons(dead)
            logger.debug("annihilated hidden neurons %s", dead.tolist())
        return events

    def transform(self, X):
        """Hidden activation probabilities ``sigmoid(X @ W + b)``."""
        check_is_fitted(self, "weights_")
        X = self._check_input(X)
        return sigmoid(X @ self.weights_ + self.hidden_bias_)

    def hidden_activations(self, v):
        """Hidden activation probabilities for a single vector or a batch."""
        v = np.asarray(v, dtype=np.float64)
        if v.ndim == 1:
            return self.transform(v[None, :])[0]
        return self.transform(v)

    def reconstruct(self, X):
        """One-step mean-field reconstruction of the visible layer."""
        return sigmoid(self.transform(X) @ self.weights_.T + self.visible_bias_)

    def reconstruction_error(self, X):
        """Mean squared error between ``X`` and its mean-field reconstruction."""
        X = self._check_input(X)
        if X.shape[0] == 0:
            raise ValueError("cannot score an empty batch")
        return float(np.mean((X - self.reconstruct(X)) ** 2))

    def energy(self, v, h):
        """Bilinear energy ``-a.v - b.h - v.W.h``; batched over leading axis."""
        check_is_fitted(self, "weights_")
        v = np.asarray(v, dtype=np.float64)
        h = np.asarray(h, dtype=np.float64)
        if v.shape[-1] != self.n_visible_ or h.shape[-1] != self.n_hidden_:
            raise ValueError(
                f"energy expects ({self.n_visible_}, {self.n_hidden_}) units, "
                f"got ({v.shape[-1]}, {h.shape[-1]})"
            )
        return -(v @ self.visible_bias_) - (h @ self.hidden_bias_) - np.sum((v @ self.weights_) * h, axis=-1)

    def mean_energy(self, X, rng):
        """Mean energy of (data, sampled hidden state) pairs."""
        X = self._check_input(X)
        h = sample_bernoulli(self.transform(X), check_rng(rng))
        return float(np.mean(self.energy(X, h)))

    def total_wd(self):
        return float(self.tracker_.values().sum())
