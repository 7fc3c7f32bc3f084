"""Seeded randomness and the elementwise nonlinearities shared by every model."""

import numbers

import numpy as np

__all__ = ["check_rng", "derive_seed", "sigmoid", "softmax", "sample_bernoulli"]


def check_rng(seed=None):
    """Turn ``seed`` into a :class:`numpy.random.Generator`.

    Parameters
    ----------
    seed : None, int or numpy.random.Generator
        An existing generator is returned unchanged so that one instance can
        be threaded through a whole training run. Integers seed a fresh PCG64
        generator; ``None`` draws entropy from the OS.

    Returns
    -------
    numpy.random.Generator
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.integer)):
        return np.random.default_rng(seed)
    raise ValueError(f"{seed!r} cannot be used to seed a numpy Generator")


def derive_seed(seed, *keys):
    """Deterministic 32-bit child seed from a master seed and integer keys."""
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


def sigmoid(x):
    """Logistic function, safe for large magnitudes (never NaN for finite input)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def softmax(v, axis=-1):
    """Softmax along ``axis`` with max-subtraction.

    Raises
    ------
    ValueError
        If ``v`` is empty along ``axis``.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or v.shape[axis] == 0:
        raise ValueError("softmax of an empty vector is undefined")
    z = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def sample_bernoulli(p, rng):
    """Draw independent 0/1 states with success probabilities ``p``."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(~np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("Bernoulli probabilities must lie in [0, 1]")
    return (rng.random(p.shape) < p).astype(np.float64)
