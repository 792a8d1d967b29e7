"""Stable softmax-family primitives and a central-difference gradient oracle.

Everything here works on 1-D float64 arrays. ``-inf`` is the mask sentinel
and is carried through exactly: a masked logit always maps to a probability
of exactly zero.
"""

import math

import numpy as np

__all__ = [
    "as_real_vector",
    "is_all_masked",
    "log_sum_exp",
    "softmax",
    "ssmax",
    "finite_diff_grad",
]


def as_real_vector(v, name="v"):
    """Coerce ``v`` to a 1-D float64 array, rejecting NaN and ``+inf``."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if np.isnan(arr).any():
        raise ValueError(f"{name} contains NaN")
    if np.isposinf(arr).any():
        raise ValueError(f"{name} contains +inf")
    return arr


def is_all_masked(p):
    """True for the all-zero vector returned when every logit was masked."""
    return not np.any(np.asarray(p))


def log_sum_exp(v):
    """``log(sum(exp(v)))`` via max-shift; ``-inf`` if every entry is masked."""
    v = as_real_vector(v)
    if v.size == 0:
        raise ValueError("empty vector")
    top = v.max()
    if top == -np.inf:
        return -math.inf
    return float(top + np.log(np.exp(v - top).sum()))


def softmax(v):
    """Softmax of a logit vector.

    Masked (``-inf``) entries get exactly 0. If every entry is masked the
    result is all zeros rather than NaN; see :func:`is_all_masked`.
    """
    v = as_real_vector(v)
    if v.size == 0:
        raise ValueError("empty vector")
    top = v.max()
    if top == -np.inf:
        return np.zeros_like(v)
    e = np.exp(v - top)
    return e / e.sum()


def ssmax(v, n, s):
    """Scalable softmax: ``softmax((s * ln n) * v)``.

    ``n`` is the number of unmasked positions the row attends over. At
    ``n == 1`` the multiplier is zero and the output is uniform over the
    unmasked entries.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    v = as_real_vector(v)
    scale = float(s) * math.log(n)
    # keep -inf as -inf even when the multiplier is 0
    scaled = np.where(np.isneginf(v), -np.inf, scale * np.where(np.isneginf(v), 0.0, v))
    return softmax(scaled)


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of a scalar function ``f`` at ``x``."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = float(f(x))
        flat[k] = orig - h
        fm = float(f(x))
        flat[k] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise ValueError(f"non-finite function value when probing coordinate {k}")
        g[k] = (fp - fm) / (2.0 * h)
    return grad
