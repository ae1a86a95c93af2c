"""Scalar/vector numerics used throughout: normalisations and similarity.

All math is double precision. File storage elsewhere uses float32; the
boundary casts happen at (de)serialisation, never here.
"""

import numpy as np

from .errors import DegenerateInputError, DimensionError


def _as_vector(v, name):
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError(f"{name} must be a non-empty 1-D vector, got shape {arr.shape}")
    return arr


def softmax(v):
    """Numerically stable softmax (max-shift); output sums to 1."""
    arr = _as_vector(v, "softmax input")
    e = np.exp(arr - arr.max())
    return e / e.sum()


def cosine_distance(a, b):
    """1 - cos(a, b), in [0, 2]. Both vectors must have nonzero norm."""
    a = _as_vector(a, "cosine first argument")
    b = _as_vector(b, "cosine second argument")
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine distance undefined for zero-norm input")
    return 1.0 - float(a @ b) / (na * nb)


def minmax_normalize(v):
    """Rescale to [0, 1]. A flat vector maps to all zeros: a constant
    distribution carries no evidence, so nothing should clear a
    mean-based threshold downstream."""
    arr = _as_vector(v, "minmax input")
    lo = arr.min()
    hi = arr.max()
    if hi == lo:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


def l2_normalize(v):
    arr = _as_vector(v, "l2 input")
    n = np.linalg.norm(arr)
    if n == 0.0:
        raise DegenerateInputError("cannot normalise a zero vector")
    return arr / n
