"""Kernel backend selection.

The compiled extension is used when importable; otherwise the NumPy
fallback takes over. Set GROTO_DISABLE_EXT=1 to force the fallback
(useful for benchmarking and for testing the pure-Python path).

Public wrappers validate inputs and normalise dtypes so both backends see
identical, well-formed arrays.
"""

import os

import numpy as np

from .errors import DegenerateInputError, DimensionError

from . import _kernels_np

if os.environ.get("GROTO_DISABLE_EXT") == "1":
    _impl = _kernels_np
else:
    try:
        from . import _kernels_cy as _impl
    except ImportError:
        _impl = _kernels_np

ACTIVE = "cython" if _impl.__name__.endswith("_kernels_cy") else "numpy"


def _as_matrix(x, name):
    m = np.ascontiguousarray(x, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] == 0:
        raise DimensionError(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    return m


def softmax_rows(x):
    return _impl.softmax_rows(_as_matrix(x, "softmax input"))


def pairwise_cosine_distance(a, b):
    a = _as_matrix(a, "left operand")
    b = _as_matrix(b, "right operand")
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if not np.linalg.norm(a, axis=1).all():
        raise DegenerateInputError("zero-norm row in left operand")
    if not np.linalg.norm(b, axis=1).all():
        raise DegenerateInputError("zero-norm row in right operand")
    return _impl.pairwise_cosine_distance(a, b)


def herding_order(feats, count):
    feats = _as_matrix(feats, "herding features")
    if count < 1:
        raise DimensionError("herding count must be >= 1")
    return _impl.herding_order(feats, int(count))
