"""Minimal reverse-mode gradient engine.

A Tape records primitive operations as they execute; ``backward`` walks the
record once in reverse, accumulating vector-Jacobian products. The
primitive vocabulary is deliberately closed:

    add, scale, mul, matmul, exp, log, relu, sum,
    softmax_xent (fused log-softmax cross-entropy), l2_norm,
    cosine_similarity (vector-vector or pairwise rows)

``apply`` rejects anything else with an EngineError, which keeps the
engine small enough to check exhaustively against finite differences.
Constants enter as plain ndarrays; only values wrapped by ``Tape.param``
(or derived from them) receive gradients. Everything runs in float64.

Conventions:
  * ``matmul`` takes BLAS-style transpose flags, so no transpose
    primitive is needed.
  * ``scale`` multiplies by a non-differentiable constant (scalar or
    broadcastable array); ``mul`` is the differentiable Hadamard product.
  * ``sum`` over an axis keeps that axis (keepdims), so results combine
    with 2-D operands without reshapes.
"""

import numpy as np

from .errors import DegenerateInputError, DimensionError, EngineError, NonFiniteError

_PRIMITIVES = (
    "add",
    "scale",
    "mul",
    "matmul",
    "exp",
    "log",
    "relu",
    "sum",
    "softmax_xent",
    "l2_norm",
    "cosine_similarity",
)


class Node:
    """One recorded value. ``parents`` holds (input node, vjp) pairs."""

    __slots__ = ("value", "tape", "parents", "grad", "op")

    def __init__(self, value, tape, parents, op):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.grad = None
        self.op = op


class Tape:
    """Single-use operation record for one forward/backward pass."""

    def __init__(self):
        self._nodes = []

    def param(self, value):
        """Wrap an array as a differentiable leaf."""
        arr = np.asarray(value, dtype=np.float64)
        node = Node(arr, self, (), "param")
        self._nodes.append(node)
        return node

    def _record(self, value, parents, op):
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"non-finite value produced by '{op}'")
        node = Node(value, self, parents, op)
        self._nodes.append(node)
        return node

    def backward(self, root):
        """Accumulate d(root)/d(leaf) for every leaf; root must be scalar.

        Nodes were recorded in topological order, so one reverse sweep
        visits each exactly once.
        """
        if np.asarray(root.value).size != 1:
            raise EngineError("backward root must be a scalar")
        root.grad = np.ones_like(np.asarray(root.value, dtype=np.float64))
        for node in reversed(self._nodes):
            if node.grad is None:
                continue
            for parent, vjp in node.parents:
                contrib = vjp(node.grad)
                if parent.grad is None:
                    parent.grad = contrib
                else:
                    parent.grad = parent.grad + contrib


def _value(x):
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def _tape_of(*args):
    for a in args:
        if isinstance(a, Node):
            return a.tape
    raise EngineError("operation needs at least one tape-tracked input")


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of NumPy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a, b):
    av, bv = _value(a), _value(b)
    tape = _tape_of(a, b)
    out = av + bv
    parents = []
    if isinstance(a, Node):
        parents.append((a, lambda g: _unbroadcast(g, av.shape)))
    if isinstance(b, Node):
        parents.append((b, lambda g: _unbroadcast(g, bv.shape)))
    return tape._record(out, tuple(parents), "add")


def scale(a, c):
    """Multiply by a constant scalar or constant (broadcastable) array."""
    if isinstance(c, Node):
        raise EngineError("scale factor must be a constant; use mul for node-node products")
    if not isinstance(a, Node):
        raise EngineError("scale expects a tape-tracked operand")
    cv = np.asarray(c, dtype=np.float64)
    out = a.value * cv
    if out.shape != a.value.shape:
        raise DimensionError("scale constant must broadcast to the operand's shape")
    return a.tape._record(out, ((a, lambda g: g * cv),), "scale")


def mul(a, b):
    av, bv = _value(a), _value(b)
    tape = _tape_of(a, b)
    out = av * bv
    parents = []
    if isinstance(a, Node):
        parents.append((a, lambda g: _unbroadcast(g * bv, av.shape)))
    if isinstance(b, Node):
        parents.append((b, lambda g: _unbroadcast(g * av, bv.shape)))
    return tape._record(out, tuple(parents), "mul")


def matmul(a, b, transpose_a=False, transpose_b=False):
    av, bv = _value(a), _value(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise DimensionError("matmul operands must be 2-D")
    tape = _tape_of(a, b)
    ta = av.T if transpose_a else av
    tb = bv.T if transpose_b else bv
    out = ta @ tb
    parents = []
    if isinstance(a, Node):
        # out = ta @ tb with ta, tb already transposed as requested, so
        # d/d(a) is d/d(ta) transposed back when transpose_a is set.
        parents.append((a, lambda g: (tb @ g.T) if transpose_a else (g @ tb.T)))
    if isinstance(b, Node):
        parents.append((b, lambda g: (g.T @ ta) if transpose_b else (ta.T @ g)))
    return tape._record(out, tuple(parents), "matmul")


def exp(a):
    if not isinstance(a, Node):
        raise EngineError("exp expects a tape-tracked operand")
    out = np.exp(a.value)
    return a.tape._record(out, ((a, lambda g: g * out),), "exp")


def log(a):
    if not isinstance(a, Node):
        raise EngineError("log expects a tape-tracked operand")
    out = np.log(a.value)
    return a.tape._record(out, ((a, lambda g: g / a.value),), "log")


def relu(a):
    if not isinstance(a, Node):
        raise EngineError("relu expects a tape-tracked operand")
    mask = a.value > 0
    return a.tape._record(a.value * mask, ((a, lambda g: g * mask),), "relu")


def reduce_sum(a, axis=None):
    """Total sum (axis=None, scalar result) or axis sum with keepdims."""
    if not isinstance(a, Node):
        raise EngineError("sum expects a tape-tracked operand")
    if axis is None:
        out = np.asarray(a.value.sum())
        vjp = lambda g: np.broadcast_to(g, a.value.shape).copy()
    else:
        out = a.value.sum(axis=axis, keepdims=True)
        vjp = lambda g: np.broadcast_to(g, a.value.shape).copy()
    return a.tape._record(out, ((a, vjp),), "sum")


def softmax_xent(logits, targets):
    """Mean over rows of -sum(targets * log softmax(logits)).

    ``targets`` is a constant probability matrix (rows sum to 1, one-hot
    allowed). Fused with log-softmax, so no probability ever reaches an
    unguarded log.
    """
    if not isinstance(logits, Node):
        raise EngineError("softmax_xent expects tape-tracked logits")
    if isinstance(targets, Node):
        raise EngineError("softmax_xent targets must be constant")
    lv = logits.value
    tv = np.asarray(targets, dtype=np.float64)
    if lv.ndim != 2 or tv.shape != lv.shape:
        raise DimensionError(f"logits/targets shape mismatch: {lv.shape} vs {tv.shape}")
    rows = lv.shape[0]
    shifted = lv - lv.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - lse
    out = np.asarray(-(tv * log_probs).sum() / rows)

    def vjp(g):
        probs = np.exp(log_probs)
        return g * (probs * tv.sum(axis=1, keepdims=True) - tv) / rows

    return logits.tape._record(out, ((logits, vjp),), "softmax_xent")


def l2_norm(a):
    if not isinstance(a, Node):
        raise EngineError("l2_norm expects a tape-tracked operand")
    n = float(np.linalg.norm(a.value))
    if n == 0.0:
        raise DegenerateInputError("l2_norm gradient undefined at the zero vector")
    return a.tape._record(np.asarray(n), ((a, lambda g: g * a.value / n),), "l2_norm")


def cosine_similarity(a, b):
    """cos(a, b) for two vectors, or the pairwise row-cosine matrix for
    two 2-D operands (n x d, m x d -> n x m)."""
    av, bv = _value(a), _value(b)
    tape = _tape_of(a, b)
    if av.ndim == 1 and bv.ndim == 1:
        av = av.reshape(1, -1)
        bv = bv.reshape(1, -1)
        squeeze = True
    elif av.ndim == 2 and bv.ndim == 2:
        squeeze = False
    else:
        raise DimensionError("cosine_similarity needs two vectors or two matrices")
    if av.shape[1] != bv.shape[1]:
        raise DimensionError(f"dimension mismatch: {av.shape[1]} vs {bv.shape[1]}")
    na = np.linalg.norm(av, axis=1)
    nb = np.linalg.norm(bv, axis=1)
    if not na.all() or not nb.all():
        raise DegenerateInputError("cosine similarity undefined for zero-norm rows")
    an = av / na[:, None]
    bn = bv / nb[:, None]
    cos = an @ bn.T
    out = np.asarray(cos[0, 0]) if squeeze else cos

    def expand(g):
        return np.asarray(g, dtype=np.float64).reshape(cos.shape)

    parents = []
    if isinstance(a, Node):

        def vjp_a(g):
            g = expand(g)
            ga = (g @ bn - (g * cos).sum(axis=1, keepdims=True) * an) / na[:, None]
            return ga.reshape(_value(a).shape)

        parents.append((a, vjp_a))
    if isinstance(b, Node):

        def vjp_b(g):
            g = expand(g)
            gb = (g.T @ an - (g * cos).sum(axis=0)[:, None] * bn) / nb[:, None]
            return gb.reshape(_value(b).shape)

        parents.append((b, vjp_b))
    return tape._record(out, tuple(parents), "cosine_similarity")


_OPS = {
    "add": add,
    "scale": scale,
    "mul": mul,
    "matmul": matmul,
    "exp": exp,
    "log": log,
    "relu": relu,
    "sum": reduce_sum,
    "softmax_xent": softmax_xent,
    "l2_norm": l2_norm,
    "cosine_similarity": cosine_similarity,
}


def apply(op, *args, **kwargs):
    """Dispatch by primitive name; unknown names are construction errors."""
    if op not in _OPS:
        raise EngineError(f"unsupported primitive '{op}' (supported: {', '.join(_PRIMITIVES)})")
    return _OPS[op](*args, **kwargs)


def value_and_grad(build, params):
    """Evaluate a scalar loss and its gradients.

    ``build`` receives one Node per entry of ``params`` (plain float64
    arrays) and must return a scalar Node on the same tape.
    """
    tape = Tape()
    nodes = [tape.param(p) for p in params]
    root = build(*nodes)
    if not isinstance(root, Node) or root.tape is not tape:
        raise EngineError("build must return a node from the provided tape")
    tape.backward(root)
    grads = [n.grad if n.grad is not None else np.zeros_like(n.value) for n in nodes]
    return float(root.value), grads


def finite_difference_gradient(fn, params, h=1e-5):
    """Central-difference gradient oracle: (f(p+h) - f(p-h)) / 2h per
    coordinate. ``fn`` maps a list of arrays to a float."""
    if h <= 0:
        raise DimensionError("finite-difference step must be positive")
    grads = []
    work = [np.array(p, dtype=np.float64) for p in params]
    for i, p in enumerate(work):
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            hi = fn(work)
            flat[j] = orig - h
            lo = fn(work)
            flat[j] = orig
            gflat[j] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads
