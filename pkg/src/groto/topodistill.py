"""Point-to-point topology distillation between classifier-weight rows.

The frozen source classifier rows mu and the live target rows f (one per
positive class) are compared through two attention-weighted sums of
pairwise cosine distances: a compactness term that, per target row,
softmaxes over source rows weighted by class proportions, and a
separability term that, per source row, softmaxes over target rows and
weights the result by the class proportion. Their sum is the distilled
topology loss; gradients reach only f.

Both terms shift each softmax by its constant row (or column) max
before exponentiating. The ratio is mathematically invariant to the
shift, so values and gradients are exact while huge dot products stay
finite.
"""

from dataclasses import dataclass

import numpy as np

from . import engine
from .errors import DegenerateInputError, DimensionError, MiningError


@dataclass
class TopologyPair:
    """Aligned prototype rows: mu frozen, f trainable, p the target
    class-proportion vector over the same ordered class list."""

    mu: np.ndarray
    f: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.f = np.asarray(self.f, dtype=np.float64)
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.mu.ndim != 2 or self.mu.shape != self.f.shape:
            raise DimensionError(
                f"mu and f must be equal-shape matrices, got {self.mu.shape} and {self.f.shape}"
            )
        if self.p.shape != (self.mu.shape[0],):
            raise DimensionError("p must hold one proportion per prototype row")
        if (self.p < 0).any():
            raise DegenerateInputError("class proportions must be non-negative")


def class_proportions(pseudo_labels, positive_classes):
    """p_n = share of session pseudo-labels on class n; zero-count
    classes keep p_n = 0 but stay in the vector."""
    labels = np.asarray(pseudo_labels, dtype=np.int64)
    classes = [int(c) for c in positive_classes]
    if labels.size == 0:
        raise DegenerateInputError("cannot compute proportions of an empty label list")
    if not set(labels.tolist()) <= set(classes):
        stray = sorted(set(labels.tolist()) - set(classes))
        raise MiningError(f"labels {stray} fall outside the positive class list")
    counts = np.array([(labels == c).sum() for c in classes], dtype=np.float64)
    return counts / labels.size


def _distance_node(f_node, mu):
    cos = engine.cosine_similarity(f_node, mu)
    return engine.add(engine.scale(cos, -1.0), np.ones(cos.value.shape))


def _check_pair(pair):
    if pair.p.sum() == 0:
        raise DegenerateInputError("all-zero proportions leave the compactness normalizer undefined")


def loss_com_node(f_node, mu, p):
    """Compactness term on an f node; mu and p are constants.

    Orientation: entry [j, i] pairs target row j with source row i, so
    the proportional softmax runs along axis 1.
    """
    n = mu.shape[0]
    h = engine.matmul(f_node, mu, transpose_b=True)
    shift = h.value.max(axis=1, keepdims=True)
    e = engine.exp(engine.add(h, -shift))
    weighted = engine.scale(e, p[None, :])
    z = engine.reduce_sum(weighted, axis=1)
    inv_z = engine.exp(engine.scale(engine.log(z), -1.0))
    ratio = engine.mul(weighted, inv_z)
    terms = engine.mul(_distance_node(f_node, mu), ratio)
    return engine.scale(engine.reduce_sum(terms), 1.0 / n)


def loss_sep_node(f_node, mu, p):
    """Separability term: softmax over target rows per source row
    (axis 0 in the [j, i] orientation), outer-weighted by p."""
    h = engine.matmul(f_node, mu, transpose_b=True)
    shift = h.value.max(axis=0, keepdims=True)
    e = engine.exp(engine.add(h, -shift))
    z = engine.reduce_sum(e, axis=0)
    inv_z = engine.exp(engine.scale(engine.log(z), -1.0))
    ratio = engine.mul(e, inv_z)
    terms = engine.mul(_distance_node(f_node, mu), ratio)
    return engine.reduce_sum(engine.scale(terms, p[None, :]))


def loss_com(pair):
    """(value, gradient w.r.t. f); the frozen mu receives none."""
    _check_pair(pair)
    value, (grad_f,) = engine.value_and_grad(
        lambda f: loss_com_node(f, pair.mu, pair.p), [pair.f]
    )
    return value, grad_f


def loss_sep(pair):
    _check_pair(pair)
    value, (grad_f,) = engine.value_and_grad(
        lambda f: loss_sep_node(f, pair.mu, pair.p), [pair.f]
    )
    return value, grad_f


def loss_ptd(pair):
    """Compactness + separability in one graph, so the value is exactly
    the float sum of the two parts."""
    _check_pair(pair)

    def build(f):
        return engine.add(loss_com_node(f, pair.mu, pair.p), loss_sep_node(f, pair.mu, pair.p))

    value, (grad_f,) = engine.value_and_grad(build, [pair.f])
    return value, grad_f


def loss_ptd_term(wc_node, mu_positive, positive_classes, p, num_classes):
    """Graph term for the composite objective: selects the positive rows
    out of the live classifier node, then distills them against the
    frozen source rows. The selector is a constant 0/1 matrix, so the
    backward pass scatters gradients into exactly those rows."""
    classes = [int(c) for c in positive_classes]
    selector = np.zeros((len(classes), num_classes))
    for row, c in enumerate(classes):
        selector[row, c] = 1.0
    if np.asarray(p).sum() == 0:
        raise DegenerateInputError("all-zero proportions leave the compactness normalizer undefined")
    f_node = engine.matmul(selector, wc_node)
    return engine.add(loss_com_node(f_node, mu_positive, p), loss_sep_node(f_node, mu_positive, p))
