"""NumPy implementations of the hot kernels.

Reference semantics for the compiled extension: same max-shift softmax,
same greedy tie rule (lowest index wins). Inputs are validated by the
wrappers in backend.py; these functions assume well-formed arrays.
"""

import numpy as np


def softmax_rows(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def pairwise_cosine_distance(a, b):
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    sim = (a @ b.T) / np.outer(na, nb)
    return 1.0 - sim


def herding_order(feats, count):
    """Greedy selection of `count` rows whose running mean tracks the
    column mean of `feats`. Returns the selection order as indices."""
    n = feats.shape[0]
    count = min(count, n)
    mean = feats.mean(axis=0)
    chosen = np.empty(count, dtype=np.intp)
    taken = np.zeros(n, dtype=bool)
    running = np.zeros(feats.shape[1])
    for k in range(1, count + 1):
        cand = (running + feats) / k
        gap = ((mean - cand) ** 2).sum(axis=1)
        gap[taken] = np.inf
        pick = int(np.argmin(gap))
        chosen[k - 1] = pick
        taken[pick] = True
        running += feats[pick]
    return chosen
