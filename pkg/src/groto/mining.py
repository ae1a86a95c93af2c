"""Positive-class mining from two accumulation distributions.

A session only contains a subset of the source classes. Two independent
views vote on which ones: the softmax-normalized similarity of target
features to stored source centroids (averaged over samples), and the
min-max normalized column sums of source-model predictions. Each view
keeps the classes strictly above its own mean; the mined set is the
UNION of the two, which is the only combination that lets one branch
repair the other's omissions.
"""

from dataclasses import dataclass

import numpy as np

from .backend import softmax_rows
from .errors import DimensionError, MiningError
from .model import predict
from .numerics import minmax_normalize
from .scenario import FeatureMatrix

_BRANCHES = ("union", "similarity_only", "probability_only")


@dataclass
class PositiveClassSet:
    """Mined class indices with per-class confidence and which branch
    (similarity, probability) nominated each."""

    classes: frozenset
    confidence: dict
    provenance: dict

    def __post_init__(self):
        for k in self.classes:
            flags = self.provenance.get(k, {})
            if not (flags.get("by_similarity") or flags.get("by_probability")):
                raise MiningError(f"mined class {k} has no provenance flag")

    def __contains__(self, k):
        return int(k) in self.classes

    def sorted(self):
        return sorted(self.classes)


def _feature_array(x):
    arr = x.features if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise DimensionError("expected a non-empty 2-D feature batch")
    return arr


def similarity_distribution(target_features, centroids):
    """S_k: mean over samples of row-softmaxed centroid similarities.

    Row i of the similarity matrix holds the dot products of target
    feature i with every source centroid; softmax makes each row a
    distribution, and the column mean accumulates them into one K-vector
    that sums to 1.
    """
    g = _feature_array(target_features)
    s = np.asarray(centroids, dtype=np.float64)
    if s.ndim != 2 or g.shape[1] != s.shape[1]:
        raise DimensionError(f"feature dim {g.shape[1]} does not match centroids {s.shape}")
    return softmax_rows(g @ s.T).mean(axis=0)


def probability_distribution(snapshot, inputs):
    """P_k: class-wise sum of source-model probabilities over the
    session, min-max normalized into [0, 1]."""
    probs = predict(snapshot.params, inputs)
    return minmax_normalize(probs.sum(axis=0))


def mine_positive_classes(S, P, branch="union"):
    """Classes strictly above the mean of S, of P, or of either.

    Strict `>` excludes ties, so a flat distribution nominates nothing;
    if the requested branches jointly nominate nothing, that is a mining
    failure (no evidence of shared classes). Per-class confidence is the
    larger of the two distributions after min-max normalization.
    """
    S = np.asarray(S, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if S.ndim != 1 or S.shape != P.shape:
        raise DimensionError(f"S and P must be equal-length vectors, got {S.shape} and {P.shape}")
    if branch not in _BRANCHES:
        raise MiningError(f"unknown mining branch '{branch}' (choose from {_BRANCHES})")
    by_sim = set(np.flatnonzero(S > S.mean()).tolist())
    by_prob = set(np.flatnonzero(P > P.mean()).tolist())
    if branch == "similarity_only":
        mined = by_sim
    elif branch == "probability_only":
        mined = by_prob
    else:
        mined = by_sim | by_prob
    if not mined:
        raise MiningError("no class exceeded its branch mean; nothing to adapt to")
    conf = np.maximum(minmax_normalize(S), minmax_normalize(P))
    return PositiveClassSet(
        classes=frozenset(mined),
        confidence={k: float(conf[k]) for k in sorted(mined)},
        provenance={
            k: {"by_similarity": k in by_sim, "by_probability": k in by_prob}
            for k in sorted(mined)
        },
    )


def refine_positive_set(positive_set, pseudo_labels):
    """Keep only the mined classes that actually received pseudo-labels.

    An empty label list skips refinement; labels outside the mined set
    violate the containment contract and fail loudly.
    """
    labels = np.asarray(pseudo_labels, dtype=np.int64)
    if labels.size == 0:
        return positive_set
    supported = set(labels.tolist())
    if not supported <= positive_set.classes:
        stray = sorted(supported - positive_set.classes)
        raise MiningError(f"pseudo-labels {stray} fall outside the mined positive set")
    return PositiveClassSet(
        classes=frozenset(supported),
        confidence={k: positive_set.confidence[k] for k in sorted(supported)},
        provenance={k: positive_set.provenance[k] for k in sorted(supported)},
    )


def mining_report(S, P, positive_set):
    """JSON-ready summary: distributions, thresholds, provenance, set."""
    S = np.asarray(S, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    return {
        "similarity": [float(v) for v in S],
        "probability": [float(v) for v in P],
        "similarity_threshold": float(S.mean()),
        "probability_threshold": float(P.mean()),
        "classes": positive_set.sorted(),
        "confidence": {str(k): positive_set.confidence[k] for k in positive_set.sorted()},
        "provenance": {str(k): positive_set.provenance[k] for k in positive_set.sorted()},
    }
