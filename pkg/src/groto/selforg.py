"""Target feature self-organization over the mined positive classes.

Per epoch the session is re-labeled in three passes: a restricted argmax
gives every sample an initial label inside the positive set; coarse and
fine prototypes are then harvested under strict mean-threshold admission
rules; finally the balanced prototype bank re-labels the remaining
samples by mean cosine distance. Training minimizes cross-entropy on the
pseudo-labels plus an NT-Xent contrastive term over two views of every
sample.

Strictness matters: every admission inequality is strict, so degenerate
all-equal cases admit nothing and the bank falls back to the source
prototype rows, which are always present.
"""

from dataclasses import dataclass, field

import numpy as np

from . import engine
from .backend import pairwise_cosine_distance
from .errors import ConfigError, DegenerateInputError, DimensionError, MiningError
from .model import build_feature_nodes, build_logit_nodes, extract_features, predict
from .scenario import FeatureMatrix

SOURCE_COARSE = "source_coarse"
TARGET_COARSE = "target_coarse"
FINE = "fine"


@dataclass
class Prototype:
    vector: np.ndarray
    grain: str
    confidence: float
    sample_index: int | None = None


@dataclass
class PrototypeBank:
    """Per-class prototype lists; all classes equal-sized after balancing."""

    by_class: dict = field(default_factory=dict)

    def add(self, class_index, prototype):
        self.by_class.setdefault(int(class_index), []).append(prototype)

    def classes(self):
        return sorted(self.by_class)

    def counts(self):
        return {k: len(v) for k, v in sorted(self.by_class.items())}

    def matrix(self, class_index):
        return np.stack([p.vector for p in self.by_class[class_index]])

    def sample_indices(self):
        """Indices of session samples that were admitted as prototypes."""
        out = set()
        for protos in self.by_class.values():
            out.update(p.sample_index for p in protos if p.sample_index is not None)
        return out

    def class_confidence(self, class_index):
        protos = self.by_class[class_index]
        return float(np.mean([p.confidence for p in protos]))


@dataclass
class PseudoLabeledBatch:
    """One session's worth of labeled-for-now data plus its second view."""

    inputs: FeatureMatrix
    features: np.ndarray
    pseudo_labels: np.ndarray
    confidence: np.ndarray
    augmented_inputs: FeatureMatrix
    augmented_features: np.ndarray

    def __post_init__(self):
        if self.features.shape != self.augmented_features.shape:
            raise DimensionError("the two views must have equal feature shapes")


@dataclass
class AugConfig:
    noise_sigma: float = 0.1
    mask_prob: float = 0.1

    def validate(self):
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if not 0 <= self.mask_prob < 1:
            raise ConfigError("mask_prob must lie in [0, 1)")


def initial_pseudo_labels(params, inputs, positive_set):
    """Argmax of the classifier restricted to positive classes.

    Masking out non-positive logits stops similar source classes outside
    the session from stealing labels; ties go to the lowest class index.
    """
    positive = sorted(positive_set.classes)
    if not positive:
        raise MiningError("cannot label against an empty positive set")
    probs = predict(params, inputs)
    restricted = probs[:, positive]
    picks = restricted.argmax(axis=1)
    return np.asarray(positive, dtype=np.int64)[picks]


def coarse_prototypes(features, initial_labels, source_rows, positive_set, confidences=None):
    """Source rows plus tightly clustered target features.

    Every positive class always contributes its source classifier row.
    Target features join when their cosine distance to the class mean
    beats the class's own average distance, strictly; classes with no
    initial labels simply keep only the source row.
    """
    feats = np.asarray(features, dtype=np.float64)
    labels = np.asarray(initial_labels, dtype=np.int64)
    rows = np.asarray(source_rows, dtype=np.float64)
    bank = PrototypeBank()
    for n in sorted(positive_set.classes):
        bank.add(n, Prototype(rows[n].copy(), SOURCE_COARSE, 1.0))
        member_idx = np.flatnonzero(labels == n)
        if member_idx.size == 0:
            continue
        members = feats[member_idx]
        center = members.mean(axis=0)
        dist = pairwise_cosine_distance(members, center[None, :]).ravel()
        tau_s = dist.mean()
        for j, i in enumerate(member_idx):
            if dist[j] < tau_s:
                conf = 1.0 if confidences is None else float(confidences[i])
                bank.add(n, Prototype(feats[i].copy(), TARGET_COARSE, conf, int(i)))
    return bank


def augment_features(inputs, rng, aug_cfg):
    """Second view: x' = (x + noise) * mask.

    Noise is Gaussian scaled by each dimension's own std across the
    batch; the mask drops each coordinate independently with probability
    mask_prob. Both draws come from the caller's rng, so a fixed seed
    reproduces the view exactly.
    """
    aug_cfg.validate()
    x = inputs.features if isinstance(inputs, FeatureMatrix) else np.asarray(inputs, dtype=np.float64)
    per_dim_std = x.std(axis=0)
    noise = rng.standard_normal(x.shape) * (aug_cfg.noise_sigma * per_dim_std)
    mask = (rng.random(x.shape) >= aug_cfg.mask_prob).astype(np.float64)
    out = (x + noise) * mask
    labels = inputs.labels if isinstance(inputs, FeatureMatrix) else None
    return FeatureMatrix(out, labels)


def fine_admission(conf, conf_aug):
    """Strict two-threshold rule on a batch of view-confidence pairs.

    Returns (admit mask, pair means, pair stds, tau_c, tau_u). tau_c
    averages all 2n confidences, tau_u the per-pair population stds
    |a - b| / 2; a pair is admitted iff its mean beats tau_c and its std
    stays below tau_u, both strictly.
    """
    conf = np.asarray(conf, dtype=np.float64)
    conf_aug = np.asarray(conf_aug, dtype=np.float64)
    if conf.shape != conf_aug.shape or conf.ndim != 1:
        raise DimensionError("confidence vectors of the two views must match")
    conf_avg = (conf + conf_aug) / 2.0
    u = np.abs(conf - conf_aug) / 2.0
    tau_c = np.concatenate([conf, conf_aug]).mean()
    tau_u = u.mean()
    admit = (conf_avg > tau_c) & (u < tau_u)
    return admit, conf_avg, u, tau_c, tau_u


def fine_prototypes(params, inputs, augmented, initial_labels):
    """Confident-and-stable samples become fine prototypes under their
    initial label; needs at least two samples so the thresholds exist."""
    n = len(inputs) if isinstance(inputs, FeatureMatrix) else np.asarray(inputs).shape[0]
    if n < 2:
        raise DegenerateInputError("fine prototypes need at least 2 samples")
    conf = predict(params, inputs).max(axis=1)
    conf_aug = predict(params, augmented).max(axis=1)
    admit, conf_avg, _, _, _ = fine_admission(conf, conf_aug)
    feats = extract_features(params, inputs).features
    labels = np.asarray(initial_labels, dtype=np.int64)
    entries = []
    for i in np.flatnonzero(admit):
        entries.append((int(labels[i]), Prototype(feats[i].copy(), FINE, float(conf_avg[i]), int(i))))
    return entries


def balance_prototypes(bank):
    """Trim every class to the minimum per-class count, keeping the
    highest-confidence prototypes (ties by insertion order)."""
    counts = bank.counts()
    for k, c in counts.items():
        if c == 0:
            raise DegenerateInputError(f"class {k} has no prototypes to balance")
    if not counts:
        raise DegenerateInputError("cannot balance an empty prototype bank")
    p = min(counts.values())
    balanced = PrototypeBank()
    for k in bank.classes():
        protos = bank.by_class[k]
        order = np.argsort([-q.confidence for q in protos], kind="stable")
        for idx in order[:p]:
            balanced.add(k, protos[idx])
    return balanced


def assign_pseudo_labels(features, bank):
    """Label each feature with the class whose prototypes are closest in
    mean cosine distance; ties go to the lowest class index."""
    feats = np.asarray(features, dtype=np.float64)
    classes = bank.classes()
    if not classes:
        raise DegenerateInputError("cannot assign labels from an empty bank")
    dist = np.stack(
        [pairwise_cosine_distance(feats, bank.matrix(k)).mean(axis=1) for k in classes],
        axis=1,
    )
    picks = dist.argmin(axis=1)
    return np.asarray(classes, dtype=np.int64)[picks]


def pseudo_label_session(ident_params, inputs, augmented, source_rows, positive_set):
    """Full per-epoch identification pass.

    The identification model supplies features and confidences; samples
    admitted as prototypes keep their initial labels, everyone else is
    re-labeled from the balanced bank. Returns (batch, bank).
    """
    labels0 = initial_pseudo_labels(ident_params, inputs, positive_set)
    conf = predict(ident_params, inputs).max(axis=1)
    feats = extract_features(ident_params, inputs).features
    aug_feats = extract_features(ident_params, augmented).features
    bank = coarse_prototypes(feats, labels0, source_rows, positive_set, confidences=conf)
    for class_index, proto in fine_prototypes(ident_params, inputs, augmented, labels0):
        bank.add(class_index, proto)
    bank = balance_prototypes(bank)
    labels = labels0.copy()
    remaining = np.asarray(
        sorted(set(range(len(labels))) - bank.sample_indices()), dtype=np.int64
    )
    if remaining.size:
        labels[remaining] = assign_pseudo_labels(feats[remaining], bank)
    if not set(labels.tolist()) <= positive_set.classes:
        raise MiningError("pseudo-labeling escaped the positive class set")
    batch = PseudoLabeledBatch(
        inputs=inputs,
        features=feats,
        pseudo_labels=labels,
        confidence=conf,
        augmented_inputs=augmented,
        augmented_features=aug_feats,
    )
    return batch, bank


def one_hot(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DimensionError("labels out of range for one-hot encoding")
    return np.eye(num_classes)[labels]


def loss_ce_node(nodes, x, targets):
    """Cross-entropy graph term: mean over the batch, targets one-hot
    over all classes so negative-class logits still feel pressure."""
    w1, b1, w2, b2, wc = nodes
    return engine.softmax_xent(build_logit_nodes(x, w1, b1, w2, b2, wc), targets)


def loss_ce(params, inputs, labels):
    """Standalone evaluation: (value, gradient list in parameter order)."""
    x = inputs.features if isinstance(inputs, FeatureMatrix) else np.asarray(inputs, dtype=np.float64)
    targets = one_hot(labels, params.num_classes)

    def build(*nodes):
        return loss_ce_node(nodes, x, targets)

    return engine.value_and_grad(build, params.param_list())


def interleave_views(a, b):
    """Stack two equal-shape batches so rows (2i, 2i+1) are the two
    views of sample i."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError("views to interleave must have equal shapes")
    out = np.empty((2 * a.shape[0], a.shape[1]))
    out[0::2] = a
    out[1::2] = b
    return out


def ntxent_node(z, kappa):
    """NT-Xent over an interleaved 2B-view feature node.

    For each view i the positive is its partner (index i XOR 1) and the
    denominator runs over every other view. Masks are constants, so the
    whole term stays inside the primitive vocabulary:
    loss = (1/2B) * sum_i [log sum_{b != i} exp(s_ib) - s_i,partner]
    with s = cosine similarity / kappa.
    """
    if kappa <= 0:
        raise ConfigError("kappa must be positive")
    two_b = z.value.shape[0]
    if two_b < 4 or two_b % 2 != 0:
        raise DegenerateInputError("contrastive loss needs at least 2 samples (4 views)")
    sim = engine.cosine_similarity(z, z)
    scaled = engine.scale(sim, 1.0 / kappa)
    off_diag = 1.0 - np.eye(two_b)
    exp_masked = engine.scale(engine.exp(scaled), off_diag)
    # The diagonal contributes exactly e^0 * 0 after masking, so the row
    # sum is the b != i denominator.
    denom = engine.reduce_sum(exp_masked, axis=1)
    log_denom = engine.reduce_sum(engine.log(denom))
    partner = np.zeros((two_b, two_b))
    idx = np.arange(two_b)
    partner[idx, idx ^ 1] = 1.0
    positives = engine.reduce_sum(engine.scale(scaled, partner))
    total = engine.add(log_denom, engine.scale(positives, -1.0))
    return engine.scale(total, 1.0 / two_b)


def loss_con_node(nodes, x_interleaved, kappa):
    """Contrastive graph term on raw interleaved inputs; both views pass
    through the live extractor, so gradients reach it twice."""
    w1, b1, w2, b2, _ = nodes
    return ntxent_node(build_feature_nodes(x_interleaved, w1, b1, w2, b2), kappa)


def loss_con(z, z_aug, kappa):
    """Standalone evaluation on fixed features: (value, dz, dz_aug)."""
    z2 = interleave_views(z, z_aug)

    def build(node):
        return ntxent_node(node, kappa)

    value, (grad,) = engine.value_and_grad(build, [z2])
    return value, grad[0::2], grad[1::2]
