"""Backbone stand-in: small extractor G plus a bias-free linear classifier C.

The classifier is bias-free on purpose: its weight rows then *are* the
class prototypes that the topology losses compare, so prototype geometry
lives directly in the parameters. The extractor is one hidden relu layer
followed by a linear feature layer, the smallest shape that makes
adaptation non-trivial while keeping gradient checks cheap.

The source model is trained once, then frozen together with its class
centroids; adaptation only ever reads the snapshot.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import engine
from .backend import softmax_rows
from .errors import DataFormatError, DegenerateInputError, DimensionError, PretrainError
from .scenario import FeatureMatrix


@dataclass
class ModelParams:
    """Extractor weights (two affine layers, relu between) and the
    K x feat_dim bias-free classifier."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    classifier: np.ndarray

    @property
    def input_dim(self):
        return self.w1.shape[0]

    @property
    def hidden_dim(self):
        return self.w1.shape[1]

    @property
    def feat_dim(self):
        return self.w2.shape[1]

    @property
    def num_classes(self):
        return self.classifier.shape[0]

    def param_list(self):
        """Parameters in the fixed order used by the optimizer and tape."""
        return [self.w1, self.b1, self.w2, self.b2, self.classifier]

    def set_params(self, values):
        self.w1, self.b1, self.w2, self.b2, self.classifier = [
            np.asarray(v, dtype=np.float64) for v in values
        ]

    def copy(self):
        return ModelParams(*(p.copy() for p in self.param_list()))

    def validate(self):
        if self.w1.shape[1] != self.b1.shape[0] or self.w2.shape[1] != self.b2.shape[0]:
            raise DimensionError("bias lengths must match layer widths")
        if self.w1.shape[1] != self.w2.shape[0]:
            raise DimensionError("hidden widths of the two layers disagree")
        if self.classifier.shape[1] != self.feat_dim:
            raise DimensionError("classifier columns must equal feat_dim")
        for p in self.param_list():
            if not np.all(np.isfinite(p)):
                raise DegenerateInputError("model parameters must be finite")


@dataclass
class SourceSnapshot:
    """Frozen source model plus per-class feature centroids."""

    params: ModelParams
    centroids: np.ndarray

    def __post_init__(self):
        self.params = self.params.copy()
        self.centroids = np.array(self.centroids, dtype=np.float64)
        for arr in self.params.param_list() + [self.centroids]:
            arr.setflags(write=False)


def init_model(input_dim, hidden_dim, feat_dim, num_classes, rng):
    w1 = rng.standard_normal((input_dim, hidden_dim)) * np.sqrt(2.0 / input_dim)
    w2 = rng.standard_normal((hidden_dim, feat_dim)) * np.sqrt(2.0 / hidden_dim)
    wc = rng.standard_normal((num_classes, feat_dim)) * np.sqrt(1.0 / feat_dim)
    return ModelParams(w1, np.zeros(hidden_dim), w2, np.zeros(feat_dim), wc)


def _input_array(params, inputs):
    x = inputs.features if isinstance(inputs, FeatureMatrix) else np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError("inputs must be a 2-D batch")
    if x.shape[1] != params.input_dim:
        raise DimensionError(f"input dim {x.shape[1]} does not match extractor {params.input_dim}")
    return x


def extract_features(params, inputs):
    """G(x) for a batch; labels (if any) ride along for metrics."""
    x = _input_array(params, inputs)
    h = np.maximum(x @ params.w1 + params.b1, 0.0)
    feats = h @ params.w2 + params.b2
    labels = inputs.labels if isinstance(inputs, FeatureMatrix) else None
    return FeatureMatrix(feats, labels)


def predict(params, inputs):
    """Row-softmax of C(G(x)): one probability distribution per input."""
    feats = extract_features(params, inputs).features
    return softmax_rows(feats @ params.classifier.T)


def accuracy(params, data):
    if data.labels is None:
        raise DegenerateInputError("accuracy needs labeled data")
    pred = predict(params, data).argmax(axis=1)
    return float((pred == data.labels).mean())


def compute_source_centroids(params, data):
    """Per-class means of extracted features; every class must appear."""
    if data.labels is None:
        raise DegenerateInputError("centroids need labeled data")
    feats = extract_features(params, data).features
    k = params.num_classes
    centroids = np.zeros((k, params.feat_dim))
    for c in range(k):
        mask = data.labels == c
        if not mask.any():
            raise DegenerateInputError(f"class {c} has no samples for centroid computation")
        centroids[c] = feats[mask].mean(axis=0)
    return centroids


def clone_to_target(snapshot):
    """Writable deep copy of the frozen source parameters."""
    return snapshot.params.copy()


def build_feature_nodes(x, w1, b1, w2, b2):
    """Tape forward of the extractor for a constant batch ``x``."""
    h = engine.relu(engine.add(engine.matmul(x, w1), b1))
    return engine.add(engine.matmul(h, w2), b2)


def build_logit_nodes(x, w1, b1, w2, b2, wc):
    feats = build_feature_nodes(x, w1, b1, w2, b2)
    return engine.matmul(feats, wc, transpose_b=True)


class SGD:
    """Momentum SGD with decoupled-by-mask row freezing.

    ``masks[i]`` (same shape as the parameter, values 0/1) multiplies the
    weight-decayed gradient before it enters the velocity, so masked
    entries never move: no gradient, no decay, no stale momentum.
    """

    def __init__(self, params, lr, momentum=0.0, weight_decay=0.0):
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, params, grads, masks=None):
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            update = g + self.weight_decay * p
            self.velocity[i] = self.momentum * self.velocity[i] + update
            if masks is not None and masks[i] is not None:
                # Masking the velocity as well keeps frozen rows bitwise
                # fixed even if a row was briefly trainable earlier.
                self.velocity[i] = self.velocity[i] * masks[i]
            out.append(p - self.lr * self.velocity[i])
        return out


@dataclass
class PretrainConfig:
    hidden_dim: int = 64
    feat_dim: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-6
    batch_size: int = 32
    max_epochs: int = 50
    # Keep training for at least this many epochs even once the accuracy
    # gate is met: the classifier can clear the gate in one epoch while
    # the feature geometry (centroid separation) is still half-formed.
    min_epochs: int = 10
    min_source_acc: float = 0.99
    seed: int = 0


def pretrain_source(scenario, cfg=None):
    """SGD on softmax cross-entropy until the source test accuracy gate,
    then freeze parameters and centroids."""
    cfg = cfg or PretrainConfig()
    rng = np.random.default_rng(cfg.seed)
    train = scenario.source_train
    if train.labels is None:
        raise DegenerateInputError("source pretraining needs labeled data")
    params = init_model(scenario.input_dim, cfg.hidden_dim, cfg.feat_dim, scenario.K, rng)
    opt = SGD(params.param_list(), cfg.lr, cfg.momentum, cfg.weight_decay)
    onehot_all = np.eye(scenario.K)[train.labels]
    best = 0.0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x = train.features[idx]
            t = onehot_all[idx]

            def build(w1, b1, w2, b2, wc):
                return engine.softmax_xent(build_logit_nodes(x, w1, b1, w2, b2, wc), t)

            _, grads = engine.value_and_grad(build, params.param_list())
            params.set_params(opt.step(params.param_list(), grads))
        acc = accuracy(params, scenario.source_test)
        best = max(best, acc)
        if acc >= cfg.min_source_acc and epoch >= cfg.min_epochs:
            centroids = compute_source_centroids(params, train)
            return SourceSnapshot(params=params, centroids=centroids)
    raise PretrainError(
        f"source accuracy gate {cfg.min_source_acc} not reached in {cfg.max_epochs} epochs",
        best_accuracy=best,
    )


# GRMD model checkpoint (little-endian): magic "GRMD", u32 version=1,
# u32 input_dim, u32 hidden_dim, u32 feat_dim, u32 num_classes,
# u8 centroid flag, then f32 blocks w1, b1, w2, b2, classifier and (if
# the flag is set) centroids. Exact at f32 precision.

_GRMD_MAGIC = b"GRMD"
_GRMD_VERSION = 1
_GRMD_HEADER = struct.Struct("<4sIIIIIB")


def save_model(path, params, centroids=None):
    params.validate()
    flag = 0 if centroids is None else 1
    with open(path, "wb") as fh:
        fh.write(
            _GRMD_HEADER.pack(
                _GRMD_MAGIC,
                _GRMD_VERSION,
                params.input_dim,
                params.hidden_dim,
                params.feat_dim,
                params.num_classes,
                flag,
            )
        )
        for block in params.param_list():
            fh.write(np.ascontiguousarray(block, dtype="<f4").tobytes())
        if flag:
            fh.write(np.ascontiguousarray(centroids, dtype="<f4").tobytes())


def load_model(path):
    """Read a GRMD checkpoint; returns (params, centroids-or-None)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _GRMD_HEADER.size:
        raise DataFormatError("file shorter than the fixed header", offset=len(blob))
    magic, version, input_dim, hidden_dim, feat_dim, num_classes, flag = _GRMD_HEADER.unpack_from(
        blob, 0
    )
    if magic != _GRMD_MAGIC:
        raise DataFormatError(f"bad magic {magic!r}", offset=0)
    if version != _GRMD_VERSION:
        raise DataFormatError(f"unsupported version {version}", offset=4)
    if min(input_dim, hidden_dim, feat_dim, num_classes) == 0:
        raise DataFormatError("all model dimensions must be positive", offset=8)
    if flag not in (0, 1):
        raise DataFormatError(f"centroid flag must be 0 or 1, got {flag}", offset=24)
    shapes = [
        (input_dim, hidden_dim),
        (hidden_dim,),
        (hidden_dim, feat_dim),
        (feat_dim,),
        (num_classes, feat_dim),
    ]
    if flag:
        shapes.append((num_classes, feat_dim))
    offset = _GRMD_HEADER.size
    blocks = []
    for shape in shapes:
        count = int(np.prod(shape))
        end = offset + count * 4
        if len(blob) < end:
            raise DataFormatError("parameter block truncated", offset=len(blob))
        blocks.append(
            np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            .reshape(shape)
            .astype(np.float64)
        )
        offset = end
    if len(blob) != offset:
        raise DataFormatError("trailing bytes after expected end of file", offset=offset)
    params = ModelParams(*blocks[:5])
    params.validate()
    centroids = blocks[5] if flag else None
    return params, centroids
