"""Synthetic class-incremental scenarios and feature file ingestion.

A scenario holds a labeled source domain plus an ordered list of target
sessions whose labels are hidden from training (kept only for metrics).
Source clusters sit on a sphere sized so that the nearest-mean margin
comfortably exceeds the cluster spread; the target domain is the same
cluster structure pushed through one random well-conditioned affine map
plus noise. Leftover classes that fit no session stay source-only and
act as negative classes.

Generation is a pure function of (config, seed): identical calls yield
byte-identical arrays.
"""

import csv
import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataFormatError, DimensionError

# Nearest-mean margin as a multiple of cluster_spread. Anything > 4
# keeps clusters separable; 8 puts decision boundaries 4 sigma out, so
# even the unluckiest held-out draws stay on the right side.
_MARGIN_FACTOR = 8.0
# Std of the additive noise applied after the affine shift, relative to
# cluster_spread.
_TARGET_NOISE_FACTOR = 0.5
# Fraction of each class reserved as held-out test data.
_TEST_FRACTION = 0.2


class FeatureMatrix:
    """Rows of real-valued feature vectors with optional integer labels."""

    __slots__ = ("features", "labels")

    def __init__(self, features, labels=None):
        feats = np.ascontiguousarray(features, dtype=np.float64)
        if feats.ndim != 2 or feats.size == 0:
            raise DimensionError("features must form a non-empty 2-D matrix")
        if labels is not None:
            labels = np.ascontiguousarray(labels, dtype=np.int64)
            if labels.shape != (feats.shape[0],):
                raise DimensionError(
                    f"label count {labels.shape} does not match {feats.shape[0]} rows"
                )
        self.features = feats
        self.labels = labels

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        labels = None if self.labels is None else self.labels[idx]
        return FeatureMatrix(self.features[idx], labels)

    @staticmethod
    def concat(parts):
        parts = list(parts)
        if not parts:
            raise DimensionError("cannot concatenate zero feature matrices")
        feats = np.concatenate([p.features for p in parts], axis=0)
        if all(p.labels is not None for p in parts):
            labels = np.concatenate([p.labels for p in parts])
        else:
            labels = None
        return FeatureMatrix(feats, labels)


@dataclass
class SessionDataset:
    """One incremental step: unlabeled inputs drawn from γ fresh classes."""

    session_index: int
    inputs: FeatureMatrix
    class_subset: frozenset

    def __post_init__(self):
        if self.session_index < 1:
            raise ConfigError("session_index starts at 1")
        if len(self.inputs) == 0:
            raise ConfigError("session inputs must be non-empty")
        if self.inputs.labels is not None:
            present = set(int(y) for y in self.inputs.labels)
            if not present <= set(self.class_subset):
                raise ConfigError("session contains labels outside its class subset")


@dataclass
class Scenario:
    K: int
    input_dim: int
    source_train: FeatureMatrix
    source_test: FeatureMatrix
    target_sessions: list
    target_test_per_session: list
    seed: int

    def __post_init__(self):
        subsets = [s.class_subset for s in self.target_sessions]
        seen = set()
        for sub in subsets:
            if seen & set(sub):
                raise ConfigError("session class subsets must be pairwise disjoint")
            if not set(sub) < set(range(self.K)):
                raise ConfigError("session classes must be a strict subset of {0..K-1}")
            seen |= set(sub)

    @property
    def session_classes(self):
        """Class indices covered by any session, ascending."""
        out = set()
        for s in self.target_sessions:
            out |= set(s.class_subset)
        return sorted(out)

    @property
    def negative_classes(self):
        """Source-only classes that never appear in a target session."""
        return sorted(set(range(self.K)) - set(self.session_classes))


@dataclass
class ScenarioConfig:
    K: int = 12
    gamma: int = 4
    session_count: int = 3
    input_dim: int = 16
    samples_per_class: int = 50
    cluster_spread: float = 1.0
    domain_shift_strength: float = 0.3
    seed: int = 0

    def validate(self):
        if self.gamma < 1:
            raise ConfigError("gamma must be at least 1")
        if self.session_count < 1:
            raise ConfigError("session_count must be at least 1")
        if self.K < self.gamma * self.session_count:
            raise ConfigError(
                f"K={self.K} cannot cover {self.session_count} sessions of {self.gamma} classes"
            )
        if self.input_dim < 1:
            raise ConfigError("input_dim must be at least 1")
        if self.samples_per_class < 2:
            raise ConfigError("samples_per_class must allow a train/test split")
        if self.cluster_spread <= 0:
            raise ConfigError("cluster_spread must be positive")
        if self.domain_shift_strength <= 0:
            raise ConfigError("domain_shift_strength must be positive")


def partition_sessions(labels, gamma, order="index", seed=None):
    """Group distinct class labels into consecutive blocks of ``gamma``.

    Trailing classes that do not fill a block are excluded. ``order`` is
    "index" (ascending) or "random" (seeded permutation).
    """
    classes = sorted(set(int(c) for c in labels))
    if gamma < 1:
        raise ConfigError("gamma must be at least 1")
    if gamma > len(classes):
        raise ConfigError(f"gamma={gamma} exceeds the {len(classes)} available classes")
    if order == "random":
        rng = np.random.default_rng(seed)
        classes = [classes[i] for i in rng.permutation(len(classes))]
    elif order != "index":
        raise ConfigError(f"unknown session order '{order}'")
    blocks = len(classes) // gamma
    return [frozenset(classes[i * gamma : (i + 1) * gamma]) for i in range(blocks)]


def _class_means(rng, K, dim, spread):
    """K means on a sphere whose radius enforces the margin rule.

    When K <= dim the directions form a randomly rotated orthonormal
    frame, so every pair of means is separated by the same distance and
    no pair is accidentally near-collinear; otherwise random unit
    directions with a rejection floor on the closest pair."""
    if K <= dim:
        q, r = np.linalg.qr(rng.standard_normal((dim, K)))
        dirs = (q * np.sign(np.diag(r))).T
        min_dist = np.sqrt(2.0)
    else:
        for _ in range(64):
            dirs = rng.standard_normal((K, dim))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            diff = dirs[:, None, :] - dirs[None, :, :]
            dist = np.sqrt((diff**2).sum(axis=2))
            np.fill_diagonal(dist, np.inf)
            min_dist = dist.min()
            if min_dist > 0.05:
                break
        else:
            raise ConfigError("could not place class means with positive separation")
    radius = _MARGIN_FACTOR * spread / min_dist
    return dirs * radius


def _affine_map(rng, dim, strength):
    """Random rotation of angle ~strength radians plus a translation.

    A is the Cayley transform (I - G)(I + G)^-1 of a scaled random skew
    matrix G, hence exactly orthogonal: clusters move without any norm
    or conditioning distortion, and strength dials the turn smoothly
    from identity."""
    r = rng.standard_normal((dim, dim)) / np.sqrt(dim)
    skew = (r - r.T) / 2.0
    g = (strength / 2.0) * skew
    a = np.linalg.solve(np.eye(dim) + g, np.eye(dim) - g)
    b = rng.standard_normal(dim) * strength
    return a, b


def _split_counts(n):
    n_test = max(1, int(round(n * _TEST_FRACTION)))
    n_train = n - n_test
    if n_train < 1:
        raise ConfigError(f"samples_per_class={n} leaves no training data after the split")
    return n_train, n_test


def generate_scenario(cfg):
    """Draw a full scenario (source train/test, target sessions, target
    test splits) from one seeded RNG stream."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    means = _class_means(rng, cfg.K, cfg.input_dim, cfg.cluster_spread)
    affine_a, affine_b = _affine_map(rng, cfg.input_dim, cfg.domain_shift_strength)
    n_train, n_test = _split_counts(cfg.samples_per_class)

    src_train_parts, src_test_parts = [], []
    for k in range(cfg.K):
        samples = means[k] + rng.standard_normal((cfg.samples_per_class, cfg.input_dim)) * cfg.cluster_spread
        src_train_parts.append((samples[:n_train], np.full(n_train, k)))
        src_test_parts.append((samples[n_train:], np.full(n_test, k)))

    subsets = partition_sessions(range(cfg.K), cfg.gamma)[: cfg.session_count]
    noise_std = _TARGET_NOISE_FACTOR * cfg.cluster_spread
    sessions, session_tests = [], []
    for t, subset in enumerate(subsets, start=1):
        train_parts, test_parts = [], []
        for k in sorted(subset):
            base = means[k] + rng.standard_normal((cfg.samples_per_class, cfg.input_dim)) * cfg.cluster_spread
            shifted = base @ affine_a.T + affine_b
            shifted = shifted + rng.standard_normal(shifted.shape) * noise_std
            train_parts.append((shifted[:n_train], np.full(n_train, k)))
            test_parts.append((shifted[n_train:], np.full(n_test, k)))
        train = FeatureMatrix(
            np.concatenate([p[0] for p in train_parts]),
            np.concatenate([p[1] for p in train_parts]),
        )
        test = FeatureMatrix(
            np.concatenate([p[0] for p in test_parts]),
            np.concatenate([p[1] for p in test_parts]),
        )
        sessions.append(SessionDataset(session_index=t, inputs=train, class_subset=subset))
        session_tests.append(test)

    return Scenario(
        K=cfg.K,
        input_dim=cfg.input_dim,
        source_train=FeatureMatrix(
            np.concatenate([p[0] for p in src_train_parts]),
            np.concatenate([p[1] for p in src_train_parts]),
        ),
        source_test=FeatureMatrix(
            np.concatenate([p[0] for p in src_test_parts]),
            np.concatenate([p[1] for p in src_test_parts]),
        ),
        target_sessions=sessions,
        target_test_per_session=session_tests,
        seed=cfg.seed,
    )


# GRFT feature file layout (little-endian):
#   offset 0: magic "GRFT"; 4: u32 version=1; 8: u32 rows; 12: u32 dim;
#   16: u8 label flag; 17: rows*dim f32 payload; then rows u32 labels if
#   the flag is set. No trailing bytes.

_GRFT_MAGIC = b"GRFT"
_GRFT_VERSION = 1
_HEADER = struct.Struct("<4sIIIB")


def save_feature_file(path, matrix):
    flag = 0 if matrix.labels is None else 1
    rows, dim = matrix.features.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_GRFT_MAGIC, _GRFT_VERSION, rows, dim, flag))
        fh.write(matrix.features.astype("<f4").tobytes(order="C"))
        if flag:
            fh.write(matrix.labels.astype("<u4").tobytes())


def load_feature_file(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise DataFormatError("file shorter than the fixed header", offset=len(blob))
    magic, version, rows, dim, flag = _HEADER.unpack_from(blob, 0)
    if magic != _GRFT_MAGIC:
        raise DataFormatError(f"bad magic {magic!r}", offset=0)
    if version != _GRFT_VERSION:
        raise DataFormatError(f"unsupported version {version}", offset=4)
    if rows == 0:
        raise DataFormatError("row count must be positive", offset=8)
    if dim == 0:
        raise DataFormatError("dimension must be positive", offset=12)
    if flag not in (0, 1):
        raise DataFormatError(f"label flag must be 0 or 1, got {flag}", offset=16)
    payload_end = _HEADER.size + rows * dim * 4
    if len(blob) < payload_end:
        raise DataFormatError(
            f"payload needs {rows * dim * 4} bytes, file ends early", offset=len(blob)
        )
    feats = np.frombuffer(blob, dtype="<f4", count=rows * dim, offset=_HEADER.size)
    feats = feats.reshape(rows, dim).astype(np.float64)
    labels = None
    expected_end = payload_end
    if flag:
        expected_end = payload_end + rows * 4
        if len(blob) < expected_end:
            raise DataFormatError("label block truncated", offset=len(blob))
        labels = np.frombuffer(blob, dtype="<u4", count=rows, offset=payload_end).astype(np.int64)
    if len(blob) != expected_end:
        raise DataFormatError("trailing bytes after expected end of file", offset=expected_end)
    return FeatureMatrix(feats, labels)


def save_feature_csv(path, matrix):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if matrix.labels is None:
            writer.writerow([matrix.dim])
            for row in matrix.features:
                writer.writerow([repr(float(v)) for v in row])
        else:
            writer.writerow([matrix.dim, "label"])
            for row, lab in zip(matrix.features, matrix.labels):
                writer.writerow([repr(float(v)) for v in row] + [int(lab)])


def load_feature_csv(path):
    with open(path, "r", newline="") as fh:
        text = fh.read()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataFormatError("empty CSV feature file") from None
    if not header or len(header) > 2 or (len(header) == 2 and header[1].strip() != "label"):
        raise DataFormatError(f"CSV header must be 'dim' or 'dim,label', got {header!r}")
    try:
        dim = int(header[0])
    except ValueError:
        raise DataFormatError(f"CSV header dim is not an integer: {header[0]!r}") from None
    if dim < 1:
        raise DataFormatError("CSV header dim must be positive")
    labeled = len(header) == 2
    width = dim + (1 if labeled else 0)
    feats, labels = [], []
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != width:
            raise DataFormatError(f"line {line_no}: expected {width} columns, got {len(row)}")
        try:
            values = [float(v) for v in row[:dim]]
            if labeled:
                labels.append(int(row[dim]))
        except ValueError as exc:
            raise DataFormatError(f"line {line_no}: {exc}") from None
        feats.append(values)
    if not feats:
        raise DataFormatError("CSV feature file contains no data rows")
    return FeatureMatrix(np.array(feats), np.array(labels) if labeled else None)


def load_features(path):
    """Load either format, chosen by file suffix (.csv vs binary)."""
    if str(path).endswith(".csv"):
        return load_feature_csv(path)
    return load_feature_file(path)
