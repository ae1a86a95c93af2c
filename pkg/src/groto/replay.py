"""Exemplar memory with greedy herding and confidence-gated dedup.

Each stored class keeps up to n_r exemplars chosen greedily so that the
running mean of their features tracks the class feature mean. A class
already in the bank is only re-stored when the new session's class
confidence strictly beats the recorded one; stored soft predictions are
frozen at storage time, so replay distills toward the model that stored
them, not the current one.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .backend import herding_order
from .errors import DataFormatError, DegenerateInputError, DimensionError
from .model import build_logit_nodes
from .scenario import FeatureMatrix


@dataclass
class MemoryEntry:
    exemplar: np.ndarray
    soft_pred: np.ndarray
    pseudo_label: int
    confidence: float


@dataclass
class ClassExemplars:
    """One session's candidate storage for a single class."""

    inputs: np.ndarray
    soft_preds: np.ndarray
    confidence: float


@dataclass
class MemoryBank:
    n_r: int
    per_class: dict = field(default_factory=dict)
    session_of_record: dict = field(default_factory=dict)

    def classes(self):
        return sorted(self.per_class)

    def total_count(self):
        return sum(len(v) for v in self.per_class.values())

    def class_confidence(self, class_index):
        return self.per_class[class_index][0].confidence

    def stacked(self):
        """(inputs, soft predictions) over all entries, class-major in
        ascending class order, insertion order within a class."""
        if self.total_count() == 0:
            raise DegenerateInputError("memory bank is empty")
        entries = [e for k in self.classes() for e in self.per_class[k]]
        return (
            np.stack([e.exemplar for e in entries]),
            np.stack([e.soft_pred for e in entries]),
        )


def select_exemplars(features, inputs, class_index, n_r):
    """Greedy herding over one class's samples.

    Round k picks the sample whose feature, averaged with everything
    already picked, lands closest (L2) to the class feature mean; picks
    are removed from the pool, ties go to the lowest index. Returns the
    chosen row indices in pick order.
    """
    feats = np.asarray(features, dtype=np.float64)
    x = inputs.features if isinstance(inputs, FeatureMatrix) else np.asarray(inputs, dtype=np.float64)
    if feats.ndim != 2 or feats.size == 0:
        raise DegenerateInputError(f"class {class_index} has no samples to select from")
    if feats.shape[0] != x.shape[0]:
        raise DimensionError("features and inputs must pair up row for row")
    if n_r < 1:
        raise DegenerateInputError("exemplar capacity must be at least 1")
    count = min(n_r, feats.shape[0])
    return herding_order(feats, count)


def update_memory(bank, session_outputs, session_id):
    """Insert new classes; replace a stored class only on strictly
    higher confidence, updating its session of record."""
    for class_index in sorted(session_outputs):
        out = session_outputs[class_index]
        if out.inputs.shape[0] > bank.n_r:
            raise DimensionError(
                f"class {class_index} offers {out.inputs.shape[0]} exemplars, capacity {bank.n_r}"
            )
        if class_index in bank.per_class:
            if not out.confidence > bank.class_confidence(class_index):
                continue
        bank.per_class[class_index] = [
            MemoryEntry(
                exemplar=np.array(out.inputs[i], dtype=np.float64),
                soft_pred=np.array(out.soft_preds[i], dtype=np.float64),
                pseudo_label=int(class_index),
                confidence=float(out.confidence),
            )
            for i in range(out.inputs.shape[0])
        ]
        bank.session_of_record[class_index] = session_id
    return bank


def loss_rep_term(nodes, bank):
    """Graph term: soft cross-entropy of current predictions on stored
    exemplars against the frozen storing-time predictions."""
    w1, b1, w2, b2, wc = nodes
    inputs, soft = bank.stacked()
    logits = build_logit_nodes(inputs, w1, b1, w2, b2, wc)
    return engine.softmax_xent(logits, soft)


def loss_rep(params, bank):
    """Standalone evaluation; an empty bank contributes exactly zero."""
    if bank.total_count() == 0:
        return 0.0, [np.zeros_like(p) for p in params.param_list()]

    def build(*nodes):
        return loss_rep_term(nodes, bank)

    return engine.value_and_grad(build, params.param_list())


# GRMB bank checkpoint (little-endian): magic "GRMB", u32 version=1,
# u32 n_r, u32 input_dim, u32 num_classes, u32 entry count, then per
# entry: u32 class, u32 pseudo-label, u32 session of record,
# f32 confidence, f32 exemplar[input_dim], f32 soft_pred[num_classes].

_GRMB_MAGIC = b"GRMB"
_GRMB_VERSION = 1
_GRMB_HEADER = struct.Struct("<4sIIIII")
_ENTRY_FIXED = struct.Struct("<IIIf")


def save_bank(path, bank, input_dim, num_classes):
    entries = [
        (k, e, bank.session_of_record[k]) for k in bank.classes() for e in bank.per_class[k]
    ]
    with open(path, "wb") as fh:
        fh.write(
            _GRMB_HEADER.pack(
                _GRMB_MAGIC, _GRMB_VERSION, bank.n_r, input_dim, num_classes, len(entries)
            )
        )
        for class_index, entry, session in entries:
            fh.write(
                _ENTRY_FIXED.pack(class_index, entry.pseudo_label, session, entry.confidence)
            )
            fh.write(np.ascontiguousarray(entry.exemplar, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(entry.soft_pred, dtype="<f4").tobytes())


def load_bank(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _GRMB_HEADER.size:
        raise DataFormatError("file shorter than the fixed header", offset=len(blob))
    magic, version, n_r, input_dim, num_classes, count = _GRMB_HEADER.unpack_from(blob, 0)
    if magic != _GRMB_MAGIC:
        raise DataFormatError(f"bad magic {magic!r}", offset=0)
    if version != _GRMB_VERSION:
        raise DataFormatError(f"unsupported version {version}", offset=4)
    if n_r == 0 or input_dim == 0 or num_classes == 0:
        raise DataFormatError("n_r and dimensions must be positive", offset=8)
    bank = MemoryBank(n_r=n_r)
    offset = _GRMB_HEADER.size
    entry_bytes = _ENTRY_FIXED.size + 4 * (input_dim + num_classes)
    for _ in range(count):
        if len(blob) < offset + entry_bytes:
            raise DataFormatError("entry block truncated", offset=len(blob))
        class_index, pseudo_label, session, confidence = _ENTRY_FIXED.unpack_from(blob, offset)
        offset += _ENTRY_FIXED.size
        exemplar = np.frombuffer(blob, dtype="<f4", count=input_dim, offset=offset).astype(
            np.float64
        )
        offset += 4 * input_dim
        soft = np.frombuffer(blob, dtype="<f4", count=num_classes, offset=offset).astype(
            np.float64
        )
        offset += 4 * num_classes
        bank.per_class.setdefault(int(class_index), []).append(
            MemoryEntry(exemplar, soft, int(pseudo_label), float(confidence))
        )
        bank.session_of_record[int(class_index)] = int(session)
        if len(bank.per_class[int(class_index)]) > n_r:
            raise DataFormatError(f"class {class_index} exceeds capacity {n_r}", offset=offset)
    if len(blob) != offset:
        raise DataFormatError("trailing bytes after expected end of file", offset=offset)
    return bank
