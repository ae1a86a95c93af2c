"""Session loop tying mining, self-organization, distillation, and
replay into one objective, plus the evaluation protocol.

Per session: mine positive classes once with the frozen source model,
then per epoch re-identify prototypes and pseudo-labels (with the source
model while fewer than warm_iters optimization steps have run, the live
target model afterwards) and descend
    L = L_ce + mu_c^i * L_con + L_ptd + L_rep
by minibatch SGD. Only the extractor and the positive-class classifier
rows move; the memory bank refreshes on a fixed iteration cadence and at
session end. Everything is driven by seeded RNG streams, so a rerun of
the same config reproduces the metrics byte for byte.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .backend import ACTIVE as BACKEND
from .errors import ConfigError, NonFiniteError, TrainingError
from .mining import (
    mine_positive_classes,
    mining_report,
    probability_distribution,
    refine_positive_set,
    similarity_distribution,
)
from .model import SGD, clone_to_target, extract_features, predict
from .replay import ClassExemplars, MemoryBank, loss_rep_term, select_exemplars, update_memory
from .scenario import FeatureMatrix
from .selforg import (
    AugConfig,
    PseudoLabeledBatch,
    augment_features,
    initial_pseudo_labels,
    interleave_views,
    loss_ce_node,
    loss_con_node,
    one_hot,
    pseudo_label_session,
)
from .topodistill import class_proportions, loss_ptd_term
from . import engine

METRICS_COLUMNS = (
    "session",
    "epoch",
    "iter",
    "loss_ce",
    "loss_con",
    "loss_ptd",
    "loss_rep",
    "mu_c",
    "pseudo_acc",
)

_MINING_BRANCHES = ("union", "similarity_only", "probability_only")


@dataclass
class AdaptConfig:
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 1e-6
    batch_size: int = 32
    epochs: int = 20
    kappa: float = 0.5
    mu_c0: float = 0.5
    beta: float = 1e-4
    n_r: int = 10
    memory_update_every: int = 10
    warm_iters: int = 5
    aug: AugConfig = field(default_factory=AugConfig)
    seed: int = 0
    disable_con: bool = False
    disable_ptd: bool = False
    disable_replay: bool = False
    simple_labels: bool = False
    mining_branch: str = "union"

    def validate(self):
        for name in ("lr", "kappa", "mu_c0"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("momentum", "weight_decay", "beta"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2 for the contrastive views")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.n_r < 1:
            raise ConfigError("n_r must be at least 1")
        if self.memory_update_every < 1:
            raise ConfigError("memory_update_every must be at least 1")
        if self.warm_iters < 0:
            raise ConfigError("warm_iters must be non-negative")
        if self.mining_branch not in _MINING_BRANCHES:
            raise ConfigError(f"mining_branch must be one of {_MINING_BRANCHES}")
        self.aug.validate()


@dataclass
class MetricsRow:
    session: int
    epoch: int
    iter: int
    loss_ce: float
    loss_con: float
    loss_ptd: float
    loss_rep: float
    mu_c: float
    pseudo_acc: float


@dataclass
class SessionLog:
    session_index: int
    mined_classes: list
    refined_classes: list
    pcd: float
    tcd: float
    report: dict
    epoch_pseudo_acc: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    session_accuracy: float = float("nan")
    per_class_accuracy: dict = field(default_factory=dict)
    end_iteration: int = 0


def mu_schedule(i, mu_c0=0.5, beta=1e-4):
    """mu_c^i = mu_c^0 * e^(-i*beta), the closed form of multiplying by
    e^(-beta) once per iteration."""
    if i < 0:
        raise ConfigError("iteration index must be non-negative")
    return mu_c0 * np.exp(-beta * i)


def mined_metrics(mined_classes, true_classes):
    """(PCD, TCD) as fractions: recall and precision of the mined set."""
    true = set(int(c) for c in true_classes)
    mined = set(int(c) for c in mined_classes)
    if not true:
        raise ConfigError("true class set must be non-empty")
    hit = len(mined & true)
    pcd = hit / len(true)
    tcd = hit / len(mined) if mined else 0.0
    return pcd, tcd


def _batch_slices(n, batch_size):
    """Consecutive slices; a trailing 1-sample slice is merged into the
    previous batch so the contrastive term always sees a pair."""
    bounds = list(range(0, n, batch_size)) + [n]
    slices = [(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)]
    if len(slices) > 1 and slices[-1][1] - slices[-1][0] == 1:
        last = slices.pop()
        slices[-1] = (slices[-1][0], last[1])
    return slices


def _pseudo_accuracy(labels, hidden):
    if hidden is None:
        return float("nan")
    return float((np.asarray(labels) == np.asarray(hidden)).mean())


def _simple_label_pass(ident_params, inputs, augmented, positive):
    """Ablation labeling: restricted argmax only, no prototypes."""
    labels = initial_pseudo_labels(ident_params, inputs, positive)
    conf = predict(ident_params, inputs).max(axis=1)
    feats = extract_features(ident_params, inputs).features
    aug_feats = extract_features(ident_params, augmented).features
    batch = PseudoLabeledBatch(
        inputs=inputs,
        features=feats,
        pseudo_labels=labels,
        confidence=conf,
        augmented_inputs=augmented,
        augmented_features=aug_feats,
    )
    return batch, None


def _class_confidences(batch, proto_bank, classes):
    """Dedup confidence per class: mean prototype confidence when a bank
    exists, mean sample confidence under simple labeling."""
    out = {}
    for c in classes:
        if proto_bank is not None and c in proto_bank.by_class:
            out[c] = proto_bank.class_confidence(c)
        else:
            mask = batch.pseudo_labels == c
            out[c] = float(batch.confidence[mask].mean()) if mask.any() else 0.0
    return out


def _bank_snapshot(params, batch, class_conf, positive, n_r):
    """Herd exemplars for every labeled positive class from the current
    model's features, recording current soft predictions."""
    feats = extract_features(params, batch.inputs).features
    outputs = {}
    for c in sorted(positive.classes):
        idx = np.flatnonzero(batch.pseudo_labels == c)
        if idx.size == 0:
            continue
        order = select_exemplars(feats[idx], batch.inputs.features[idx], c, n_r)
        chosen = idx[order]
        outputs[c] = ClassExemplars(
            inputs=batch.inputs.features[chosen].copy(),
            soft_preds=predict(params, batch.inputs.features[chosen]),
            confidence=class_conf[c],
        )
    return outputs


def adapt_session(params, session, bank, snapshot, cfg, start_iteration=0):
    """One full session; returns (params, bank, SessionLog).

    ``start_iteration`` continues the run-global mu_c schedule across
    sessions; warm-model selection uses a session-local counter.
    """
    cfg.validate()
    rng = np.random.default_rng((cfg.seed, session.session_index))
    num_classes = params.num_classes

    source_feats = extract_features(snapshot.params, session.inputs)
    S = similarity_distribution(source_feats, snapshot.centroids)
    P = probability_distribution(snapshot, session.inputs)
    positive = mine_positive_classes(S, P, branch=cfg.mining_branch)
    mined = positive.sorted()
    pcd, tcd = mined_metrics(mined, session.class_subset)
    log = SessionLog(
        session_index=session.session_index,
        mined_classes=mined,
        refined_classes=mined,
        pcd=pcd,
        tcd=tcd,
        report=mining_report(S, P, positive),
    )

    opt = SGD(params.param_list(), cfg.lr, cfg.momentum, cfg.weight_decay)
    global_iter = start_iteration
    session_iter = 0
    last_batch = None
    last_bank_state = None

    for epoch in range(1, cfg.epochs + 1):
        ident_params = snapshot.params if session_iter < cfg.warm_iters else params
        augmented = augment_features(session.inputs, rng, cfg.aug)
        if cfg.simple_labels:
            batch, proto_bank = _simple_label_pass(ident_params, session.inputs, augmented, positive)
        else:
            batch, proto_bank = pseudo_label_session(
                ident_params, session.inputs, augmented, snapshot.params.classifier, positive
            )
        if epoch == 1:
            positive = refine_positive_set(positive, batch.pseudo_labels)
            log.refined_classes = positive.sorted()
        if not set(batch.pseudo_labels.tolist()) <= positive.classes:
            raise TrainingError("pseudo-labels escaped the positive class set")
        last_batch = batch
        last_bank_state = _class_confidences(batch, proto_bank, positive.sorted())

        pseudo_acc = _pseudo_accuracy(batch.pseudo_labels, session.inputs.labels)
        log.epoch_pseudo_acc.append(pseudo_acc)

        pos_list = positive.sorted()
        p_vec = class_proportions(batch.pseudo_labels, pos_list)
        mu_pos = snapshot.params.classifier[pos_list]
        targets_all = one_hot(batch.pseudo_labels, num_classes)
        wc_mask = np.zeros_like(params.classifier)
        wc_mask[pos_list] = 1.0
        masks = [None, None, None, None, wc_mask]

        order = rng.permutation(len(session.inputs))
        for lo, hi in _batch_slices(len(order), cfg.batch_size):
            idx = order[lo:hi]
            x = session.inputs.features[idx]
            x_aug = batch.augmented_inputs.features[idx]
            targets = targets_all[idx]
            mu_c = float(mu_schedule(global_iter, cfg.mu_c0, cfg.beta))
            use_con = not cfg.disable_con and idx.size >= 2
            use_rep = not cfg.disable_replay and bank.total_count() > 0
            parts = {}
            stage = ["assembly"]

            def build(w1, b1, w2, b2, wc):
                nodes = (w1, b1, w2, b2, wc)
                stage[0] = "loss_ce"
                parts["ce"] = loss_ce_node(nodes, x, targets)
                total = parts["ce"]
                if use_con:
                    stage[0] = "loss_con"
                    parts["con"] = loss_con_node(nodes, interleave_views(x, x_aug), cfg.kappa)
                    total = engine.add(total, engine.scale(parts["con"], mu_c))
                if not cfg.disable_ptd:
                    stage[0] = "loss_ptd"
                    parts["ptd"] = loss_ptd_term(wc, mu_pos, pos_list, p_vec, num_classes)
                    total = engine.add(total, parts["ptd"])
                if use_rep:
                    stage[0] = "loss_rep"
                    parts["rep"] = loss_rep_term(nodes, bank)
                    total = engine.add(total, parts["rep"])
                stage[0] = "total"
                return total

            try:
                _, grads = engine.value_and_grad(build, params.param_list())
            except NonFiniteError as exc:
                raise TrainingError(
                    f"non-finite {stage[0]} in session {session.session_index} "
                    f"epoch {epoch} iteration {session_iter + 1}: {exc}"
                ) from exc
            params.set_params(opt.step(params.param_list(), grads, masks))
            global_iter += 1
            session_iter += 1

            log.rows.append(
                MetricsRow(
                    session=session.session_index,
                    epoch=epoch,
                    iter=global_iter,
                    loss_ce=float(parts["ce"].value),
                    loss_con=float(parts["con"].value) if "con" in parts else 0.0,
                    loss_ptd=float(parts["ptd"].value) if "ptd" in parts else 0.0,
                    loss_rep=float(parts["rep"].value) if "rep" in parts else 0.0,
                    mu_c=mu_c,
                    pseudo_acc=pseudo_acc,
                )
            )

            if not cfg.disable_replay and session_iter % cfg.memory_update_every == 0:
                outputs = _bank_snapshot(params, batch, last_bank_state, positive, cfg.n_r)
                bank = update_memory(bank, outputs, session.session_index)

    if not cfg.disable_replay:
        if last_batch is None:
            ident_params = snapshot.params if session_iter < cfg.warm_iters else params
            augmented = augment_features(session.inputs, rng, cfg.aug)
            if cfg.simple_labels:
                last_batch, proto_bank = _simple_label_pass(
                    ident_params, session.inputs, augmented, positive
                )
            else:
                last_batch, proto_bank = pseudo_label_session(
                    ident_params, session.inputs, augmented, snapshot.params.classifier, positive
                )
            positive = refine_positive_set(positive, last_batch.pseudo_labels)
            log.refined_classes = positive.sorted()
            last_bank_state = _class_confidences(last_batch, proto_bank, positive.sorted())
        outputs = _bank_snapshot(params, last_batch, last_bank_state, positive, cfg.n_r)
        bank = update_memory(bank, outputs, session.session_index)

    log.end_iteration = global_iter
    return params, bank, log


def evaluate_final_accuracy(params, scenario, through_session):
    """Full-K accuracy on the concatenated held-out splits of sessions
    1..through_session."""
    if through_session < 1:
        raise ConfigError("through_session starts at 1")
    test = FeatureMatrix.concat(scenario.target_test_per_session[:through_session])
    pred = predict(params, test).argmax(axis=1)
    return float((pred == test.labels).mean())


def evaluate_session_accuracy(logs):
    return [log.session_accuracy for log in logs]


def old_class_accuracy(params, scenario, class_subset, at_session):
    """Accuracy restricted to test samples of ``class_subset`` within
    the sessions seen so far."""
    subset = set(int(c) for c in class_subset)
    test = FeatureMatrix.concat(scenario.target_test_per_session[:at_session])
    keep = np.array([int(y) in subset for y in test.labels])
    if not keep.any():
        raise ConfigError("class subset absent from the seen test data")
    sub = test.subset(np.flatnonzero(keep))
    pred = predict(params, sub).argmax(axis=1)
    return float((pred == sub.labels).mean())


def run_adaptation(scenario, snapshot, cfg):
    """All sessions in order; returns (params, bank, logs, summary)."""
    params = clone_to_target(snapshot)
    bank = MemoryBank(n_r=cfg.n_r)
    logs = []
    global_iter = 0
    session1_classes = sorted(scenario.target_sessions[0].class_subset)
    old_curve = []
    for session in scenario.target_sessions:
        params, bank, log = adapt_session(
            params, session, bank, snapshot, cfg, start_iteration=global_iter
        )
        global_iter = log.end_iteration
        t = session.session_index
        log.session_accuracy = evaluate_final_accuracy(params, scenario, t)
        test = FeatureMatrix.concat(scenario.target_test_per_session[:t])
        pred = predict(params, test).argmax(axis=1)
        for c in sorted(set(test.labels.tolist())):
            mask = test.labels == c
            log.per_class_accuracy[int(c)] = float((pred[mask] == c).mean())
        old_curve.append(old_class_accuracy(params, scenario, session1_classes, t))
        logs.append(log)
    summary = {
        "backend": BACKEND,
        "seed": cfg.seed,
        "final_accuracy": logs[-1].session_accuracy,
        "session_accuracies": [log.session_accuracy for log in logs],
        "mining": [
            {
                "session": log.session_index,
                "mined": log.mined_classes,
                "refined": log.refined_classes,
                "pcd": log.pcd,
                "tcd": log.tcd,
            }
            for log in logs
        ],
        "old_class_accuracy_session1": old_curve,
        "forgetting_session1": old_curve[0] - old_curve[-1],
        "per_class_accuracy_final": {
            str(k): v for k, v in sorted(logs[-1].per_class_accuracy.items())
        },
    }
    return params, bank, logs, summary


def write_metrics_csv(path, logs):
    """One row per optimization iteration; float fields use repr, so a
    rerun of the same config writes identical bytes."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for log in logs:
            for row in log.rows:
                writer.writerow(
                    [
                        row.session,
                        row.epoch,
                        row.iter,
                        repr(float(row.loss_ce)),
                        repr(float(row.loss_con)),
                        repr(float(row.loss_ptd)),
                        repr(float(row.loss_rep)),
                        repr(float(row.mu_c)),
                        repr(float(row.pseudo_acc)),
                    ]
                )


def write_summary_json(path, summary):
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
