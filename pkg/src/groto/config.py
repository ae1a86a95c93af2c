"""Run configuration: flat dotted-key text files.

Syntax: one `section.key = value` per line, full-line `#` comments,
blank lines ignored. Unknown keys, duplicates, and malformed values are
rejected with the offending key path in the message. Parsing then
serializing then parsing again yields an equal structure.

The only environment override is GROTO_SEED, which replaces the seed
list with a single seed; everything else must live in the file so that
a config fully determines a run.
"""

import os
from dataclasses import dataclass, field, replace

from .errors import ConfigError
from .model import PretrainConfig
from .pipeline import AdaptConfig
from .scenario import ScenarioConfig
from .selforg import AugConfig

BRANCH_CHOICES = ("none", "similarity_only", "probability_only")
# "none" keeps the hybrid union; the other two restrict mining.
_BRANCH_TO_MINING = {
    "none": "union",
    "similarity_only": "similarity_only",
    "probability_only": "probability_only",
}


@dataclass
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    output_dir: str = "runs/default"
    seeds: tuple = (0,)
    disable_ptd: bool = False
    disable_replay: bool = False
    disable_con: bool = False
    simple_labels: bool = False
    disable_hkpcm_branch: str = "none"

    def adapt_for_seed(self, seed):
        """AdaptConfig for one seeded run with ablation flags applied."""
        return replace(
            self.adapt,
            seed=int(seed),
            disable_ptd=self.adapt.disable_ptd or self.disable_ptd,
            disable_replay=self.adapt.disable_replay or self.disable_replay,
            disable_con=self.adapt.disable_con or self.disable_con,
            simple_labels=self.adapt.simple_labels or self.simple_labels,
            mining_branch=_BRANCH_TO_MINING[self.disable_hkpcm_branch],
        )


def _cast_int(raw):
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"expected an integer, got {raw!r}") from None


def _cast_float(raw):
    try:
        return float(raw)
    except ValueError:
        raise ValueError(f"expected a number, got {raw!r}") from None


def _cast_bool(raw):
    if raw == "true":
        return True
    if raw == "false":
        return False
    raise ValueError(f"expected true or false, got {raw!r}")


def _cast_str(raw):
    return raw


def _cast_seeds(raw):
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise ValueError("seed list must not be empty")
    return tuple(_cast_int(p) for p in parts)


def _cast_branch(raw):
    if raw not in BRANCH_CHOICES:
        raise ValueError(f"expected one of {BRANCH_CHOICES}, got {raw!r}")
    return raw


# key -> (caster, getter, setter); getters/setters close over the nested
# dataclass layout so the schema stays a flat table.
_SCHEMA = {
    "scenario.K": (_cast_int, lambda c: c.scenario.K, lambda c, v: setattr(c.scenario, "K", v)),
    "scenario.gamma": (_cast_int, lambda c: c.scenario.gamma, lambda c, v: setattr(c.scenario, "gamma", v)),
    "scenario.session_count": (_cast_int, lambda c: c.scenario.session_count, lambda c, v: setattr(c.scenario, "session_count", v)),
    "scenario.input_dim": (_cast_int, lambda c: c.scenario.input_dim, lambda c, v: setattr(c.scenario, "input_dim", v)),
    "scenario.samples_per_class": (_cast_int, lambda c: c.scenario.samples_per_class, lambda c, v: setattr(c.scenario, "samples_per_class", v)),
    "scenario.cluster_spread": (_cast_float, lambda c: c.scenario.cluster_spread, lambda c, v: setattr(c.scenario, "cluster_spread", v)),
    "scenario.domain_shift_strength": (_cast_float, lambda c: c.scenario.domain_shift_strength, lambda c, v: setattr(c.scenario, "domain_shift_strength", v)),
    "scenario.seed": (_cast_int, lambda c: c.scenario.seed, lambda c, v: setattr(c.scenario, "seed", v)),
    "pretrain.hidden_dim": (_cast_int, lambda c: c.pretrain.hidden_dim, lambda c, v: setattr(c.pretrain, "hidden_dim", v)),
    "pretrain.feat_dim": (_cast_int, lambda c: c.pretrain.feat_dim, lambda c, v: setattr(c.pretrain, "feat_dim", v)),
    "pretrain.lr": (_cast_float, lambda c: c.pretrain.lr, lambda c, v: setattr(c.pretrain, "lr", v)),
    "pretrain.momentum": (_cast_float, lambda c: c.pretrain.momentum, lambda c, v: setattr(c.pretrain, "momentum", v)),
    "pretrain.weight_decay": (_cast_float, lambda c: c.pretrain.weight_decay, lambda c, v: setattr(c.pretrain, "weight_decay", v)),
    "pretrain.batch_size": (_cast_int, lambda c: c.pretrain.batch_size, lambda c, v: setattr(c.pretrain, "batch_size", v)),
    "pretrain.max_epochs": (_cast_int, lambda c: c.pretrain.max_epochs, lambda c, v: setattr(c.pretrain, "max_epochs", v)),
    "pretrain.min_epochs": (_cast_int, lambda c: c.pretrain.min_epochs, lambda c, v: setattr(c.pretrain, "min_epochs", v)),
    "pretrain.min_source_acc": (_cast_float, lambda c: c.pretrain.min_source_acc, lambda c, v: setattr(c.pretrain, "min_source_acc", v)),
    "pretrain.seed": (_cast_int, lambda c: c.pretrain.seed, lambda c, v: setattr(c.pretrain, "seed", v)),
    "adapt.lr": (_cast_float, lambda c: c.adapt.lr, lambda c, v: setattr(c.adapt, "lr", v)),
    "adapt.momentum": (_cast_float, lambda c: c.adapt.momentum, lambda c, v: setattr(c.adapt, "momentum", v)),
    "adapt.weight_decay": (_cast_float, lambda c: c.adapt.weight_decay, lambda c, v: setattr(c.adapt, "weight_decay", v)),
    "adapt.batch_size": (_cast_int, lambda c: c.adapt.batch_size, lambda c, v: setattr(c.adapt, "batch_size", v)),
    "adapt.epochs": (_cast_int, lambda c: c.adapt.epochs, lambda c, v: setattr(c.adapt, "epochs", v)),
    "adapt.kappa": (_cast_float, lambda c: c.adapt.kappa, lambda c, v: setattr(c.adapt, "kappa", v)),
    "adapt.mu_c0": (_cast_float, lambda c: c.adapt.mu_c0, lambda c, v: setattr(c.adapt, "mu_c0", v)),
    "adapt.beta": (_cast_float, lambda c: c.adapt.beta, lambda c, v: setattr(c.adapt, "beta", v)),
    "adapt.n_r": (_cast_int, lambda c: c.adapt.n_r, lambda c, v: setattr(c.adapt, "n_r", v)),
    "adapt.memory_update_every": (_cast_int, lambda c: c.adapt.memory_update_every, lambda c, v: setattr(c.adapt, "memory_update_every", v)),
    "adapt.warm_iters": (_cast_int, lambda c: c.adapt.warm_iters, lambda c, v: setattr(c.adapt, "warm_iters", v)),
    "adapt.noise_sigma": (_cast_float, lambda c: c.adapt.aug.noise_sigma, lambda c, v: setattr(c.adapt.aug, "noise_sigma", v)),
    "adapt.mask_prob": (_cast_float, lambda c: c.adapt.aug.mask_prob, lambda c, v: setattr(c.adapt.aug, "mask_prob", v)),
    "run.output_dir": (_cast_str, lambda c: c.output_dir, lambda c, v: setattr(c, "output_dir", v)),
    "run.seeds": (_cast_seeds, lambda c: c.seeds, lambda c, v: setattr(c, "seeds", v)),
    "run.disable_ptd": (_cast_bool, lambda c: c.disable_ptd, lambda c, v: setattr(c, "disable_ptd", v)),
    "run.disable_replay": (_cast_bool, lambda c: c.disable_replay, lambda c, v: setattr(c, "disable_replay", v)),
    "run.disable_con": (_cast_bool, lambda c: c.disable_con, lambda c, v: setattr(c, "disable_con", v)),
    "run.simple_labels": (_cast_bool, lambda c: c.simple_labels, lambda c, v: setattr(c, "simple_labels", v)),
    "run.disable_hkpcm_branch": (_cast_branch, lambda c: c.disable_hkpcm_branch, lambda c, v: setattr(c, "disable_hkpcm_branch", v)),
}


def parse_config(text):
    cfg = RunConfig()
    seen = set()
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {line!r}")
        key, _, raw_value = line.partition("=")
        key = key.strip()
        raw_value = raw_value.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key '{key}' (line {line_no})")
        if key in seen:
            raise ConfigError(f"duplicate config key '{key}' (line {line_no})")
        seen.add(key)
        caster, _, setter = _SCHEMA[key]
        try:
            setter(cfg, caster(raw_value))
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    _validate(cfg)
    return cfg


def _validate(cfg):
    for section, validator in (("scenario", cfg.scenario.validate), ("adapt", cfg.adapt.validate)):
        try:
            validator()
        except ConfigError as exc:
            raise ConfigError(f"{section}: {exc}") from None
    if cfg.pretrain.max_epochs < 0:
        raise ConfigError("pretrain.max_epochs: must be non-negative")
    if not 0 <= cfg.pretrain.min_epochs <= cfg.pretrain.max_epochs:
        raise ConfigError("pretrain.min_epochs: must lie in [0, max_epochs]")
    if not 0 < cfg.pretrain.min_source_acc <= 1:
        raise ConfigError("pretrain.min_source_acc: must lie in (0, 1]")
    if cfg.pretrain.lr <= 0:
        raise ConfigError("pretrain.lr: must be positive")
    if cfg.pretrain.batch_size < 1:
        raise ConfigError("pretrain.batch_size: must be at least 1")
    if min(cfg.pretrain.hidden_dim, cfg.pretrain.feat_dim) < 1:
        raise ConfigError("pretrain: layer widths must be at least 1")


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def serialize_config(cfg):
    lines = [f"{key} = {_format_value(getter(cfg))}" for key, (_, getter, _) in sorted(_SCHEMA.items())]
    return "\n".join(lines) + "\n"


def load_run_config(path=None, env=None):
    """Config from file (or all defaults), then the GROTO_SEED override."""
    env = os.environ if env is None else env
    if path is None:
        cfg = RunConfig()
        _validate(cfg)
    else:
        try:
            with open(path, "r") as fh:
                text = fh.read()
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        cfg = parse_config(text)
    if "GROTO_SEED" in env:
        try:
            cfg.seeds = (int(env["GROTO_SEED"]),)
        except ValueError:
            raise ConfigError(f"GROTO_SEED must be an integer, got {env['GROTO_SEED']!r}") from None
    return cfg
