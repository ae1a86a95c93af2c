"""Command-line surface: gen, pretrain, adapt, report.

Every command is a pure function of (config, seed, input files), so
rerunning one reproduces its outputs byte for byte. Exit codes: 0 ok,
2 config error, 3 data/format error, 4 training failure.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import BRANCH_CHOICES, load_run_config
from .errors import ConfigError, DataFormatError, GrotoError, PretrainError, TrainingError
from .model import SourceSnapshot, accuracy, load_model, pretrain_source, save_model
from .pipeline import run_adaptation, write_metrics_csv, write_summary_json
from .replay import save_bank
from .scenario import (
    Scenario,
    SessionDataset,
    generate_scenario,
    load_feature_file,
    save_feature_file,
)

_SCENARIO_DIR = "scenario"
_MANIFEST = "manifest.json"
_SOURCE_CKPT = "source.grmd"


def _out_dir(cfg, override):
    return Path(override if override is not None else cfg.output_dir)


def cmd_gen(cfg, out_dir):
    """Write GRFT feature files plus a manifest describing the split."""
    scenario = generate_scenario(cfg.scenario)
    scen_dir = out_dir / _SCENARIO_DIR
    scen_dir.mkdir(parents=True, exist_ok=True)
    save_feature_file(scen_dir / "source_train.grft", scenario.source_train)
    save_feature_file(scen_dir / "source_test.grft", scenario.source_test)
    sessions = []
    for session, test in zip(scenario.target_sessions, scenario.target_test_per_session):
        train_name = f"session_{session.session_index:02d}.grft"
        test_name = f"session_{session.session_index:02d}_test.grft"
        save_feature_file(scen_dir / train_name, session.inputs)
        save_feature_file(scen_dir / test_name, test)
        sessions.append(
            {
                "index": session.session_index,
                "classes": sorted(session.class_subset),
                "train": train_name,
                "test": test_name,
            }
        )
    manifest = {
        "K": scenario.K,
        "input_dim": scenario.input_dim,
        "gamma": cfg.scenario.gamma,
        "seed": scenario.seed,
        "source_train": "source_train.grft",
        "source_test": "source_test.grft",
        "sessions": sessions,
    }
    with open(scen_dir / _MANIFEST, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"scenario: K={scenario.K} sessions={len(sessions)} dir={scen_dir}")
    return 0


def _load_scenario(out_dir):
    scen_dir = Path(out_dir) / _SCENARIO_DIR
    manifest_path = scen_dir / _MANIFEST
    if not manifest_path.exists():
        raise DataFormatError(f"missing scenario manifest {manifest_path}; run 'gen' first")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    sessions, tests = [], []
    for entry in manifest["sessions"]:
        inputs = load_feature_file(scen_dir / entry["train"])
        sessions.append(
            SessionDataset(
                session_index=entry["index"],
                inputs=inputs,
                class_subset=frozenset(entry["classes"]),
            )
        )
        tests.append(load_feature_file(scen_dir / entry["test"]))
    return Scenario(
        K=manifest["K"],
        input_dim=manifest["input_dim"],
        source_train=load_feature_file(scen_dir / manifest["source_train"]),
        source_test=load_feature_file(scen_dir / manifest["source_test"]),
        target_sessions=sessions,
        target_test_per_session=tests,
        seed=manifest["seed"],
    )


def cmd_pretrain(cfg, out_dir):
    scenario = _load_scenario(out_dir)
    snapshot = pretrain_source(scenario, cfg.pretrain)
    save_model(out_dir / _SOURCE_CKPT, snapshot.params, snapshot.centroids)
    acc = accuracy(snapshot.params, scenario.source_test)
    print(f"source test accuracy: {acc:.4f}")
    print(f"checkpoint: {out_dir / _SOURCE_CKPT}")
    return 0


def _load_snapshot(out_dir):
    ckpt = Path(out_dir) / _SOURCE_CKPT
    if not ckpt.exists():
        raise DataFormatError(f"missing source checkpoint {ckpt}; run 'pretrain' first")
    params, centroids = load_model(ckpt)
    if centroids is None:
        raise DataFormatError(f"{ckpt} stores no centroids; not a source snapshot")
    return SourceSnapshot(params=params, centroids=centroids)


def cmd_adapt(cfg, out_dir, seeds):
    scenario = _load_scenario(out_dir)
    snapshot = _load_snapshot(out_dir)
    for seed in seeds:
        acfg = cfg.adapt_for_seed(seed)
        params, bank, logs, summary = run_adaptation(scenario, snapshot, acfg)
        write_metrics_csv(out_dir / f"metrics_seed{seed}.csv", logs)
        write_summary_json(out_dir / f"summary_seed{seed}.json", summary)
        save_model(out_dir / f"model_seed{seed}.grmd", params)
        save_bank(out_dir / f"bank_seed{seed}.grmb", bank, scenario.input_dim, scenario.K)
        for log in logs:
            print(
                f"seed {seed} session {log.session_index}: "
                f"acc={log.session_accuracy:.4f} pcd={log.pcd:.3f} tcd={log.tcd:.3f} "
                f"mined={log.mined_classes}"
            )
        print(f"seed {seed} final accuracy: {summary['final_accuracy']:.4f}")
    return 0


def _collect_summaries(run_dir):
    return sorted(Path(run_dir).glob("summary_seed*.json"))


def cmd_report(run_dirs, out_csv=None):
    rows = []
    incomplete = []
    for run_dir in run_dirs:
        paths = _collect_summaries(run_dir)
        if not paths:
            incomplete.append(str(run_dir))
            continue
        summaries = []
        for p in paths:
            with open(p) as fh:
                summaries.append(json.load(fh))
        if any("final_accuracy" not in s for s in summaries):
            incomplete.append(str(run_dir))
            continue
        metrics = {"final_accuracy": [s["final_accuracy"] for s in summaries]}
        metrics["forgetting_session1"] = [s["forgetting_session1"] for s in summaries]
        session_count = len(summaries[0]["session_accuracies"])
        for t in range(session_count):
            metrics[f"session{t + 1}_accuracy"] = [s["session_accuracies"][t] for s in summaries]
            metrics[f"session{t + 1}_pcd"] = [s["mining"][t]["pcd"] for s in summaries]
            metrics[f"session{t + 1}_tcd"] = [s["mining"][t]["tcd"] for s in summaries]
        for name in sorted(metrics):
            values = np.asarray(metrics[name], dtype=np.float64)
            rows.append((str(run_dir), name, float(values.mean()), float(values.std())))
    width = max((len(r[0]) for r in rows), default=10)
    print(f"{'run':<{width}}  {'metric':<22}  {'mean':>8}  {'std':>8}")
    for run_dir, name, mean, std in rows:
        print(f"{run_dir:<{width}}  {name:<22}  {mean:8.4f}  {std:8.4f}")
    if out_csv is not None:
        with open(out_csv, "w") as fh:
            fh.write("run,metric,mean,std\n")
            for run_dir, name, mean, std in rows:
                fh.write(f"{run_dir},{name},{repr(mean)},{repr(std)}\n")
    if incomplete:
        print("incomplete runs (no usable summaries): " + ", ".join(incomplete), file=sys.stderr)
        return 1
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(prog="groto", description=__doc__)
    parser.add_argument("--version", action="version", version=f"groto {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("gen", "generate a synthetic scenario and write its feature files"),
        ("pretrain", "train and freeze the source model"),
        ("adapt", "run class-incremental adaptation over all sessions"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="dotted-key config file (defaults if omitted)")
        p.add_argument("--out", default=None, help="run directory (overrides run.output_dir)")
        if name == "adapt":
            p.add_argument("--seeds", default=None, help="comma-separated seed list override")
            p.add_argument("--disable-ptd", action="store_true")
            p.add_argument("--disable-replay", action="store_true")
            p.add_argument("--disable-con", action="store_true")
            p.add_argument("--simple-labels", action="store_true")
            p.add_argument("--disable-hkpcm-branch", choices=BRANCH_CHOICES, default=None)

    p = sub.add_parser("report", help="aggregate summaries across seeds and runs")
    p.add_argument("run_dirs", nargs="+", help="run directories containing summary files")
    p.add_argument("--out", default=None, help="also write the aggregate table as CSV")
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.run_dirs, args.out)
        cfg = load_run_config(args.config)
        out_dir = _out_dir(cfg, args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "gen":
            return cmd_gen(cfg, out_dir)
        if args.command == "pretrain":
            return cmd_pretrain(cfg, out_dir)
        if args.command == "adapt":
            if args.disable_ptd:
                cfg.disable_ptd = True
            if args.disable_replay:
                cfg.disable_replay = True
            if args.disable_con:
                cfg.disable_con = True
            if args.simple_labels:
                cfg.simple_labels = True
            if args.disable_hkpcm_branch is not None:
                cfg.disable_hkpcm_branch = args.disable_hkpcm_branch
            seeds = cfg.seeds
            if args.seeds is not None:
                try:
                    seeds = tuple(int(s) for s in args.seeds.split(",") if s.strip())
                except ValueError:
                    raise ConfigError(f"--seeds must be comma-separated integers, got {args.seeds!r}")
                if not seeds:
                    raise ConfigError("--seeds must name at least one seed")
            return cmd_adapt(cfg, out_dir, seeds)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (TrainingError, PretrainError) as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return 4
    except GrotoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
