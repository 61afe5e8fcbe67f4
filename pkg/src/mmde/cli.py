"""Batch command-line frontend.

Subcommands: `train`, `evaluate`, `bench-info`, `ablate`. Every run writes
into its own directory (never reused) containing a manifest that pins the
resolved configuration, seeds and inputs, so any reported number can be
reproduced from the manifest alone.

Exit codes: 0 success, 2 bad arguments/configuration/missing files,
3 numeric failure during training.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import subprocess
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, policy, trainer
from .benchmark import (
    BenchmarkError,
    TEST_IDS,
    TRAIN_IDS,
    make_problem,
)
from .config import Config, ConfigError, load_config, parse_problem_list
from .metrics import ACCURACY_LEVELS

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3

_ABLATE_VARIANTS = {
    "state:fg": {"state_ablation": "fg"},
    "state:fn": {"state_ablation": "fn"},
    "state:null": {"state_ablation": "null"},
    "action:An": {"action_set": "An"},
    "action:Ag": {"action_set": "Ag"},
    "action:null": {"action_set": "null"},
    "reward:b": {"reward": "b"},
    "reward:c": {"reward": "c"},
}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _git_revision() -> str | None:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True,
                             text=True, timeout=5)
        return out.stdout.strip() if out.returncode == 0 else None
    except OSError:
        return None


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _prepare_out_dir(out: str | None, command: str, allow_existing: bool) -> Path:
    if out is not None:
        path = Path(out)
        if path.exists() and (path / "manifest.json").exists() and not allow_existing:
            raise CliError(f"output directory {path} already holds a run; "
                           "pick a fresh one (runs are never overwritten)")
        path.mkdir(parents=True, exist_ok=True)
        return path
    base = Path("runs")
    base.mkdir(exist_ok=True)
    n = 0
    while True:
        path = base / f"{command}-{n:03d}"
        if not path.exists():
            path.mkdir()
            return path
        n += 1


def _point_latest(path: Path) -> None:
    (path.parent / "latest").write_text(str(path.name) + "\n")


def _write_manifest(out_dir: Path, command: str, config: Config, extra: dict) -> None:
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "version": __version__,
        "timestamp_utc": datetime.now(timezone.utc).isoformat(),
        "git_revision": _git_revision(),
        "config": config.to_dict(),
    }
    manifest.update(extra)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _resolve_config(args) -> Config:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value
    config = load_config(args.config, overrides)
    # dedicated flags win over --set and the config file
    for flag in ("seed", "epochs", "jobs"):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(config, flag, value)
    config.validate()
    return config


def _print_config(config: Config, quiet: bool) -> None:
    if quiet:
        return
    print("resolved configuration:")
    for key, value in config.to_dict().items():
        print(f"  {key} = {value}")


def _data_dir(args) -> Path | None:
    raw = args.data_dir or os.environ.get("MMDE_DATA_DIR")
    if raw is None:
        return None
    path = Path(raw)
    if not path.is_dir():
        raise CliError(f"data directory {path} does not exist")
    return path


def _parse_accuracies(text: str) -> list[float]:
    try:
        accs = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise CliError(f"bad accuracy list {text!r}")
    if not accs or any(a <= 0 for a in accs):
        raise CliError(f"accuracies must be positive, got {text!r}")
    return accs


def _write_report(out_dir: Path, report: dict) -> None:
    with open(out_dir / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["problem", "accuracy", "pr", "sr", "nr"])
        for row in report["rows"]:
            writer.writerow([row["problem"], repr(row["accuracy"]),
                             repr(row["pr"]), repr(row["sr"]), row["nr"]])
    (out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n")


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    config = _resolve_config(args)
    _print_config(config, args.quiet)
    train_ids = (parse_problem_list(args.problems) if args.problems
                 else list(TRAIN_IDS))
    for pid in train_ids:
        make_problem(pid)  # validates ids before any work
    data_dir = _data_dir(args)
    out_dir = _prepare_out_dir(args.out, "train", allow_existing=args.resume)
    _write_manifest(out_dir, "train", config, {
        "problems": train_ids,
        "data_dir": str(data_dir) if data_dir else None,
    })
    log = None if args.quiet else print
    ckpt = trainer.train(config, train_ids, out_dir, data_source=data_dir,
                         resume=args.resume, log=log)
    _write_manifest(out_dir, "train", config, {
        "problems": train_ids,
        "data_dir": str(data_dir) if data_dir else None,
        "checkpoint": {"path": str(ckpt), "sha256": _sha256(ckpt)},
    })
    _point_latest(out_dir)
    if not args.quiet:
        print(f"final checkpoint: {ckpt}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = _resolve_config(args)
    _print_config(config, args.quiet)
    problem_ids = (parse_problem_list(args.problems) if args.problems
                   else list(TEST_IDS))
    accuracies = (_parse_accuracies(args.accuracy) if args.accuracy
                  else list(ACCURACY_LEVELS))
    data_dir = _data_dir(args)

    params = None
    checkpoint_info = None
    if args.policy == "network":
        if not args.checkpoint:
            raise CliError("evaluate needs --checkpoint (or --policy random / fixed:A<n>)")
        ckpt_path = Path(args.checkpoint)
        if not ckpt_path.exists():
            raise CliError(f"checkpoint {ckpt_path} not found")
        params = policy.load_params(ckpt_path)
        checkpoint_info = {"path": str(ckpt_path), "sha256": _sha256(ckpt_path)}

    out_dir = _prepare_out_dir(args.out, "evaluate", allow_existing=False)
    _write_manifest(out_dir, "evaluate", config, {
        "problems": problem_ids,
        "runs": args.runs,
        "accuracies": accuracies,
        "policy": args.policy,
        "checkpoint": checkpoint_info,
        "data_dir": str(data_dir) if data_dir else None,
    })

    if args.dump_trajectories or args.dump_features:
        report = _evaluate_with_dumps(args, config, problem_ids, accuracies,
                                      params, data_dir, out_dir)
    else:
        report = trainer.evaluate_policy(
            args.policy, problem_ids, args.runs, accuracies, config,
            params=params, data_source=data_dir, seed=config.seed)
    _write_report(out_dir, report)
    _point_latest(out_dir)
    if not args.quiet:
        for row in report["rows"]:
            print(f"{row['problem']} @ {row['accuracy']:g}: "
                  f"PR={row['pr']:.4f} SR={row['sr']:.4f} (NR={row['nr']})")
        print(f"report written to {out_dir}")
    return EXIT_OK


def _evaluate_with_dumps(args, config, problem_ids, accuracies, params,
                         data_dir, out_dir) -> dict:
    """Evaluation path with per-run trajectory / feature dumps enabled."""
    from .metrics import RunResult, count_peaks, peak_ratio, score_archive, success_rate

    rows, runs_detail = [], []
    for pid in problem_ids:
        problem = make_problem(pid, data_dir)
        results = []
        for run in range(args.runs):
            run_seed = trainer.derive_int_seed(config.seed, problem.id, run)
            strategy_policy = trainer.make_strategy_policy(args.policy, config, params)
            dump_path = None
            if args.dump_trajectories:
                (out_dir / "trajectories").mkdir(exist_ok=True)
                dump_path = out_dir / "trajectories" / f"F{pid}_run{run}.jsonl"
            writer = None
            feature_fh = None
            if args.dump_features:
                (out_dir / "features").mkdir(exist_ok=True)
                feature_fh = open(out_dir / "features" / f"F{pid}_run{run}.csv",
                                  "w", newline="")
                feature_csv = csv.writer(feature_fh)
                feature_csv.writerow(["generation", "individual"]
                                     + [f"f{j}" for j in range(1, 23)])

                def writer(t, state, _csv=feature_csv):
                    for i in range(len(state.f_pop)):
                        _csv.writerow([t, i] + [repr(float(v)) for v in state.f_pop[i]]
                                      + [repr(float(v)) for v in state.f_ind[i]])
            try:
                episode = trainer.run_episode(
                    problem, strategy_policy, config, run_seed,
                    record=False, track_archive=True,
                    dump_path=dump_path, feature_writer=writer)
            finally:
                if feature_fh is not None:
                    feature_fh.close()
            if config.count_from == "final_pop":
                npf = {acc: count_peaks(episode.final_positions,
                                        episode.final_objectives, problem, acc)
                       for acc in accuracies}
            else:
                npf = {acc: score_archive(episode.archive, accuracies)[acc]
                       for acc in accuracies}
            results.append(RunResult(problem_id=pid, seed=run_seed, npf=npf,
                                     evaluations=episode.evals_used))
        for acc in accuracies:
            rows.append({"problem": f"F{pid}", "accuracy": acc,
                         "pr": peak_ratio(results, problem, acc),
                         "sr": success_rate(results, problem, acc),
                         "nr": args.runs})
        runs_detail.extend(
            {"problem": f"F{pid}", "seed": r.seed, "evaluations": r.evaluations,
             "npf": {repr(float(a)): n for a, n in r.npf.items()}} for r in results)
    return {"rows": rows, "runs": runs_detail}


def cmd_bench_info(args) -> int:
    problem_ids = parse_problem_list(args.problems)
    data_dir = _data_dir(args)
    for pid in problem_ids:
        problem = make_problem(pid, data_dir)
        print(json.dumps(problem.metadata()))
    return EXIT_OK


def cmd_ablate(args) -> int:
    if args.variant not in _ABLATE_VARIANTS:
        raise CliError(f"unknown ablation variant {args.variant!r}; expected one of "
                       f"{sorted(_ABLATE_VARIANTS)}")
    config = _resolve_config(args)
    for key, value in _ABLATE_VARIANTS[args.variant].items():
        setattr(config, key, value)
    config.validate()
    _print_config(config, args.quiet)

    train_ids = (parse_problem_list(args.problems) if args.problems
                 else list(TRAIN_IDS))
    eval_ids = (parse_problem_list(args.eval_problems) if args.eval_problems
                else list(TEST_IDS))
    accuracies = (_parse_accuracies(args.accuracy) if args.accuracy
                  else [1e-4])
    data_dir = _data_dir(args)
    tag = args.variant.replace(":", "-")
    out_dir = _prepare_out_dir(args.out, f"ablate-{tag}", allow_existing=False)
    _write_manifest(out_dir, "ablate", config, {
        "variant": args.variant,
        "problems": train_ids,
        "eval_problems": eval_ids,
        "runs": args.runs,
        "data_dir": str(data_dir) if data_dir else None,
    })
    log = None if args.quiet else print
    ckpt = trainer.train(config, train_ids, out_dir, data_source=data_dir, log=log)
    params = policy.load_params(ckpt)
    report = trainer.evaluate_policy(
        "network", eval_ids, args.runs, accuracies, config,
        params=params, data_source=data_dir, seed=config.seed)
    report["variant"] = args.variant
    _write_report(out_dir, report)
    _point_latest(out_dir)
    if not args.quiet:
        print(f"ablation {args.variant} written to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing.
# ---------------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="key = value configuration file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--jobs", type=int, default=None,
                        help="parallel rollout workers")
    parser.add_argument("--data-dir", default=None,
                        help="composition data files (default: $MMDE_DATA_DIR)")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmde",
        description="Multimodal differential evolution with learned strategy selection.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_train = sub.add_parser("train", help="train the strategy policy")
    _add_common(p_train)
    p_train.add_argument("--problems", default=None,
                         help="training problems (default: the 12-problem train split)")
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.add_argument("--resume", action="store_true",
                         help="continue from the latest checkpoint in --out")
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("evaluate", help="score a policy with PR/SR")
    _add_common(p_eval)
    p_eval.add_argument("--checkpoint", default=None)
    p_eval.add_argument("--policy", default="network",
                        help="network (default), random, or fixed:A<n>")
    p_eval.add_argument("--problems", default=None,
                        help="problems to score (default: the 8-problem test split)")
    p_eval.add_argument("--runs", type=int, default=50)
    p_eval.add_argument("--accuracy", default=None,
                        help="comma-separated accuracy levels (default: 1e-1..1e-5)")
    p_eval.add_argument("--dump-trajectories", action="store_true",
                        help="write per-generation JSONL per run")
    p_eval.add_argument("--dump-features", action="store_true",
                        help="write the per-generation feature matrix CSV per run")
    p_eval.set_defaults(fn=cmd_evaluate)

    p_info = sub.add_parser("bench-info", help="print problem metadata as JSON")
    p_info.add_argument("problems", help="problem ids, e.g. F6 or 6,7 or all")
    p_info.add_argument("--data-dir", default=None)
    p_info.set_defaults(fn=cmd_bench_info)

    p_abl = sub.add_parser("ablate", help="train and evaluate one ablation variant")
    p_abl.add_argument("variant", help="|".join(sorted(_ABLATE_VARIANTS)))
    _add_common(p_abl)
    p_abl.add_argument("--problems", default=None)
    p_abl.add_argument("--eval-problems", default=None)
    p_abl.add_argument("--epochs", type=int, default=None)
    p_abl.add_argument("--runs", type=int, default=10)
    p_abl.add_argument("--accuracy", default=None)
    p_abl.set_defaults(fn=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (CliError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, BenchmarkError, policy.CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except trainer.NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
