"""Command-line entry point: datagen, train, eval, verify.

Every subcommand accepts a declarative JSON config (``--config``) whose keys
mirror the dataclass fields of the corresponding module; explicit flags win
over config values.  The fully resolved configuration is written next to the
outputs as ``config.resolved.json`` so any run can be replayed exactly.

Exit codes: 0 success, 2 validation error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
from dataclasses import asdict
from pathlib import Path

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ValueError(f"config file {p} does not exist")
    return json.loads(p.read_text())


def _merge(section: dict, overrides: dict) -> dict:
    out = dict(section)
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


def _parse_ints(text: str) -> list:
    return [int(x) for x in text.replace("x", ",").split(",") if x != ""]


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_datagen(args) -> int:
    from .datagen import DatagenConfig, generate, preset_config
    from .reporting import write_json

    file_cfg = _load_config_file(args.config).get("datagen", {})
    overrides = _merge(file_cfg, {
        "trajectories": args.trajectories,
        "steps": args.steps,
        "save_every": args.save_every,
        "seed": args.seed,
        "grid": _parse_ints(args.grid) if args.grid else None,
        "split": _parse_ints(args.split) if args.split else None,
        "spacing": args.spacing,
        "solver_dt": args.solver_dt,
        "rt": args.rt,
    })
    if args.preset:
        cfg = preset_config(args.system, args.preset, **overrides)
    else:
        cfg = DatagenConfig(system=args.system, **overrides)
    out = _out_dir(args)
    generate(cfg, out)
    write_json(out / "config.resolved.json", {"datagen": asdict(cfg)})
    print(f"dataset written to {out}")
    return EXIT_OK


def _resolve_train_configs(args):
    from .model import ModelConfig
    from .training import GraphPrep, TrainConfig

    file_cfg = _load_config_file(args.config)
    variant = args.variant
    if args.no_flux:
        variant = "minus"  # removing the symmetric flux update is the minus variant
    model_over = _merge(file_cfg.get("model", {}), {
        "variant": variant,
        "latent_width": args.latent_width,
        "layers": args.layers,
        "time_block": False if args.no_time_block else None,
    })
    train_over = _merge(file_cfg.get("train", {}), {
        "epochs": args.epochs,
        "learning_rate": args.lr,
        "rollout_steps": args.rollout_steps,
        "noise_sigma_rel": args.noise,
        "one_step_only": True if args.one_step else None,
        "windows_per_trajectory": args.windows,
        "seed": args.seed,
        "threads": args.threads,
        "early_stop_patience": args.patience,
    })
    prep_over = _merge(file_cfg.get("prep", {}), {
        "multimesh": False if args.no_multimesh else None,
    })
    return ModelConfig(**model_over), TrainConfig(**train_over), GraphPrep(**prep_over)


def cmd_train(args) -> int:
    import numpy as np

    from .datasets import read_dataset
    from .reporting import render_training_curves, write_history_csv, write_json
    from .training import TrainConfig, train

    dataset = read_dataset(args.dataset)
    model_cfg, train_cfg, prep = _resolve_train_configs(args)
    if dataset.manifest.system == "grayscott3d":
        model_cfg.space_dim = 3
    out = _out_dir(args)
    seeds = [train_cfg.seed + i for i in range(args.runs)]
    write_json(out / "config.resolved.json", {
        "dataset": str(dataset.root), "model": asdict(model_cfg),
        "train": asdict(train_cfg), "prep": asdict(prep), "runs": args.runs,
    })

    results = []
    for run_idx, seed in enumerate(seeds):
        run_dir = out if len(seeds) == 1 else out / f"run_{run_idx}"
        run_dir.mkdir(parents=True, exist_ok=True)
        cfg = TrainConfig(**{**asdict(train_cfg), "seed": seed})
        result = train(dataset, model_cfg, cfg, prep, out_dir=run_dir)
        write_history_csv(run_dir / "metrics.csv", result["history"])
        if not args.no_figures and result["history"]:
            (run_dir / "figures").mkdir(exist_ok=True)
            render_training_curves(result["history"], run_dir / "figures" / "training.png")
        results.append((seed, result))
        print(f"seed {seed}: best validation RMSE {result['best_val_rmse']:.6e}")

    vals = [r["best_val_rmse"] for _, r in results]
    median_val = statistics.median(vals)
    chosen = min(results, key=lambda sr: abs(sr[1]["best_val_rmse"] - median_val))
    summary = {
        "runs": [{"seed": s, "best_val_rmse": r["best_val_rmse"],
                  "best_checkpoint": r["best_checkpoint"]} for s, r in results],
        "median_val_rmse": median_val,
        "selected_seed": chosen[0],
        "selected_checkpoint": chosen[1]["best_checkpoint"],
    }
    write_json(out / "report.json", summary)
    print(f"selected checkpoint: {summary['selected_checkpoint']}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .datasets import read_dataset
    from .reporting import render_eval_curves, write_eval_csv, write_json
    from .training import evaluate_checkpoint, persistence_baseline

    dataset = read_dataset(args.dataset)
    starts = tuple(_parse_ints(args.starts)) if args.starts else (0,)
    out = _out_dir(args)
    result = evaluate_checkpoint(args.checkpoint, dataset, args.horizon,
                                 starts, split=args.split)
    baseline = persistence_baseline(dataset, args.split, args.horizon, starts)
    write_eval_csv(out, result)
    write_json(out / "report.json", {
        "model": {k: result[k] for k in ("rmse", "pcc", "horizon", "n_windows")},
        "persistence": {k: baseline[k] for k in ("rmse", "pcc")},
        "checkpoint": str(args.checkpoint),
        "split": args.split,
        "starts": list(starts),
    })
    write_json(out / "config.resolved.json", {
        "checkpoint": str(args.checkpoint), "dataset": str(dataset.root),
        "horizon": args.horizon, "starts": list(starts), "split": args.split,
    })
    if not args.no_figures:
        (out / "figures").mkdir(exist_ok=True)
        render_eval_curves(result, out / "figures" / "eval.png", baseline)
    print(f"rollout RMSE {result['rmse']:.6e} (persistence {baseline['rmse']:.6e})")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .reporting import write_json
    from .verify import run_all

    results = run_all(fast=args.fast)
    for res in results:
        print(f"{'PASS' if res.passed else 'FAIL'}  {res.name:<14} {res.detail}")
    if args.out:
        out = _out_dir(args)
        write_json(out / "report.json", [asdict_check(r) for r in results])
    return EXIT_OK if all(r.passed for r in results) else EXIT_VALIDATION


def asdict_check(res) -> dict:
    return {"name": res.name, "passed": res.passed, "detail": res.detail,
            "value": res.value}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fluxgnn",
        description="Conservative flux-split graph simulator: data generation, "
                    "training, evaluation, verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a synthetic trajectory dataset")
    p.add_argument("--system", choices=("burgers2d", "grayscott3d"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=("desk", "paper"))
    p.add_argument("--trajectories", type=int)
    p.add_argument("--steps", type=int, help="solver steps per trajectory")
    p.add_argument("--save-every", dest="save_every", type=int)
    p.add_argument("--grid", help="node counts, e.g. 32x32 or 16x16x16")
    p.add_argument("--split", help="train,validation,test trajectory counts")
    p.add_argument("--spacing", type=float)
    p.add_argument("--solver-dt", dest="solver_dt", type=float)
    p.add_argument("--rt", type=float, help="initial-condition noise ratio (grayscott3d)")
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=("full", "minus", "star"))
    p.add_argument("--no-time-block", action="store_true")
    p.add_argument("--no-multimesh", action="store_true")
    p.add_argument("--no-flux", action="store_true",
                   help="drop the symmetric flux update (equals --variant minus)")
    p.add_argument("--one-step", action="store_true",
                   help="single-step training protocol")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", type=int, default=1,
                   help="train this many seeds and select the median by validation")
    p.add_argument("--latent-width", dest="latent_width", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--rollout-steps", dest="rollout_steps", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--windows", type=int, help="windows per trajectory per epoch")
    p.add_argument("--patience", type=int, help="early-stop patience")
    p.add_argument("--threads", type=int)
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rollout metrics for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--horizon", type=int, default=10)
    p.add_argument("--starts", help="comma-separated start frames (default 0)")
    p.add_argument("--split", default="test", choices=("train", "validation", "test"))
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the invariant suite")
    p.add_argument("--out")
    p.add_argument("--fast", action="store_true", help="reduced case counts")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    from .datasets import DatasetError
    from .meshes import GraphFileError
    from .model import CheckpointError
    from .solvers import SolverBlowupError
    from .training import TrainingAbort

    try:
        return args.func(args)
    except (ValueError, TypeError, FileNotFoundError, DatasetError,
            GraphFileError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TrainingAbort, SolverBlowupError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
