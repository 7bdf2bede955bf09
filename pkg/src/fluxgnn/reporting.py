"""Delimited outputs and companion figures for training and evaluation runs.

Every report path emits machine-readable CSV first; the matching matplotlib
figure is rendered next to it as a PNG.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def write_history_csv(path, history) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(history[0].FIELDS if history else
                        ("epoch", "train_loss", "val_rmse", "val_pcc", "lr", "wall_time"))
        for rec in history:
            writer.writerow([getattr(rec, f) for f in rec.FIELDS])
    return path


def write_eval_csv(out_dir, result) -> tuple[Path, Path]:
    """Aggregate metrics.csv plus a per-step curve CSV with ``horizon`` rows."""
    out_dir = Path(out_dir)
    metrics_path = out_dir / "metrics.csv"
    with open(metrics_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("metric", "value"))
        for key in ("rmse", "pcc", "horizon", "n_windows"):
            writer.writerow((key, result[key]))
    steps_path = out_dir / "pcc_steps.csv"
    with open(steps_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("step", "rmse", "pcc"))
        for t in range(result["horizon"]):
            writer.writerow((t + 1, result["per_step_rmse"][t], result["per_step_pcc"][t]))
    return metrics_path, steps_path


def write_json(path, payload) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str))
    return path


def render_training_curves(history, path) -> Path:
    path = Path(path)
    epochs = [r.epoch for r in history]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.2))
    axes[0].plot(epochs, [r.train_loss for r in history], lw=1.2)
    axes[0].set_yscale("log")
    axes[0].set_xlabel("epoch")
    axes[0].set_title("training loss")
    axes[1].plot(epochs, [r.val_rmse for r in history], lw=1.2, color="tab:orange")
    axes[1].set_yscale("log")
    axes[1].set_xlabel("epoch")
    axes[1].set_title("validation rollout RMSE")
    axes[2].plot(epochs, [r.lr for r in history], lw=1.2, color="tab:green")
    axes[2].set_yscale("log")
    axes[2].set_xlabel("epoch")
    axes[2].set_title("learning rate")
    for ax in axes:
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_eval_curves(result, path, baseline=None) -> Path:
    path = Path(path)
    steps = list(range(1, result["horizon"] + 1))
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    axes[0].plot(steps, result["per_step_rmse"], marker="o", ms=3, label="model")
    if baseline is not None:
        axes[0].plot(steps, baseline["per_step_rmse"], marker="s", ms=3,
                     ls="--", label="persistence")
        axes[0].legend()
    axes[0].set_xlabel("rollout step")
    axes[0].set_title("RMSE per step")
    axes[1].plot(steps, result["per_step_pcc"], marker="o", ms=3, color="tab:red")
    axes[1].set_ylim(None, 1.01)
    axes[1].set_xlabel("rollout step")
    axes[1].set_title("correlation per step")
    for ax in axes:
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
