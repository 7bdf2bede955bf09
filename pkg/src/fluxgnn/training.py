"""Optimization and evaluation of the graph simulator.

The training objective is the mean squared error of an autoregressive
rollout over a short window, computed in normalized space over the real
(non-ghost) nodes.  Boundary conditions are hard-encoded between rollout
steps: ghost nodes copy their source node's prediction, Dirichlet nodes copy
the ground truth.  Evaluation metrics are reported in raw physical units.

The loop is bitwise reproducible for a fixed seed and thread count: all
random draws come from one seeded generator in a fixed order, and edge
aggregation uses a fixed reduction order.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .datasets import Dataset, NoiseSpec, add_training_noise
from .meshes import MeshGraph, NODE_PERIODIC, add_periodic_ghosts, build_multimesh
from .metrics import pcc, persistence_forecast, rmse
from .model import (GraphSimulator, GraphTensors, ModelConfig, build_model,
                    graph_tensors, load_checkpoint, save_checkpoint)

ALPHA_CONSISTENCY_TOL = 1e-5  # float32 roundoff margin for sum(alpha_norm) == 1


class TrainingAbort(RuntimeError):
    """Non-finite loss; the last good checkpoint (if any) names the survivor."""

    def __init__(self, message: str, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


@dataclass
class TrainConfig:
    epochs: int = 1000
    early_stop_patience: int = 100
    learning_rate: float = 1e-3
    plateau_factor: float = 0.8
    plateau_patience: int = 10
    rollout_steps: int = 4            # window length during training
    noise_sigma_rel: float = 0.02
    one_step_only: bool = False       # train on single-step windows
    windows_per_trajectory: int = 4   # optimization steps per trajectory per epoch
    val_rollout_steps: int = 10
    val_every: int = 1
    seed: int = 0
    threads: int = 2                  # fixed for reproducibility, not auto-detected

    def __post_init__(self):
        if self.rollout_steps < 1:
            raise ValueError("rollout_steps must be >= 1")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ValueError("plateau_factor must lie in (0, 1)")


@dataclass
class GraphPrep:
    """Once-per-run graph preprocessing applied before training."""

    multimesh: bool = True
    refine_ratio: float = 0.1
    min_nodes: int = 10
    k_neighbors: int | None = None
    seed: int = 0


@dataclass
class MetricsRecord:
    epoch: int
    train_loss: float
    val_rmse: float
    val_pcc: float
    lr: float
    wall_time: float

    FIELDS = ("epoch", "train_loss", "val_rmse", "val_pcc", "lr", "wall_time")


def prepare_graph(graph: MeshGraph, prep: GraphPrep) -> MeshGraph:
    """Apply multi-level coarsening and the periodic ghost halo, in that order."""
    if prep.multimesh:
        graph = build_multimesh(graph, prep.refine_ratio, prep.min_nodes,
                                prep.k_neighbors, prep.seed)
    if (graph.node_type == NODE_PERIODIC).any():
        graph = add_periodic_ghosts(graph)
    return graph


def normalize(state, mean, std):
    return (state - mean) / std


def denormalize(state, mean, std):
    return state * std + mean


def expand_with_ghosts(gt: GraphTensors, state: torch.Tensor) -> torch.Tensor:
    """Grow a real-node state (n_real, d) to model size by copying ghost sources."""
    if gt.n_nodes == gt.n_real:
        return state
    return torch.cat([state, state[gt.ghost_src]], dim=0)


def apply_bc_padding(gt: GraphTensors, state: torch.Tensor, mode: str,
                     truth: torch.Tensor | None = None) -> torch.Tensor:
    """Hard boundary encoding applied between rollout steps.

    periodic:  every ghost node's value is overwritten by its source node's
               current (predicted) value.
    dirichlet: every Dirichlet-boundary node is overwritten by the ground
               truth of the current target frame (required argument).

    Idempotent; interior nodes are untouched.
    """
    if mode == "periodic":
        if gt.ghost_idx.numel() == 0:
            return state
        return state.index_copy(0, gt.ghost_idx, state[gt.ghost_src])
    if mode == "dirichlet":
        if truth is None:
            raise ValueError("dirichlet padding requires a ground-truth frame")
        if gt.dirichlet_idx.numel() == 0:
            return state
        return state.index_copy(0, gt.dirichlet_idx, truth[gt.dirichlet_idx])
    raise ValueError(f"unknown boundary mode {mode!r}")


def _pad_all(gt: GraphTensors, state: torch.Tensor,
             truth: torch.Tensor | None = None) -> torch.Tensor:
    state = apply_bc_padding(gt, state, "periodic")
    if truth is not None and gt.dirichlet_idx.numel():
        state = apply_bc_padding(gt, state, "dirichlet", truth)
    return state


def rollout_loss(model: GraphSimulator, gt: GraphTensors, window: torch.Tensor,
                 noise: NoiseSpec | None = None,
                 channel_stds_normalized: np.ndarray | None = None,
                 one_step_only: bool = False) -> torch.Tensor:
    """Mean squared rollout error over a window of consecutive frames.

    ``window`` is (T+1, n_real, d) in normalized units; frame 0 is the input,
    frames 1..T the targets.  Noise perturbs the input frame only.  Gradients
    flow through the whole rollout; with ``one_step_only`` the window is cut
    to a single step (the one-step training protocol).
    """
    if window.shape[0] < 2:
        raise ValueError("window must contain at least input + one target frame")
    if one_step_only:
        window = window[:2]
    steps = window.shape[0] - 1
    x = window[0]
    if noise is not None and noise.sigma_rel > 0:
        stds = (channel_stds_normalized if channel_stds_normalized is not None
                else np.ones(x.shape[1]))
        noisy = add_training_noise(x.detach().cpu().numpy(), noise, stds)
        x = torch.from_numpy(noisy).to(x.dtype)
    state = expand_with_ghosts(gt, x)
    state = _pad_all(gt, state)
    total = 0.0
    for t in range(1, steps + 1):
        state = model.forward_step(gt, state)
        target_full = expand_with_ghosts(gt, window[t])
        state = _pad_all(gt, state, truth=target_full)
        diff = state[: gt.n_real] - window[t]
        total = total + (diff * diff).sum()
    return total / float(window.shape[1] * window.shape[2] * steps)


# --- optimizer and schedules --------------------------------------------------

@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0


def adam_step(params, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update, in place on the parameter tensors."""
    if not state.m:
        state.m = [torch.zeros_like(p) for p in params]
        state.v = [torch.zeros_like(p) for p in params]
    state.t += 1
    t = state.t
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            if g is None:
                continue
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            m_hat = m / (1.0 - beta1 ** t)
            v_hat = v / (1.0 - beta2 ** t)
            p.add_(-lr * m_hat / (v_hat.sqrt() + eps))
    return params


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` evaluations
    without improvement.  Never increases the rate."""

    def __init__(self, lr: float, factor: float = 0.8, patience: int = 10):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.best = math.inf
        self.bad = 0

    def step(self, metric: float) -> float:
        if metric < self.best:
            self.best = metric
            self.bad = 0
        else:
            self.bad += 1
            if self.bad >= self.patience:
                self.lr *= self.factor
                self.bad = 0
        return self.lr


class EarlyStopper:
    """True once ``patience`` consecutive evaluations fail to improve."""

    def __init__(self, patience: int = 100):
        self.patience = patience
        self.best = math.inf
        self.bad = 0

    def update(self, metric: float) -> bool:
        if metric < self.best:
            self.best = metric
            self.bad = 0
        else:
            self.bad += 1
        return self.bad >= self.patience


# --- trajectory evaluation ----------------------------------------------------

def _model_rollout_raw(model: GraphSimulator, gt: GraphTensors,
                       states_raw: np.ndarray, start: int, horizon: int,
                       mean: np.ndarray, std: np.ndarray,
                       dtype=torch.float32) -> np.ndarray:
    """Rollout in raw units from ``states_raw[start]``; returns (horizon, n_real, d)."""
    x = normalize(states_raw[start], mean, std)
    state = torch.from_numpy(x).to(dtype)
    state = expand_with_ghosts(gt, state)
    state = _pad_all(gt, state)
    preds = []
    with torch.no_grad():
        for k in range(horizon):
            state = model.forward_step(gt, state)
            if not torch.isfinite(state).all():
                raise TrainingAbort(f"non-finite prediction at rollout step {k + 1}")
            if gt.dirichlet_idx.numel():
                truth_norm = normalize(states_raw[start + k + 1], mean, std)
                truth_full = expand_with_ghosts(gt, torch.from_numpy(truth_norm).to(dtype))
                state = _pad_all(gt, state, truth=truth_full)
            else:
                state = _pad_all(gt, state)
            preds.append(state[: gt.n_real].cpu().numpy().astype(np.float64))
    return denormalize(np.stack(preds), mean, std)


def evaluate_rollout(model: GraphSimulator, gt: GraphTensors, dataset: Dataset,
                     split: str, horizon: int, starts=(0,),
                     mean=None, std=None) -> dict:
    """Full rollout metrics on a dataset split, in raw units.

    Returns aggregate RMSE/PCC plus per-step curves averaged over
    trajectories and start frames.
    """
    if mean is None or std is None:
        mean, std = dataset.channel_stats()
    preds, truths = [], []
    for idx in dataset.indices(split):
        traj = dataset.load_trajectory(idx)
        for start in starts:
            if start + horizon >= traj.n_frames:
                raise ValueError(
                    f"start {start} + horizon {horizon} exceeds trajectory length "
                    f"{traj.n_frames}")
            pred = _model_rollout_raw(model, gt, traj.states, start, horizon, mean, std)
            preds.append(pred)
            truths.append(traj.states[start + 1: start + 1 + horizon])
    pred_all = np.stack(preds)   # (W, horizon, N, d)
    truth_all = np.stack(truths)
    per_step_rmse = [rmse(truth_all[:, t], pred_all[:, t]) for t in range(horizon)]
    per_step_pcc = [pcc(truth_all[:, t], pred_all[:, t]) for t in range(horizon)]
    return {
        "rmse": rmse(truth_all, pred_all),
        "pcc": pcc(truth_all, pred_all),
        "per_step_rmse": per_step_rmse,
        "per_step_pcc": per_step_pcc,
        "horizon": horizon,
        "n_windows": int(pred_all.shape[0]),
    }


def persistence_baseline(dataset: Dataset, split: str, horizon: int,
                         starts=(0,)) -> dict:
    """Metrics of the repeat-last-frame forecaster under the same protocol."""
    preds, truths = [], []
    for idx in dataset.indices(split):
        traj = dataset.load_trajectory(idx)
        for start in starts:
            if start + horizon >= traj.n_frames:
                raise ValueError("start + horizon exceeds trajectory length")
            preds.append(persistence_forecast(traj.states[start:start + 1], horizon))
            truths.append(traj.states[start + 1: start + 1 + horizon])
    pred_all = np.stack(preds)
    truth_all = np.stack(truths)
    out = {
        "rmse": rmse(truth_all, pred_all),
        "per_step_rmse": [rmse(truth_all[:, t], pred_all[:, t]) for t in range(horizon)],
        "horizon": horizon,
    }
    try:
        out["pcc"] = pcc(truth_all, pred_all)
    except ValueError:
        out["pcc"] = None  # static forecast of a static field has no variance
    return out


# --- training loop -------------------------------------------------------------

def _validation_rmse(model, gt, dataset, mean, std, steps: int) -> tuple[float, float]:
    res = evaluate_rollout(model, gt, dataset, "validation", steps, (0,), mean, std)
    return res["rmse"], res["pcc"]


def train(dataset: Dataset, model_config: ModelConfig, train_config: TrainConfig,
          prep: GraphPrep | None = None, out_dir=None, log=print) -> dict:
    """Train a model on a dataset; returns a result dict.

    Side effects when ``out_dir`` is given: checkpoints/best.ckpt and
    checkpoints/last.ckpt are written there.  The per-epoch history is always
    returned as a list of :class:`MetricsRecord`.
    """
    cfg = train_config
    torch.set_num_threads(cfg.threads)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    graph = prepare_graph(dataset.load_graph(), prep or GraphPrep())
    gt = graph_tensors(graph, torch.float32)
    mean, std = dataset.channel_stats()
    model = build_model(model_config)

    train_idx = dataset.indices("train")
    if not train_idx:
        raise ValueError("dataset has no training trajectories")
    cache = {i: dataset.load_trajectory(i).states for i in train_idx}
    window_len = (1 if cfg.one_step_only else cfg.rollout_steps) + 1

    params = [p for p in model.parameters() if p.requires_grad]
    adam = AdamState()
    sched = PlateauScheduler(cfg.learning_rate, cfg.plateau_factor, cfg.plateau_patience)
    stopper = EarlyStopper(cfg.early_stop_patience)
    noise = NoiseSpec(cfg.noise_sigma_rel, seed=0)
    # noise scale relative to the (unit) normalized channels
    unit_stds = np.ones(model_config.state_channels)

    history: list[MetricsRecord] = []
    best_val = math.inf
    best_ckpt = None
    last_ckpt = None
    ckpt_dir = None
    if out_dir is not None:
        from pathlib import Path
        ckpt_dir = Path(out_dir) / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    prep_extra = asdict(prep or GraphPrep())
    extra = {"prep": prep_extra, "mean": [float(x) for x in mean],
             "std": [float(x) for x in std], "train_config": asdict(cfg)}

    t0 = time.time()
    lr = cfg.learning_rate
    val_rmse = math.nan
    val_pcc = math.nan
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        losses = []
        for idx in train_idx:
            states = cache[idx]
            max_start = states.shape[0] - window_len
            if max_start < 0:
                raise ValueError(f"trajectory {idx} too short for the training window")
            for _ in range(cfg.windows_per_trajectory):
                start = int(rng.integers(0, max_start + 1))
                raw = states[start: start + window_len]
                window = torch.from_numpy(normalize(raw, mean, std)).to(torch.float32)
                step_noise = NoiseSpec(noise.sigma_rel, seed=int(rng.integers(2 ** 62)))
                loss = rollout_loss(model, gt, window, step_noise, unit_stds,
                                    one_step_only=cfg.one_step_only)
                if not torch.isfinite(loss):
                    raise TrainingAbort(
                        f"non-finite loss at epoch {epoch}",
                        checkpoint_path=None if ckpt_dir is None else ckpt_dir / "last.ckpt",
                    )
                model.zero_grad(set_to_none=True)
                loss.backward()
                grads = [p.grad for p in params]
                adam_step(params, grads, adam, lr)
                if model.time_block_enabled:
                    s = float(model.time_filter.normalized_weights().detach().sum())
                    if abs(s - 1.0) > ALPHA_CONSISTENCY_TOL:
                        raise TrainingAbort(
                            f"time-filter weight sum drifted to {s!r} at epoch {epoch}")
                losses.append(float(loss))
        if epoch % cfg.val_every == 0:
            model.eval()
            val_rmse, val_pcc = _validation_rmse(
                model, gt, dataset, mean, std, cfg.val_rollout_steps)
            lr = sched.step(val_rmse)
            stop = stopper.update(val_rmse)
            if val_rmse < best_val:
                best_val = val_rmse
                if ckpt_dir is not None:
                    best_ckpt = ckpt_dir / "best.ckpt"
                    save_checkpoint(best_ckpt, model, step=epoch,
                                    metrics={"val_rmse": val_rmse, "val_pcc": val_pcc},
                                    extra=extra)
        else:
            stop = False
        history.append(MetricsRecord(
            epoch=epoch, train_loss=float(np.mean(losses)), val_rmse=val_rmse,
            val_pcc=val_pcc, lr=lr, wall_time=time.time() - t0))
        if ckpt_dir is not None:
            last_ckpt = ckpt_dir / "last.ckpt"
            save_checkpoint(last_ckpt, model, step=epoch,
                            metrics={"val_rmse": val_rmse}, extra=extra)
        if stop:
            log(f"early stop at epoch {epoch}")
            break
    if ckpt_dir is not None and best_ckpt is None:
        best_ckpt = ckpt_dir / "best.ckpt"
        save_checkpoint(best_ckpt, model, step=len(history), metrics={}, extra=extra)
    return {
        "model": model,
        "graph": graph,
        "graph_tensors": gt,
        "history": history,
        "best_val_rmse": best_val,
        "best_checkpoint": None if best_ckpt is None else str(best_ckpt),
        "last_checkpoint": None if last_ckpt is None else str(last_ckpt),
        "extra": extra,
    }


def evaluate_checkpoint(checkpoint_path, dataset: Dataset, horizon: int,
                        starts=(0,), split: str = "test") -> dict:
    """Load a checkpoint, rebuild its preprocessing, and run rollout metrics."""
    model, step, metrics, extra = load_checkpoint(checkpoint_path)
    prep = GraphPrep(**extra.get("prep", {}))
    graph = prepare_graph(dataset.load_graph(), prep)
    gt = graph_tensors(graph, torch.float32)
    mean = np.asarray(extra.get("mean"), dtype=np.float64) if extra.get("mean") else None
    std = np.asarray(extra.get("std"), dtype=np.float64) if extra.get("std") else None
    model.eval()
    result = evaluate_rollout(model, gt, dataset, split, horizon, starts, mean, std)
    result["checkpoint_step"] = step
    result["checkpoint_metrics"] = metrics
    return result
