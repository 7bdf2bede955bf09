"""Synthetic dataset production: drives the reference solvers into the
dataset container, including the split layout and normalization statistics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

from .datasets import (MANIFEST_VERSION, DatasetManifest, compute_normalization,
                       read_dataset, write_dataset)
from .meshes import build_grid_graph
from .solvers import BurgersParams, GrayScottParams, simulate

SYSTEMS = ("burgers2d", "grayscott3d")


@dataclass
class DatagenConfig:
    system: str = "burgers2d"
    grid: list = field(default_factory=lambda: [32, 32])
    spacing: float = 1.0 / 32
    solver_dt: float = 2e-4
    steps: int = 995                  # solver steps per trajectory
    save_every: int = 5
    trajectories: int = 7
    split: list = field(default_factory=lambda: [5, 1, 1])
    seed: int = 0
    nu: float = 0.01                  # burgers2d viscosity
    n_modes: int = 10                 # burgers2d initial-condition modes per axis
    Du: float = 0.2                   # grayscott3d parameters
    Dv: float = 0.1
    alpha: float = 0.025
    beta: float = 0.055
    rt: float = 0.1

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ValueError(f"system must be one of {SYSTEMS}")
        if sum(self.split) != self.trajectories:
            raise ValueError("split counts must sum to the number of trajectories")


PRESETS = {
    # desk initial conditions are resolution-matched: mode numbers up to +/-2
    # keep ~8 grid points per wavelength on the coarse 32^2 grid
    ("burgers2d", "desk"): dict(grid=[32, 32], spacing=1 / 32, solver_dt=2e-4,
                                steps=995, save_every=5, trajectories=7,
                                split=[5, 1, 1], n_modes=4),
    ("burgers2d", "paper"): dict(grid=[50, 50], spacing=1 / 50, solver_dt=2e-4,
                                 steps=4995, save_every=5, trajectories=60,
                                 split=[50, 5, 5], n_modes=10),
    ("grayscott3d", "desk"): dict(grid=[16, 16, 16], spacing=2.0, solver_dt=0.25,
                                  steps=495, save_every=5, trajectories=4,
                                  split=[2, 1, 1]),
    ("grayscott3d", "paper"): dict(grid=[24, 24, 24], spacing=4.0, solver_dt=0.25,
                                   steps=14995, save_every=5, trajectories=10,
                                   split=[5, 3, 2]),
}


def preset_config(system: str, preset: str, **overrides) -> DatagenConfig:
    key = (system, preset)
    if key not in PRESETS:
        raise ValueError(f"no preset {preset!r} for system {system!r}")
    merged = dict(PRESETS[key])
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return DatagenConfig(system=system, **merged)


def _solver_params(cfg: DatagenConfig, seed: int):
    if cfg.system == "burgers2d":
        if len(cfg.grid) != 2:
            raise ValueError("burgers2d needs a 2D grid")
        return BurgersParams(nu=cfg.nu, nx=cfg.grid[0], ny=cfg.grid[1],
                             dx=cfg.spacing, dy=cfg.spacing, dt=cfg.solver_dt,
                             n_a=cfg.n_modes, n_b=cfg.n_modes, seed=seed)
    if len(cfg.grid) != 3 or len(set(cfg.grid)) != 1:
        raise ValueError("grayscott3d needs a cubic grid")
    return GrayScottParams(Du=cfg.Du, Dv=cfg.Dv, alpha=cfg.alpha, beta=cfg.beta,
                           n=cfg.grid[0], dx=cfg.spacing, dt=cfg.solver_dt,
                           rt=cfg.rt, seed=seed)


def generate(cfg: DatagenConfig, out_dir, log=print):
    """Simulate all trajectories and materialize the dataset directory."""
    out_dir = Path(out_dir)
    graph = build_grid_graph(cfg.grid, cfg.spacing, periodic=True)
    seeds = [cfg.seed + i for i in range(cfg.trajectories)]
    trajectories = []
    for i, seed in enumerate(seeds):
        params = _solver_params(cfg, seed)
        traj = simulate(params, None, cfg.steps, cfg.save_every)
        trajectories.append(traj)
        log(f"trajectory {i + 1}/{cfg.trajectories}: {traj.n_frames} frames")
    n_train, n_val, n_test = cfg.split
    split = {
        "train": list(range(n_train)),
        "validation": list(range(n_train, n_train + n_val)),
        "test": list(range(n_train + n_val, cfg.trajectories)),
    }
    mean, std = compute_normalization(trajectories[i] for i in split["train"])
    manifest = DatasetManifest(
        version=MANIFEST_VERSION,
        system=cfg.system,
        graph_file="graph.bin",
        trajectory_files=[f"traj_{i:03d}.bin" for i in range(cfg.trajectories)],
        trajectory_seeds=seeds,
        dt_dataset=cfg.solver_dt * cfg.save_every,
        channel_names=["u", "v"],
        split=split,
        normalization={"mean": [float(x) for x in mean],
                       "std": [float(x) for x in std]},
        physics_meta={"datagen": asdict(cfg)},
    )
    write_dataset(out_dir, manifest, trajectories, graph)
    return read_dataset(out_dir)
