"""Trajectory dataset container: one directory per dataset.

Layout:
    manifest.json     description, splits, per-channel normalization
    graph.bin         the discretization (meshes container format)
    traj_XXX.bin      one file per trajectory: a JSON header line, then the
                      (T, N, d) float64 payload little-endian row-major,
                      then a CRC32 footer (uint32 LE) over the payload

Round-trips are bit-exact.  Reading is lazy: trajectories load one at a time.
The environment variable DATASET_ROOT provides the default search path for
relative dataset names.
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .meshes import MeshGraph, read_graph, write_graph
from .solvers import Trajectory

MANIFEST_VERSION = 1
STD_FLOOR = 1e-8  # degenerate constant channels get this std


class DatasetError(Exception):
    """Malformed, truncated, or inconsistent dataset container."""


@dataclass
class NoiseSpec:
    """Gaussian training noise scaled per channel.

    sigma_rel is the noise standard deviation as a fraction of the channel's
    training std; it is applied to model inputs only, never to targets.
    """

    sigma_rel: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.sigma_rel < 1.0:
            raise ValueError("sigma_rel must lie in [0, 1)")


@dataclass
class DatasetManifest:
    version: int
    system: str                      # burgers2d | grayscott3d | external
    graph_file: str
    trajectory_files: list[str]
    trajectory_seeds: list[int]
    dt_dataset: float
    channel_names: list[str]
    split: dict                      # {"train": [...], "validation": [...], "test": [...]}
    normalization: dict = field(default_factory=dict)  # {"mean": [...], "std": [...]}
    physics_meta: dict = field(default_factory=dict)

    def validate(self) -> None:
        groups = [set(self.split.get(k, [])) for k in ("train", "validation", "test")]
        for a in range(len(groups)):
            for b in range(a + 1, len(groups)):
                overlap = groups[a] & groups[b]
                if overlap:
                    raise DatasetError(f"split lists overlap on trajectories {sorted(overlap)}")
        all_idx = set().union(*groups)
        if all_idx and max(all_idx) >= len(self.trajectory_files):
            raise DatasetError("split references a trajectory index out of range")
        if len(self.trajectory_seeds) != len(self.trajectory_files):
            raise DatasetError("one seed per trajectory file required")
        if self.normalization:
            std = np.asarray(self.normalization["std"], dtype=np.float64)
            if (std <= 0).any():
                raise DatasetError("normalization std must be positive per channel")
        if self.dt_dataset <= 0:
            raise DatasetError("dt_dataset must be positive")

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        data = json.loads(text)
        if data.get("version") != MANIFEST_VERSION:
            raise DatasetError(f"unsupported manifest version {data.get('version')!r}")
        return cls(**data)


def resolve_dataset_path(name) -> Path:
    """Absolute paths pass through; bare names resolve under $DATASET_ROOT."""
    p = Path(name)
    if p.is_absolute() or p.exists():
        return p
    root = os.environ.get("DATASET_ROOT")
    if root and (Path(root) / p).exists():
        return Path(root) / p
    return p


def _write_trajectory_file(path: Path, traj: Trajectory, seed: int) -> None:
    t, n, d = traj.states.shape
    header = {"format": "trajectory", "version": MANIFEST_VERSION,
              "T": t, "N": n, "d": d, "dt": traj.dt_dataset, "seed": seed}
    payload = np.ascontiguousarray(traj.states, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("utf-8"))
        fh.write(payload)
        fh.write(np.uint32(zlib.crc32(payload) & 0xFFFFFFFF).astype("<u4").tobytes())


def _read_trajectory_file(path: Path, dt_dataset: float) -> Trajectory:
    with open(path, "rb") as fh:
        try:
            header = json.loads(fh.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DatasetError(f"{path.name}: not a trajectory file ({exc})") from exc
        if header.get("format") != "trajectory":
            raise DatasetError(f"{path.name}: unknown format {header.get('format')!r}")
        if header.get("version") != MANIFEST_VERSION:
            raise DatasetError(f"{path.name}: unsupported version {header.get('version')!r}")
        rest = fh.read()
    t, n, d = header["T"], header["N"], header["d"]
    nbytes = t * n * d * 8
    if len(rest) != nbytes + 4:
        raise DatasetError(f"{path.name}: truncated payload ({len(rest)} of {nbytes + 4} bytes)")
    payload, crc_bytes = rest[:nbytes], rest[nbytes:]
    stored = int(np.frombuffer(crc_bytes, dtype="<u4")[0])
    if (zlib.crc32(payload) & 0xFFFFFFFF) != stored:
        raise DatasetError(f"{path.name}: checksum failure")
    states = np.frombuffer(payload, dtype="<f8").reshape(t, n, d).astype(np.float64)
    return Trajectory(states=states, dt_dataset=dt_dataset,
                      physics_meta={"seed": header.get("seed")})


class Dataset:
    """Lazy view over a dataset directory."""

    def __init__(self, root: Path, manifest: DatasetManifest):
        self.root = Path(root)
        self.manifest = manifest

    @property
    def n_trajectories(self) -> int:
        return len(self.manifest.trajectory_files)

    def load_graph(self) -> MeshGraph:
        return read_graph(self.root / self.manifest.graph_file)

    def load_trajectory(self, index: int) -> Trajectory:
        name = self.manifest.trajectory_files[index]
        return _read_trajectory_file(self.root / name, self.manifest.dt_dataset)

    def indices(self, split: str) -> list[int]:
        return list(self.manifest.split[split])

    def channel_stats(self) -> tuple[np.ndarray, np.ndarray]:
        norm = self.manifest.normalization
        if not norm:
            raise DatasetError("manifest carries no normalization statistics")
        return (np.asarray(norm["mean"], dtype=np.float64),
                np.asarray(norm["std"], dtype=np.float64))


def write_dataset(root, manifest: DatasetManifest, trajectories,
                  graph: MeshGraph) -> Path:
    """Materialize a dataset directory; returns its path."""
    manifest.validate()
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    write_graph(graph, root / manifest.graph_file)
    if len(trajectories) != len(manifest.trajectory_files):
        raise DatasetError("one trajectory per listed file required")
    for name, traj, seed in zip(manifest.trajectory_files, trajectories,
                                manifest.trajectory_seeds):
        _write_trajectory_file(root / name, traj, seed)
    (root / "manifest.json").write_text(manifest.to_json())
    return root


def read_dataset(path) -> Dataset:
    root = resolve_dataset_path(path)
    mf = root / "manifest.json"
    if not mf.exists():
        raise DatasetError(f"no manifest.json under {root}")
    manifest = DatasetManifest.from_json(mf.read_text())
    manifest.validate()
    for name in [manifest.graph_file, *manifest.trajectory_files]:
        if not (root / name).exists():
            raise DatasetError(f"manifest lists missing file {name}")
    return Dataset(root, manifest)


def compute_normalization(trajectories) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std over the given (training) trajectories only.

    Constant channels are floored to std 1e-8 so the affine map stays
    invertible.
    """
    count = 0
    total = None
    total_sq = None
    for traj in trajectories:
        flat = traj.states.reshape(-1, traj.states.shape[-1])
        s = flat.sum(axis=0)
        sq = (flat * flat).sum(axis=0)
        total = s if total is None else total + s
        total_sq = sq if total_sq is None else total_sq + sq
        count += flat.shape[0]
    if count == 0:
        raise DatasetError("cannot compute statistics over an empty training split")
    mean = total / count
    var = np.maximum(total_sq / count - mean * mean, 0.0)
    std = np.maximum(np.sqrt(var), STD_FLOOR)
    return mean, std


def add_training_noise(state: np.ndarray, spec: NoiseSpec,
                       channel_stds: np.ndarray) -> np.ndarray:
    """state + N(0, (sigma_rel * std_channel)^2), i.i.d. per entry.

    Input-only augmentation: call this on the frame fed to the model, never
    on targets or evaluation data.
    """
    if spec.sigma_rel == 0.0:
        return np.array(state, copy=True)
    rng = np.random.default_rng(spec.seed)
    scale = spec.sigma_rel * np.asarray(channel_stds, dtype=np.float64)
    return state + rng.standard_normal(state.shape) * scale


def temporal_downsample(traj: Trajectory, factor: int) -> Trajectory:
    """Keep every ``factor``-th frame; the dataset step scales by ``factor``."""
    if factor < 1:
        raise ValueError("factor must be a positive integer")
    if factor == 1:
        return traj
    return Trajectory(
        states=traj.states[::factor].copy(),
        dt_dataset=traj.dt_dataset * factor,
        graph_ref=traj.graph_ref,
        physics_meta=dict(traj.physics_meta),
    )
