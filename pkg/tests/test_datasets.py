import json

import numpy as np
import pytest

from fluxgnn.datasets import (MANIFEST_VERSION, Dataset, DatasetError,
                              DatasetManifest, NoiseSpec, add_training_noise,
                              compute_normalization, read_dataset,
                              resolve_dataset_path, temporal_downsample,
                              write_dataset)
from fluxgnn.meshes import build_grid_graph
from fluxgnn.solvers import Trajectory


def make_manifest(n_traj=2, split=None, norm=None):
    return DatasetManifest(
        version=MANIFEST_VERSION,
        system="burgers2d",
        graph_file="graph.bin",
        trajectory_files=[f"traj_{i:03d}.bin" for i in range(n_traj)],
        trajectory_seeds=list(range(n_traj)),
        dt_dataset=0.001,
        channel_names=["u", "v"],
        split=split or {"train": [0], "validation": [], "test": [1]},
        normalization=norm or {"mean": [0.0, 0.0], "std": [1.0, 1.0]},
    )


def make_trajectories(n=2, t=6, nodes=16, seed=0):
    rng = np.random.default_rng(seed)
    return [Trajectory(states=rng.standard_normal((t, nodes, 2)), dt_dataset=0.001)
            for _ in range(n)]


@pytest.fixture
def dataset_dir(tmp_path):
    graph = build_grid_graph((4, 4), 0.25, periodic=True)
    trajectories = make_trajectories()
    root = write_dataset(tmp_path / "ds", make_manifest(), trajectories, graph)
    return root, trajectories


class TestContainer:
    def test_round_trip_bit_exact(self, dataset_dir):
        root, trajectories = dataset_dir
        ds = read_dataset(root)
        for i, original in enumerate(trajectories):
            loaded = ds.load_trajectory(i)
            assert loaded.states.tobytes() == original.states.tobytes()

    def test_graph_round_trip(self, dataset_dir):
        root, _ = dataset_dir
        ds = read_dataset(root)
        g = ds.load_graph()
        assert g.n_nodes == 16

    def test_corrupt_payload_byte_names_file(self, dataset_dir):
        root, _ = dataset_dir
        victim = root / "traj_001.bin"
        data = bytearray(victim.read_bytes())
        header_len = data.index(b"\n") + 1
        data[header_len + 100] ^= 0xFF
        victim.write_bytes(bytes(data))
        ds = read_dataset(root)
        with pytest.raises(DatasetError, match="traj_001.bin.*checksum"):
            ds.load_trajectory(1)

    def test_truncated_trajectory_rejected(self, dataset_dir):
        root, _ = dataset_dir
        victim = root / "traj_000.bin"
        victim.write_bytes(victim.read_bytes()[:-9])
        with pytest.raises(DatasetError, match="truncated"):
            read_dataset(root).load_trajectory(0)

    def test_missing_file_rejected(self, dataset_dir):
        root, _ = dataset_dir
        (root / "traj_001.bin").unlink()
        with pytest.raises(DatasetError, match="missing"):
            read_dataset(root)

    def test_version_mismatch_rejected(self, dataset_dir):
        root, _ = dataset_dir
        manifest = json.loads((root / "manifest.json").read_text())
        manifest["version"] = 77
        (root / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(DatasetError, match="version"):
            read_dataset(root)

    def test_overlapping_split_rejected(self, tmp_path):
        manifest = make_manifest(split={"train": [0, 1], "validation": [1], "test": []})
        with pytest.raises(DatasetError, match="overlap"):
            write_dataset(tmp_path / "ds", manifest, make_trajectories(),
                          build_grid_graph((4, 4), 0.25))

    def test_dataset_root_env(self, dataset_dir, monkeypatch):
        root, _ = dataset_dir
        monkeypatch.setenv("DATASET_ROOT", str(root.parent))
        resolved = resolve_dataset_path(root.name)
        assert resolved == root
        assert read_dataset(root.name).n_trajectories == 2


class TestNormalization:
    def test_constant_channel_floored(self):
        states = np.zeros((4, 8, 2))
        states[..., 1] = np.random.default_rng(0).standard_normal((4, 8))
        traj = Trajectory(states=states, dt_dataset=0.1)
        mean, std = compute_normalization([traj])
        assert std[0] == pytest.approx(1e-8)
        assert std[1] > 0.5

    def test_zscore_round_trip(self):
        rng = np.random.default_rng(3)
        traj = Trajectory(states=3.0 + 2.0 * rng.standard_normal((5, 10, 2)),
                          dt_dataset=0.1)
        mean, std = compute_normalization([traj])
        z = (traj.states - mean) / std
        back = z * std + mean
        np.testing.assert_allclose(back, traj.states, atol=1e-12)

    def test_statistics_exclude_held_out_data(self):
        # two trajectories with deliberately different means
        t_train = Trajectory(states=np.full((4, 8, 2), 1.0), dt_dataset=0.1)
        t_test = Trajectory(states=np.full((4, 8, 2), 9.0), dt_dataset=0.1)
        mean_train, _ = compute_normalization([t_train])
        mean_both, _ = compute_normalization([t_train, t_test])
        np.testing.assert_allclose(mean_train, 1.0)
        np.testing.assert_allclose(mean_both, 5.0)
        assert not np.allclose(mean_train, mean_both)


class TestTrainingNoise:
    def test_zero_sigma_is_identity(self):
        x = np.random.default_rng(0).standard_normal((50, 2))
        out = add_training_noise(x, NoiseSpec(0.0, seed=1), np.ones(2))
        np.testing.assert_array_equal(out, x)
        assert out is not x

    def test_empirical_scale(self):
        x = np.zeros((100_000, 2))
        stds = np.array([2.0, 0.5])
        out = add_training_noise(x, NoiseSpec(0.05, seed=2), stds)
        measured = (out - x).std(axis=0)
        np.testing.assert_allclose(measured, 0.05 * stds, rtol=0.02)
        assert abs((out - x).mean()) < 1e-3

    def test_seed_reproducibility(self):
        x = np.ones((20, 2))
        a = add_training_noise(x, NoiseSpec(0.1, seed=5), np.ones(2))
        b = add_training_noise(x, NoiseSpec(0.1, seed=5), np.ones(2))
        np.testing.assert_array_equal(a, b)

    def test_invalid_sigma_rejected(self):
        with pytest.raises(ValueError):
            NoiseSpec(sigma_rel=1.0)


class TestTemporalDownsample:
    def test_identity(self):
        traj = make_trajectories(1)[0]
        assert temporal_downsample(traj, 1) is traj

    def test_factor_five_counting(self):
        traj = Trajectory(states=np.zeros((1001, 4, 2)), dt_dataset=0.2)
        out = temporal_downsample(traj, 5)
        assert out.n_frames == 201
        assert out.dt_dataset == pytest.approx(1.0)

    def test_frames_are_every_kth(self):
        states = np.arange(12, dtype=np.float64)[:, None, None] * np.ones((12, 3, 2))
        traj = Trajectory(states=states, dt_dataset=0.5)
        out = temporal_downsample(traj, 3)
        np.testing.assert_array_equal(out.states[:, 0, 0], [0, 3, 6, 9])
