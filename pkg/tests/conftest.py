import numpy as np
import pytest

from fluxgnn.datagen import DatagenConfig, generate
from fluxgnn.meshes import MeshGraph, _frozen


def make_graph(positions, links, levels=None, node_type=None, extent=None) -> MeshGraph:
    """Hand-built graph from undirected links; both directions are stored."""
    positions = np.asarray(positions, dtype=np.float64)
    n = len(positions)
    pairs = np.asarray(links, dtype=np.int64).reshape(-1, 2)
    edges = np.concatenate([pairs, pairs[:, ::-1]], axis=0)
    if levels is None:
        edge_level = np.zeros(len(edges), dtype=np.int64)
    else:
        edge_level = np.concatenate([levels, levels]).astype(np.int64)
    node_max = np.zeros(n, dtype=np.int64)
    if len(edges):
        np.maximum.at(node_max, edges[:, 0], edge_level)
        np.maximum.at(node_max, edges[:, 1], edge_level)
    return MeshGraph(
        positions=_frozen(positions),
        node_type=_frozen(np.zeros(n, dtype=np.uint8) if node_type is None
                          else np.asarray(node_type, dtype=np.uint8)),
        edges=_frozen(edges),
        edge_level=_frozen(edge_level),
        node_max_level=_frozen(node_max),
        ghost_map=_frozen(np.empty((0, 2), dtype=np.int64)),
        domain_extent=_frozen(np.ones(positions.shape[1])
                              if extent is None else np.asarray(extent, float)),
    )


def two_node_graph(spacing=1.0):
    return make_graph([[0.0, 0.0], [spacing, 0.0]], [[0, 1]])


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """16^2 periodic grid, 3 short trajectories; shared by fast pipeline tests."""
    out = tmp_path_factory.mktemp("data") / "tiny"
    cfg = DatagenConfig(system="burgers2d", grid=[16, 16], spacing=1 / 16,
                        solver_dt=2e-4, steps=300, save_every=5,
                        trajectories=3, split=[1, 1, 1], seed=7)
    return generate(cfg, out, log=lambda *a: None)


@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory):
    """The 32^2 smoke benchmark: 5 train / 1 validation / 1 test trajectories."""
    out = tmp_path_factory.mktemp("data") / "desk"
    cfg = DatagenConfig(system="burgers2d", grid=[32, 32], spacing=1 / 32,
                        solver_dt=2e-4, steps=995, save_every=5,
                        trajectories=7, split=[5, 1, 1], seed=42)
    return generate(cfg, out, log=lambda *a: None)
