import hashlib
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluxgnn.meshes import (GraphFileError, NODE_DIRICHLET, NODE_GHOST, NODE_INTERIOR,
                            NODE_PERIODIC, add_periodic_ghosts, build_grid_graph,
                            build_multimesh, compute_edge_geometry, read_graph,
                            reverse_edge_index, write_graph)
from fluxgnn.verify import random_knn_graph

from conftest import make_graph


class TestGridGraph:
    def test_square_50_periodic_node_count(self):
        g = build_grid_graph((50, 50), 1 / 50, periodic=True)
        assert g.n_nodes == 2500
        assert (g.node_max_level == 0).all()

    def test_3x3_nonperiodic_counts(self):
        # 12 undirected lattice links on a 3x3 grid, stored in both directions
        g = build_grid_graph((3, 3), 1.0, periodic=False)
        assert g.n_nodes == 9
        assert g.n_edges == 24

    def test_cube_24_periodic_node_count(self):
        g = build_grid_graph((24, 24, 24), 1.0, periodic=True)
        assert g.n_nodes == 13824

    def test_small_dims_rejected(self):
        with pytest.raises(ValueError):
            build_grid_graph((2, 5), 1.0)

    def test_bad_spacing_rejected(self):
        with pytest.raises(ValueError):
            build_grid_graph((4, 4), 0.0)

    def test_boundary_typing(self):
        g = build_grid_graph((4, 4), 1.0, periodic=True)
        border = (g.positions[:, 0] % 3 == 0) | (g.positions[:, 1] % 3 == 0)
        assert (g.node_type[border] == NODE_PERIODIC).all()
        assert (g.node_type[~border] == NODE_INTERIOR).all()
        g = build_grid_graph((4, 4), 1.0, periodic=False)
        assert (g.node_type[border] == NODE_DIRICHLET).all()

    def test_no_self_edges_and_closure(self):
        g = build_grid_graph((5, 4), 0.5, periodic=(True, False))
        g.validate()
        rev = reverse_edge_index(g)
        assert (g.edges[rev][:, ::-1] == g.edges).all()


class TestMultimesh:
    def test_level_sizes_2500(self):
        base = build_grid_graph((50, 50), 1 / 50, periodic=True)
        g = build_multimesh(base, r=0.1, min_nodes=10, seed=3)
        assert g.level_node_counts() == [2500, 250, 25]

    def test_too_small_for_second_level(self):
        # floor(0.1 * 50) = 5 < min_nodes, so only level 0 remains
        base = build_grid_graph((10, 5), 0.1, periodic=False)
        g = build_multimesh(base, r=0.1, min_nodes=10, seed=0)
        assert g.n_levels == 1
        assert g.level_node_counts() == [50]

    def test_nesting_by_construction(self):
        base = build_grid_graph((12, 12), 1.0, periodic=True)
        g = build_multimesh(base, r=0.3, min_nodes=5, k_neighbors=4, seed=11)
        for k in range(1, g.n_levels):
            upper = set(np.flatnonzero(g.node_max_level >= k - 1))
            lower = set(np.flatnonzero(g.node_max_level >= k))
            assert lower < upper
        sizes = g.level_node_counts()
        for k in range(1, len(sizes)):
            assert sizes[k] == int(np.floor(0.3 * sizes[k - 1]))

    def test_seed_determinism(self):
        base = build_grid_graph((12, 12), 1.0, periodic=True)
        a = build_multimesh(base, r=0.2, min_nodes=5, seed=9)
        b = build_multimesh(base, r=0.2, min_nodes=5, seed=9)
        assert np.array_equal(a.edges, b.edges)
        assert np.array_equal(a.edge_level, b.edge_level)
        c = build_multimesh(base, r=0.2, min_nodes=5, seed=10)
        assert not np.array_equal(a.edges, c.edges)

    def test_bad_ratio_rejected(self):
        base = build_grid_graph((6, 6), 1.0)
        for r in (0.0, 1.0, -0.2, 1.7):
            with pytest.raises(ValueError):
                build_multimesh(base, r=r)

    def test_coarse_edges_are_symmetric(self):
        base = build_grid_graph((12, 12), 1.0, periodic=True)
        g = build_multimesh(base, r=0.3, min_nodes=5, seed=2)
        g.validate()

    def test_requires_single_level_base(self):
        base = build_grid_graph((12, 12), 1.0, periodic=True)
        g = build_multimesh(base, r=0.3, min_nodes=5, seed=2)
        with pytest.raises(ValueError):
            build_multimesh(g, r=0.3, min_nodes=5)


class TestEdgeGeometry:
    def test_axis_aligned_edge(self):
        g = make_graph([[0.0, 0.0], [0.02, 0.0]], [[0, 1]])
        geo = compute_edge_geometry(g)
        np.testing.assert_allclose(geo.rel_pos[0], [0.02, 0.0])
        assert geo.distance[0] == pytest.approx(0.02)
        assert geo.angle_x[0] == pytest.approx(0.0)
        assert geo.angle_y[0] == pytest.approx(np.pi / 2)

    def test_diagonal_edge(self):
        g = make_graph([[0.0, 0.0], [1.0, 1.0]], [[0, 1]])
        geo = compute_edge_geometry(g)
        assert geo.distance[0] == pytest.approx(np.sqrt(2.0))
        assert geo.angle_x[0] == pytest.approx(np.pi / 4)

    def test_reverse_edge_antisymmetry(self):
        g = make_graph([[0.0, 0.0], [0.3, -0.4]], [[0, 1]])
        geo = compute_edge_geometry(g)
        np.testing.assert_allclose(geo.rel_pos[0] + geo.rel_pos[1], 0.0)
        assert geo.distance[0] == geo.distance[1]

    def test_coincident_endpoints_rejected(self):
        g = make_graph([[0.0, 0.0], [0.0, 0.0]], [[0, 1]])
        with pytest.raises(ValueError):
            compute_edge_geometry(g)

    def test_3d_angles(self):
        g = make_graph([[0.0, 0.0, 0.0], [1.0, 0.0, 1.0]], [[0, 1]])
        geo = compute_edge_geometry(g)
        assert geo.angle_x[0] == pytest.approx(0.0)      # no y component
        assert geo.angle_y[0] == pytest.approx(np.pi / 4)  # 45 deg in (x, z)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_antisymmetry_on_random_graphs(self, seed):
        g = random_knn_graph(np.random.default_rng(seed), n_min=5, n_max=20)
        geo = compute_edge_geometry(g)
        rev = reverse_edge_index(g)
        np.testing.assert_allclose(geo.rel_pos[rev], -geo.rel_pos, atol=0)
        np.testing.assert_allclose(geo.distance[rev], geo.distance, atol=0)


class TestGhosts:
    def test_halo_count_50(self):
        g = build_grid_graph((50, 50), 1 / 50, periodic=True)
        gg = add_periodic_ghosts(g)
        assert gg.n_nodes - g.n_nodes == 204  # 50*4 sides + 4 corners
        assert gg.ghost_map.shape == (204, 2)
        gg.validate()

    def test_halo_count_3d(self):
        g = build_grid_graph((4, 4, 4), 1.0, periodic=True)
        gg = add_periodic_ghosts(g)
        assert gg.n_nodes - g.n_nodes == 6 ** 3 - 4 ** 3

    def test_ghost_sources_wrap(self):
        g = build_grid_graph((4, 4), 0.25, periodic=True)
        gg = add_periodic_ghosts(g)
        for ghost, src in gg.ghost_map:
            diff = gg.positions[ghost] - gg.positions[src]
            # ghosts sit exactly one period away along the wrapped axes
            for a in range(2):
                assert abs(diff[a]) in (pytest.approx(0.0), pytest.approx(1.0))
        assert (gg.node_type[gg.ghost_map[:, 0]] == NODE_GHOST).all()

    def test_side_ghosts_touch_their_face_node(self):
        g = build_grid_graph((4, 4), 1.0, periodic=True)
        gg = add_periodic_ghosts(g)
        geo = compute_edge_geometry(gg)
        ghost_ids = set(gg.ghost_map[:, 0].tolist())
        ghost_edges = [e for e in range(gg.n_edges)
                       if int(gg.edges[e, 0]) in ghost_ids or int(gg.edges[e, 1]) in ghost_ids]
        assert ghost_edges
        np.testing.assert_allclose(geo.distance[ghost_edges], 1.0)

    def test_nonperiodic_noop_with_warning(self):
        g = build_grid_graph((4, 4), 1.0, periodic=False)
        with pytest.warns(UserWarning):
            out = add_periodic_ghosts(g)
        assert out is g


class TestGraphFile:
    def test_round_trip(self, tmp_path):
        g = build_grid_graph((6, 5), 0.2, periodic=(True, False))
        g = build_multimesh(g, r=0.4, min_nodes=5, k_neighbors=4, seed=1)
        path = tmp_path / "g.bin"
        write_graph(g, path)
        h = read_graph(path)
        np.testing.assert_array_equal(g.positions, h.positions)
        np.testing.assert_array_equal(g.node_type, h.node_type)
        np.testing.assert_array_equal(g.edges, h.edges)
        np.testing.assert_array_equal(g.edge_level, h.edge_level)
        np.testing.assert_array_equal(g.node_max_level, h.node_max_level)
        np.testing.assert_array_equal(g.ghost_map, h.ghost_map)
        np.testing.assert_array_equal(g.domain_extent, h.domain_extent)
        # byte-stable: rewriting what was read reproduces the file exactly
        path2 = tmp_path / "g2.bin"
        write_graph(h, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_golden_file(self):
        from pathlib import Path
        golden = Path(__file__).parent / "golden" / "grid4x3.graph.bin"
        g = read_graph(golden)
        assert (g.n_nodes, g.ndim, g.n_edges) == (12, 2, 34)
        assert g.level_node_counts() == [12]
        digest = hashlib.sha256(golden.read_bytes()).hexdigest()
        assert digest == GOLDEN_GRAPH_SHA256

    def test_truncated_file_rejected(self, tmp_path):
        g = build_grid_graph((4, 4), 1.0)
        path = tmp_path / "g.bin"
        write_graph(g, path)
        data = path.read_bytes()
        path.write_bytes(data[:-5])
        with pytest.raises(GraphFileError, match="truncated"):
            read_graph(path)

    def test_version_mismatch_rejected(self, tmp_path):
        g = build_grid_graph((4, 4), 1.0)
        path = tmp_path / "g.bin"
        write_graph(g, path)
        data = path.read_bytes()
        head, _, tail = data.partition(b"\n")
        head = head.replace(b'"version": 1', b'"version": 99')
        path.write_bytes(head + b"\n" + tail)
        with pytest.raises(GraphFileError, match="version"):
            read_graph(path)


GOLDEN_GRAPH_SHA256 = "ec9654362fb31eecaf3191add5e7ec0c68f13cf0ceca167f8af59a1c0259bd31"
