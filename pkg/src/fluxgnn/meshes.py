"""Discretization graphs: regular grids, coarsened multi-level unions, ghost halos.

Every graph is a set of directed edges closed under reversal: if (i, j) is
stored at level k, so is (j, i) at the same level.  Construction functions are
pure; the arrays of a returned :class:`MeshGraph` are frozen (read-only), so
instances are safe to share across threads.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

# node_type codes
NODE_INTERIOR = 0
NODE_PERIODIC = 1
NODE_DIRICHLET = 2
NODE_GHOST = 3
NODE_TYPE_COUNT = 4

GRAPH_FORMAT_VERSION = 1

# default neighbor count for coarse-level edge reconstruction, per dimension
_DEFAULT_KNN = {2: 4, 3: 6}


class GraphFileError(Exception):
    """Raised when a graph container is malformed, truncated, or mismatched."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MeshGraph:
    """A directed graph discretizing a spatial domain.

    positions      (N, m) float64 node coordinates in domain units
    node_type      (N,) uint8, one of the NODE_* codes
    edges          (E, 2) int64 directed (sender, receiver) pairs
    edge_level     (E,) int64, 0 for the base mesh, k >= 1 for coarse levels
    node_max_level (N,) int64, deepest level whose edges touch the node
    ghost_map      (G, 2) int64 (ghost_index, source_index) pairs
    domain_extent  (m,) float64 physical extent per axis
    """

    positions: np.ndarray
    node_type: np.ndarray
    edges: np.ndarray
    edge_level: np.ndarray
    node_max_level: np.ndarray
    ghost_map: np.ndarray
    domain_extent: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.positions.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def ndim(self) -> int:
        return self.positions.shape[1]

    @property
    def n_levels(self) -> int:
        return int(self.edge_level.max()) + 1 if self.n_edges else 1

    @property
    def n_real_nodes(self) -> int:
        """Nodes that carry physical state (everything except ghosts)."""
        return self.n_nodes - self.ghost_map.shape[0]

    def level_node_counts(self) -> list[int]:
        """Number of nodes participating in each level, index 0 first."""
        return [int(np.sum(self.node_max_level >= k)) for k in range(self.n_levels)]

    def validate(self) -> None:
        """Check structural invariants; raises ValueError on violation."""
        if not np.isfinite(self.positions).all():
            raise ValueError("non-finite node positions")
        if self.edges.size and (self.edges[:, 0] == self.edges[:, 1]).any():
            raise ValueError("self-edges are not allowed")
        reverse_edge_index(self)  # raises if any reverse is missing
        ghosts = self.ghost_map[:, 0]
        if len(np.unique(ghosts)) != len(ghosts):
            raise ValueError("a ghost node appears more than once in ghost_map")
        if (self.node_type[ghosts] != NODE_GHOST).any():
            raise ValueError("ghost_map entry does not point at a ghost-typed node")
        if self.ghost_map.size and (self.node_type[self.ghost_map[:, 1]] == NODE_GHOST).any():
            raise ValueError("ghost source must be a real node")
        for k in range(self.n_levels):
            touched = np.unique(self.edges[self.edge_level == k])
            if touched.size and (self.node_max_level[touched] < k).any():
                raise ValueError(f"node_max_level below level {k} for a touched node")


@dataclass(frozen=True)
class EdgeGeometry:
    """Per-edge geometric features consumed by the encoder.

    rel_pos   (E, m) receiver position minus sender position
    distance  (E,) Euclidean edge length
    angle_x   (E,) direction angle measured against the x axis
    angle_y   (E,) direction angle measured against the y axis
                   (in 3D the two angles live in the (x,y) and (x,z) planes)
    """

    rel_pos: np.ndarray
    distance: np.ndarray
    angle_x: np.ndarray
    angle_y: np.ndarray


def reverse_edge_index(graph: MeshGraph) -> np.ndarray:
    """Index of the reverse edge for every directed edge.

    ``edges[out[e]] == (edges[e,1], edges[e,0])`` with identical level.
    Raises ValueError if any reverse edge is missing or duplicated.
    """
    key = {}
    lev = graph.edge_level
    for e, (s, r) in enumerate(graph.edges):
        k = (int(s), int(r), int(lev[e]))
        if k in key:
            raise ValueError(f"duplicate directed edge {k}")
        key[k] = e
    out = np.empty(graph.n_edges, dtype=np.int64)
    for e, (s, r) in enumerate(graph.edges):
        rev = key.get((int(r), int(s), int(lev[e])))
        if rev is None:
            raise ValueError(f"missing reverse edge for ({s}->{r}, level {lev[e]})")
        out[e] = rev
    return out


def _node_levels_from_edges(n_nodes: int, edges: np.ndarray, edge_level: np.ndarray) -> np.ndarray:
    lvl = np.zeros(n_nodes, dtype=np.int64)
    if len(edges):
        np.maximum.at(lvl, edges[:, 0], edge_level)
        np.maximum.at(lvl, edges[:, 1], edge_level)
    return lvl


def _as_axis_tuple(value, ndim: int, name: str) -> tuple:
    if np.isscalar(value) or isinstance(value, (bool, float, int)):
        return (value,) * ndim
    value = tuple(value)
    if len(value) != ndim:
        raise ValueError(f"{name} must be scalar or length {ndim}")
    return value


def build_grid_graph(dims, spacing, periodic=True) -> MeshGraph:
    """Regular lattice with axis-aligned nearest-neighbor edges (level 0).

    ``dims`` is 2 or 3 positive node counts per axis, each >= 3.  ``spacing``
    and ``periodic`` may be scalars or per-axis.  Boundary nodes are typed
    periodic or Dirichlet according to the periodicity of the axis they sit
    on.  Periodic wraparound is *not* wired here; it is realized later by
    :func:`add_periodic_ghosts`, so domain extent is ``n * dx`` on periodic
    axes and ``(n - 1) * dx`` on clamped ones.
    """
    dims = tuple(int(d) for d in dims)
    ndim = len(dims)
    if ndim not in (2, 3):
        raise ValueError("dims must have 2 or 3 axes")
    if any(d < 3 for d in dims):
        raise ValueError("each grid dimension must be >= 3 (stencils undefined below)")
    spacing = tuple(float(s) for s in _as_axis_tuple(spacing, ndim, "spacing"))
    if any(s <= 0 for s in spacing):
        raise ValueError("spacing must be positive")
    periodic = tuple(bool(p) for p in _as_axis_tuple(periodic, ndim, "periodic"))

    idx = np.stack(np.meshgrid(*[np.arange(d) for d in dims], indexing="ij"), axis=-1)
    idx = idx.reshape(-1, ndim)
    positions = idx * np.asarray(spacing)

    node_type = np.full(len(idx), NODE_INTERIOR, dtype=np.uint8)
    for a in range(ndim):
        on_face = (idx[:, a] == 0) | (idx[:, a] == dims[a] - 1)
        code = NODE_PERIODIC if periodic[a] else NODE_DIRICHLET
        if periodic[a]:
            node_type[on_face] = code
        else:
            # do not demote a node already marked periodic by another axis
            node_type[on_face & (node_type != NODE_PERIODIC)] = code

    strides = np.array([int(np.prod(dims[a + 1:])) for a in range(ndim)])
    senders, receivers = [], []
    for a in range(ndim):
        keep = idx[:, a] < dims[a] - 1
        lo = idx[keep] @ strides
        hi = lo + strides[a]
        senders.extend([lo, hi])
        receivers.extend([hi, lo])
    edges = np.stack([np.concatenate(senders), np.concatenate(receivers)], axis=1)

    extent = np.array(
        [dims[a] * spacing[a] if periodic[a] else (dims[a] - 1) * spacing[a] for a in range(ndim)]
    )
    return MeshGraph(
        positions=_frozen(positions.astype(np.float64)),
        node_type=_frozen(node_type),
        edges=_frozen(edges.astype(np.int64)),
        edge_level=_frozen(np.zeros(len(edges), dtype=np.int64)),
        node_max_level=_frozen(np.zeros(len(idx), dtype=np.int64)),
        ghost_map=_frozen(np.empty((0, 2), dtype=np.int64)),
        domain_extent=_frozen(extent),
    )


def _knn_links(points: np.ndarray, ids: np.ndarray, k: int) -> set:
    """Symmetric k-nearest-neighbor links (as sorted id pairs) over a point set."""
    k_eff = min(k, len(ids) - 1)
    tree = cKDTree(points)
    _, nbr = tree.query(points, k=k_eff + 1)
    nbr = np.atleast_2d(nbr)
    links = set()
    for row, i in enumerate(ids):
        for j in nbr[row, 1:]:
            a, b = int(i), int(ids[j])
            links.add((min(a, b), max(a, b)))
    return links


def build_multimesh(base: MeshGraph, r: float, min_nodes: int = 10,
                    k_neighbors: int | None = None, seed: int = 0) -> MeshGraph:
    """Union of the base mesh with nested, randomly subsampled coarse levels.

    Level k+1 keeps ``floor(r * |V^k|)`` nodes of level k, drawn uniformly
    without replacement with the given seed; coarsening stops once the next
    level would fall below ``min_nodes``.  Coarse edges are rebuilt by
    symmetric k-nearest-neighbor over the surviving node positions (default
    k: 4 in 2D, 6 in 3D).  Ghost nodes never participate in coarsening.
    """
    if not 0.0 < r < 1.0:
        raise ValueError("refinement ratio r must lie strictly between 0 and 1")
    if base.n_levels != 1:
        raise ValueError("base graph must carry level-0 edges only")
    if k_neighbors is None:
        k_neighbors = _DEFAULT_KNN[base.ndim]
    if min_nodes < k_neighbors + 1:
        raise ValueError("min_nodes must be at least k_neighbors + 1")

    rng = np.random.default_rng(seed)
    current = np.flatnonzero(base.node_type != NODE_GHOST)
    senders = [base.edges[:, 0]]
    receivers = [base.edges[:, 1]]
    levels = [base.edge_level]
    k = 0
    while True:
        nxt_size = int(np.floor(r * len(current)))
        if nxt_size < min_nodes:
            break
        k += 1
        current = np.sort(rng.choice(current, size=nxt_size, replace=False))
        links = sorted(_knn_links(base.positions[current], current, k_neighbors))
        pairs = np.array(links, dtype=np.int64).reshape(-1, 2)
        senders.append(np.concatenate([pairs[:, 0], pairs[:, 1]]))
        receivers.append(np.concatenate([pairs[:, 1], pairs[:, 0]]))
        levels.append(np.full(2 * len(pairs), k, dtype=np.int64))

    edges = np.stack([np.concatenate(senders), np.concatenate(receivers)], axis=1)
    edge_level = np.concatenate(levels)
    return MeshGraph(
        positions=base.positions,
        node_type=base.node_type,
        edges=_frozen(edges),
        edge_level=_frozen(edge_level),
        node_max_level=_frozen(_node_levels_from_edges(base.n_nodes, edges, edge_level)),
        ghost_map=base.ghost_map,
        domain_extent=base.domain_extent,
    )


def compute_edge_geometry(graph: MeshGraph) -> EdgeGeometry:
    """Relative position, length and direction angles for every directed edge."""
    if not np.isfinite(graph.positions).all():
        raise ValueError("non-finite node positions")
    rel = graph.positions[graph.edges[:, 1]] - graph.positions[graph.edges[:, 0]]
    dist = np.linalg.norm(rel, axis=1)
    if (dist == 0).any():
        raise ValueError("coincident edge endpoints: direction angle undefined")
    if graph.ndim == 2:
        angle_x = np.arctan2(rel[:, 1], rel[:, 0])
        angle_y = np.arctan2(rel[:, 0], rel[:, 1])
    else:
        angle_x = np.arctan2(rel[:, 1], rel[:, 0])
        angle_y = np.arctan2(rel[:, 2], rel[:, 0])
    return EdgeGeometry(
        rel_pos=_frozen(rel), distance=_frozen(dist),
        angle_x=_frozen(angle_x), angle_y=_frozen(angle_y),
    )


def _lattice_structure(graph: MeshGraph):
    """Recover per-axis sorted coordinates and the index -> node id map."""
    real = np.flatnonzero(graph.node_type != NODE_GHOST)
    pos = graph.positions[real]
    coords, spacing, counts = [], [], []
    for a in range(graph.ndim):
        u = np.unique(pos[:, a])
        if len(u) < 2:
            raise ValueError("degenerate lattice axis")
        d = np.diff(u)
        if not np.allclose(d, d[0], rtol=1e-9, atol=1e-12):
            raise ValueError("node positions do not form a regular lattice")
        coords.append(u)
        spacing.append(float(d[0]))
        counts.append(len(u))
    index_map = {}
    for nid in real:
        key = tuple(int(round(graph.positions[nid, a] / spacing[a])) for a in range(graph.ndim))
        index_map[key] = int(nid)
    if len(index_map) != len(real):
        raise ValueError("positions do not index a lattice uniquely")
    return counts, spacing, index_map


def add_periodic_ghosts(graph: MeshGraph, domain_extent=None) -> MeshGraph:
    """Append a one-cell halo of ghost nodes on every periodic face.

    Each ghost sits at the wrapped position just outside the domain, mirrors
    the real node one period away (recorded in ``ghost_map``), and is joined
    to its lattice-adjacent real nodes by level-0 edges.  Ghost state is never
    computed: callers overwrite it from the source node before each model
    step.  Calling this on a graph without periodic boundaries warns and
    returns the graph unchanged.
    """
    if not (graph.node_type == NODE_PERIODIC).any():
        warnings.warn("graph has no periodic boundary nodes; returning it unchanged")
        return graph
    if graph.ghost_map.size:
        raise ValueError("graph already carries ghost nodes")
    extent = graph.domain_extent if domain_extent is None else np.asarray(domain_extent, float)

    counts, spacing, index_map = _lattice_structure(graph)
    ndim = graph.ndim
    periodic_axis = []
    for a in range(ndim):
        gap = extent[a] - (counts[a] - 1) * spacing[a]
        periodic_axis.append(abs(gap - spacing[a]) < 1e-9 * max(1.0, extent[a]))
    if not any(periodic_axis):
        warnings.warn("domain extent leaves no wraparound gap; returning graph unchanged")
        return graph

    ranges = [range(-1, counts[a] + 1) if periodic_axis[a] else range(counts[a])
              for a in range(ndim)]
    ghost_pos, ghost_src = [], []
    ghost_id_of = {}
    next_id = graph.n_nodes
    for tup in np.ndindex(*[len(r) for r in ranges]):
        idx = tuple(ranges[a][tup[a]] for a in range(ndim))
        if all(0 <= idx[a] < counts[a] for a in range(ndim)):
            continue  # real cell
        src = tuple(idx[a] % counts[a] for a in range(ndim))
        ghost_pos.append([idx[a] * spacing[a] for a in range(ndim)])
        ghost_src.append(index_map[src])
        ghost_id_of[idx] = next_id
        next_id += 1

    senders, receivers = [], []
    for idx, gid in ghost_id_of.items():
        for a in range(ndim):
            for step in (-1, 1):
                nbr = tuple(idx[b] + (step if b == a else 0) for b in range(ndim))
                real_nbr = index_map.get(nbr)
                if real_nbr is not None:
                    senders.extend([gid, real_nbr])
                    receivers.extend([real_nbr, gid])

    n_ghosts = len(ghost_pos)
    positions = np.vstack([graph.positions, np.asarray(ghost_pos, dtype=np.float64)])
    node_type = np.concatenate([graph.node_type,
                                np.full(n_ghosts, NODE_GHOST, dtype=np.uint8)])
    new_edges = np.stack([np.asarray(senders, dtype=np.int64),
                          np.asarray(receivers, dtype=np.int64)], axis=1)
    edges = np.vstack([graph.edges, new_edges])
    edge_level = np.concatenate([graph.edge_level, np.zeros(len(new_edges), dtype=np.int64)])
    ghost_map = np.stack([np.arange(graph.n_nodes, graph.n_nodes + n_ghosts, dtype=np.int64),
                          np.asarray(ghost_src, dtype=np.int64)], axis=1)
    return MeshGraph(
        positions=_frozen(positions),
        node_type=_frozen(node_type),
        edges=_frozen(edges),
        edge_level=_frozen(edge_level),
        node_max_level=_frozen(_node_levels_from_edges(len(positions), edges, edge_level)),
        ghost_map=_frozen(ghost_map),
        domain_extent=graph.domain_extent,
    )


# --- graph container ---------------------------------------------------------
#
# One self-describing file per graph: a single JSON header line, then raw
# little-endian blocks in fixed order:
#   positions float64 (N, m) | node_type uint8 (N,) | edges uint32 (E, 2)
#   | edge_level uint16 (E,) | ghost_map uint32 (G, 2)

def write_graph(graph: MeshGraph, path) -> None:
    header = {
        "format": "meshgraph",
        "version": GRAPH_FORMAT_VERSION,
        "N": graph.n_nodes,
        "m": graph.ndim,
        "E": graph.n_edges,
        "level_count": graph.n_levels,
        "n_ghosts": int(graph.ghost_map.shape[0]),
        "domain_extent": [float(x) for x in graph.domain_extent],
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("utf-8"))
        fh.write(np.ascontiguousarray(graph.positions, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(graph.node_type, dtype="u1").tobytes())
        fh.write(np.ascontiguousarray(graph.edges, dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(graph.edge_level, dtype="<u2").tobytes())
        fh.write(np.ascontiguousarray(graph.ghost_map, dtype="<u4").tobytes())


def read_graph(path) -> MeshGraph:
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise GraphFileError(f"{path}: not a graph container ({exc})") from exc
        if header.get("format") != "meshgraph":
            raise GraphFileError(f"{path}: unknown format {header.get('format')!r}")
        if header.get("version") != GRAPH_FORMAT_VERSION:
            raise GraphFileError(
                f"{path}: unsupported version {header.get('version')!r} "
                f"(expected {GRAPH_FORMAT_VERSION})"
            )
        n, m, e, g = header["N"], header["m"], header["E"], header["n_ghosts"]
        payload = fh.read()
    expected = n * m * 8 + n + e * 2 * 4 + e * 2 + g * 2 * 4
    if len(payload) != expected:
        raise GraphFileError(f"{path}: truncated payload ({len(payload)} of {expected} bytes)")
    off = 0

    def block(dtype, shape):
        nonlocal off
        size = int(np.prod(shape)) * np.dtype(dtype).itemsize
        arr = np.frombuffer(payload[off:off + size], dtype=dtype).reshape(shape)
        off += size
        return arr

    positions = block("<f8", (n, m)).astype(np.float64)
    node_type = block("u1", (n,)).copy()
    edges = block("<u4", (e, 2)).astype(np.int64)
    edge_level = block("<u2", (e,)).astype(np.int64)
    ghost_map = block("<u4", (g, 2)).astype(np.int64)
    return MeshGraph(
        positions=_frozen(positions),
        node_type=_frozen(node_type),
        edges=_frozen(edges),
        edge_level=_frozen(edge_level),
        node_max_level=_frozen(_node_levels_from_edges(n, edges, edge_level)),
        ghost_map=_frozen(ghost_map),
        domain_extent=_frozen(np.asarray(header["domain_extent"], dtype=np.float64)),
    )
