"""Discrete calculus on directed graphs: weighted gradient, adjoint, divergence.

These operators are the reference semantics for the network's conservative
message passing and double as its test oracle.  Node fields are (N, d) arrays,
edge fields (E, d), weights (E,) nonnegative per directed edge.  All functions
are pure and operate in float64.

Convention notes, fixed once here:

* The inner products on node and edge fields are plain elementwise sums with
  no measure, so the exact adjoint of the weighted gradient carries no 1/2
  (see :func:`adjoint_gradient`).
* :func:`divergence` is the node-update form used by the continuity equation
  on a graph and keeps its 1/2; it equals half the adjoint.
"""

from __future__ import annotations

import numpy as np

from .meshes import MeshGraph, reverse_edge_index


def _check_node_field(f: np.ndarray, graph: MeshGraph) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    if f.shape[0] != graph.n_nodes:
        raise ValueError(f"node field has {f.shape[0]} rows, graph has {graph.n_nodes} nodes")
    return f


def _check_edge_field(F: np.ndarray, graph: MeshGraph) -> np.ndarray:
    F = np.asarray(F, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    if F.shape[0] != graph.n_edges:
        raise ValueError(f"edge field has {F.shape[0]} rows, graph has {graph.n_edges} edges")
    return F


def _check_weights(w: np.ndarray, graph: MeshGraph) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim == 0:
        w = np.full(graph.n_edges, float(w))
    if w.shape != (graph.n_edges,):
        raise ValueError("weights must be one value per directed edge")
    if (w < 0).any():
        raise ValueError("edge weights must be nonnegative")
    return w


def weighted_gradient(f: np.ndarray, graph: MeshGraph, w: np.ndarray) -> np.ndarray:
    """Edge field sqrt(w_ij) * (f_j - f_i) for every directed edge (i, j)."""
    f = _check_node_field(f, graph)
    w = _check_weights(w, graph)
    send, recv = graph.edges[:, 0], graph.edges[:, 1]
    return np.sqrt(w)[:, None] * (f[recv] - f[send])


def adjoint_gradient(F: np.ndarray, graph: MeshGraph, w: np.ndarray) -> np.ndarray:
    """Exact adjoint of :func:`weighted_gradient` under plain-sum inner products.

    out(i) = sum_{j in N_i} ( sqrt(w_ji) F_ji - sqrt(w_ij) F_ij )
    """
    F = _check_edge_field(F, graph)
    w = _check_weights(w, graph)
    rev = reverse_edge_index(graph)
    sw = np.sqrt(w)[:, None]
    contrib = sw[rev] * F[rev] - sw * F
    out = np.zeros((graph.n_nodes, F.shape[1]))
    np.add.at(out, graph.edges[:, 0], contrib)
    return out


def divergence(F: np.ndarray, graph: MeshGraph, w: np.ndarray) -> np.ndarray:
    """Net per-node influx, the node-update form of the conservation law.

    out(i) = 1/2 sum_{j in N_i} ( sqrt(w_ji) F_ji - sqrt(w_ij) F_ij )

    For symmetric weights the entries telescope: the global sum is zero for
    any edge field.  Requires the reverse of every edge to be present.
    """
    return 0.5 * adjoint_gradient(F, graph, w)


def adjointness_residual(f: np.ndarray, F: np.ndarray, graph: MeshGraph,
                         w: np.ndarray) -> float:
    """| <grad_w f, F>_E  -  <f, adjoint_w F>_V |  (plain sums; ~0 in exact math)."""
    f = _check_node_field(f, graph)
    F = _check_edge_field(F, graph)
    lhs = float(np.sum(weighted_gradient(f, graph, w) * F))
    rhs = float(np.sum(f * adjoint_gradient(F, graph, w)))
    return abs(lhs - rhs)


def sym_skew_decompose(F: np.ndarray, graph: MeshGraph) -> tuple[np.ndarray, np.ndarray]:
    """Split an edge field into skew-symmetric and symmetric parts.

    skew(i,j) = F_ji - F_ij   (flips sign under edge reversal)
    sym(i,j)  = F_ji + F_ij   (invariant under edge reversal)

    and F_ji reconstructs exactly as (skew + sym) / 2.
    """
    F = _check_edge_field(F, graph)
    rev = reverse_edge_index(graph)
    return F[rev] - F, F[rev] + F


def global_skew_sum(skew: np.ndarray, graph: MeshGraph) -> np.ndarray:
    """Sum of a skew-symmetric edge field over all directed edges, per channel.

    Zero up to floating point for any input that genuinely flips sign under
    edge reversal: every undirected link contributes two exactly cancelling
    terms.  This is the conservation certificate for the network's
    antisymmetric message branch.
    """
    skew = _check_edge_field(skew, graph)
    if skew.shape[0] == 0:
        return np.zeros(skew.shape[1] if skew.ndim > 1 else 1)
    return skew.sum(axis=0)
