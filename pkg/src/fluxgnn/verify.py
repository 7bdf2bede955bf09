"""Self-contained invariant suite: the checks a fresh checkout must pass.

Each check returns a :class:`CheckResult`; :func:`run_all` executes the whole
battery.  The checks are independent oracles: they recompute expected
quantities from first principles (pair cancellation, brute-force inner
products, central differences, step-halving ratios) rather than trusting the
code paths they certify.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import calculus
from .meshes import MeshGraph, _frozen, _knn_links, build_grid_graph, build_multimesh
from .model import GraphTensors, ModelConfig, build_model, graph_tensors
from .gradcheck import gradient_check
from .solvers import BurgersParams, burgers_ic, burgers_rhs, rk4_step

CONSERVATION_TOL = {torch.float64: 1e-12, torch.float32: 1e-6}
ADJOINTNESS_TOL = 1e-12
GRADIENT_TOL = 1e-5
RK4_MIN_ORDER = 3.8


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    value: float | None = None


def random_knn_graph(rng: np.random.Generator, n_min: int = 8, n_max: int = 64,
                     k: int = 3) -> MeshGraph:
    """Random planar point cloud wired by symmetric k-nearest-neighbor."""
    n = int(rng.integers(n_min, n_max + 1))
    positions = rng.uniform(0.0, 1.0, size=(n, 2))
    ids = np.arange(n)
    links = sorted(_knn_links(positions, ids, k))
    pairs = np.array(links, dtype=np.int64)
    edges = np.concatenate([pairs, pairs[:, ::-1]], axis=0)
    return MeshGraph(
        positions=_frozen(positions),
        node_type=_frozen(np.zeros(n, dtype=np.uint8)),
        edges=_frozen(edges),
        edge_level=_frozen(np.zeros(len(edges), dtype=np.int64)),
        node_max_level=_frozen(np.zeros(n, dtype=np.int64)),
        ghost_map=_frozen(np.empty((0, 2), dtype=np.int64)),
        domain_extent=_frozen(np.ones(2)),
    )


def _default_model_builder(variant: str, seed: int):
    torch.manual_seed(seed)
    cfg = ModelConfig(state_channels=2, space_dim=2, latent_width=16, layers=3,
                      variant=variant)
    return build_model(cfg)


def check_conservation(n_graphs: int = 100, seed: int = 0,
                       model_builder=_default_model_builder) -> CheckResult:
    """Global sum of the antisymmetric edge messages vanishes at every layer.

    Oracle: pair cancellation.  Tested for the variants with a unit edge gate
    in both float64 and float32, on random graphs with random parameters and
    random inputs.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for case in range(n_graphs):
        graph = random_knn_graph(rng)
        variant = ("full", "minus")[case % 2]
        dtype = (torch.float64, torch.float32)[case % 4 // 2]
        model = model_builder(variant, seed=case)
        if dtype == torch.float64:
            model = model.double()
        gt = graph_tensors(graph, dtype)
        state = torch.from_numpy(rng.standard_normal((graph.n_nodes, 2))).to(dtype)
        with torch.no_grad():
            _, internals = model.forward_step(gt, state, collect_internals=True)
        for layer_idx, info in enumerate(internals):
            e_star = info["e_star"]
            skew = e_star[gt.reverse] - e_star
            total = skew.sum(dim=0).abs().max().item()
            scale = max(e_star.abs().sum().item(), 1e-30)
            rel = total / scale
            worst = max(worst, rel / CONSERVATION_TOL[dtype])
            if rel > CONSERVATION_TOL[dtype]:
                return CheckResult(
                    "conservation", False,
                    f"graph {case} ({variant}, {dtype}): layer {layer_idx} "
                    f"skew sum rel {rel:.3e} exceeds {CONSERVATION_TOL[dtype]:.0e}",
                    value=rel)
    return CheckResult("conservation", True,
                       f"{n_graphs} graphs, worst margin {worst:.3e} of tolerance",
                       value=worst)


def check_adjointness(n_cases: int = 100, seed: int = 1) -> CheckResult:
    """<grad f, F> equals <f, adjoint F> for random fields and weights."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for case in range(n_cases):
        graph = random_knn_graph(rng, n_min=6, n_max=24)
        d = int(rng.integers(1, 4))
        f = rng.standard_normal((graph.n_nodes, d))
        F = rng.standard_normal((graph.n_edges, d))
        w = rng.uniform(0.0, 2.0, size=graph.n_edges)
        lhs = float(np.sum(calculus.weighted_gradient(f, graph, w) * F))
        res = calculus.adjointness_residual(f, F, graph, w)
        rel = res / max(abs(lhs), 1e-30)
        worst = max(worst, rel)
        if rel > ADJOINTNESS_TOL:
            return CheckResult("adjointness", False,
                               f"case {case}: residual rel {rel:.3e}", value=rel)
    return CheckResult("adjointness", True,
                       f"{n_cases} cases, worst residual rel {worst:.3e}", value=worst)


def check_gradients(epsilon: float = 1e-5, seed: int = 2) -> CheckResult:
    """Autograd gradients agree with central differences on a tiny model."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    graph = build_grid_graph((4, 3), spacing=0.25, periodic=False)
    cfg = ModelConfig(state_channels=2, space_dim=2, latent_width=8, layers=2,
                      variant="full")
    model = build_model(cfg).double()
    gt = graph_tensors(graph, torch.float64)
    state = torch.from_numpy(rng.standard_normal((graph.n_nodes, 2)))
    target = torch.from_numpy(rng.standard_normal((graph.n_nodes, 2)))
    report = gradient_check(model, gt, state, target, epsilon=epsilon)
    if report.passed(GRADIENT_TOL):
        return CheckResult("gradients", True,
                           f"max rel error {report.max_error():.3e} over "
                           f"{len(report.groups)} groups", value=report.max_error())
    bad = ", ".join(report.failures(GRADIENT_TOL))
    return CheckResult("gradients", False,
                       f"groups over tolerance: {bad}", value=report.max_error())


def check_rk4_order(dts=(4e-4, 2e-4, 1e-4), duration: float = 0.01,
                    seed: int = 3) -> CheckResult:
    """Observed convergence order of the time integrator by step halving.

    Integrates the same initial field to a fixed time with each step size;
    the ratio of successive solution differences estimates 2^order.
    """
    p = BurgersParams(nx=32, ny=32, dx=1 / 32, dy=1 / 32, seed=seed)
    ic = burgers_ic(p)
    finals = []
    for dt in dts:
        steps = round(duration / dt)
        if abs(steps * dt - duration) > 1e-12:
            raise ValueError("dts must divide the duration")
        state = ic.copy()
        pdt = BurgersParams(nx=32, ny=32, dx=1 / 32, dy=1 / 32, dt=dt, seed=seed)
        rhs = lambda s: burgers_rhs(s, pdt)
        for _ in range(steps):
            state = rk4_step(rhs, state, dt)
        finals.append(state)
    e01 = np.linalg.norm(finals[0] - finals[1])
    e12 = np.linalg.norm(finals[1] - finals[2])
    order = float(np.log2(e01 / e12))
    passed = order >= RK4_MIN_ORDER
    return CheckResult("rk4_order", passed,
                       f"observed order {order:.3f} (threshold {RK4_MIN_ORDER})",
                       value=order)


def check_multimesh(seed: int = 4) -> CheckResult:
    """Level sizes follow floor(r |V^k|), levels nest, and the build is seeded."""
    base = build_grid_graph((50, 50), spacing=1 / 50, periodic=True)
    g1 = build_multimesh(base, r=0.1, min_nodes=10, seed=seed)
    g2 = build_multimesh(base, r=0.1, min_nodes=10, seed=seed)
    sizes = g1.level_node_counts()
    if sizes != [2500, 250, 25]:
        return CheckResult("multimesh", False, f"level sizes {sizes} != [2500, 250, 25]")
    for k in range(1, g1.n_levels):
        upper = set(np.flatnonzero(g1.node_max_level >= k - 1))
        lower = set(np.flatnonzero(g1.node_max_level >= k))
        if not lower < upper:
            return CheckResult("multimesh", False, f"level {k} is not strictly nested")
    if not np.array_equal(g1.edges, g2.edges) or not np.array_equal(
            g1.edge_level, g2.edge_level):
        return CheckResult("multimesh", False, "same seed produced different edges")
    return CheckResult("multimesh", True,
                       f"levels {sizes}, strictly nested, seed-deterministic")


def run_all(fast: bool = False) -> list[CheckResult]:
    """Run the whole battery; ``fast`` trims the case counts for smoke use."""
    n = 20 if fast else 100
    return [
        check_conservation(n_graphs=n),
        check_adjointness(n_cases=n),
        check_gradients(),
        check_rk4_order(),
        check_multimesh(),
    ]
