"""Ground-truth trajectory generators: 2D viscous advection and 3D two-species
reaction-diffusion on periodic grids, integrated with classical RK4.

Spatial discretization is 2nd-order central differences for first derivatives
and the standard 5-point (2D) / 7-point (3D) Laplacian, with periodic wrap.
States are stored flat as (N, 2) in C order of the grid axes, matching the
node ordering of :func:`fluxgnn.meshes.build_grid_graph`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BLOWUP_LIMIT = 1e6


class SolverBlowupError(RuntimeError):
    """Raised when the integration leaves the sane-value envelope."""


@dataclass
class BurgersParams:
    """2D viscous Burgers setup.

    Stability guard: the diffusion limit requires dt <= dx^2 / (4 nu) for the
    explicit stencil; the defaults sit far inside it.
    """

    nu: float = 0.01
    nx: int = 32
    ny: int = 32
    dx: float = 1.0 / 32
    dy: float = 1.0 / 32
    dt: float = 2e-4
    n_a: int = 10
    n_b: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError("viscosity must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass
class GrayScottParams:
    """3D two-species reaction-diffusion setup (feed alpha, conversion beta)."""

    Du: float = 0.2
    Dv: float = 0.1
    alpha: float = 0.025
    beta: float = 0.055
    n: int = 16
    dx: float = 2.0
    dt: float = 0.25
    rt: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.Du <= 0 or self.Dv <= 0:
            raise ValueError("diffusion coefficients must be positive")
        if not 0.0 <= self.rt <= 1.0:
            raise ValueError("initial-condition noise ratio rt must lie in [0, 1]")


@dataclass
class Trajectory:
    """Time-ordered physical states on a fixed graph.

    states       (T, N, d) float64
    dt_dataset   time between stored frames
    graph_ref    identifier of the discretization the states live on
    physics_meta parameters and seed that produced the trajectory
    """

    states: np.ndarray
    dt_dataset: float
    graph_ref: str = ""
    physics_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 3 or self.states.shape[0] < 2:
            raise ValueError("states must be (T, N, d) with T >= 2")
        if not np.isfinite(self.states).all():
            raise ValueError("non-finite trajectory values")
        if self.dt_dataset <= 0:
            raise ValueError("dt_dataset must be positive")

    @property
    def n_frames(self) -> int:
        return self.states.shape[0]


def _periodic_d1(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (np.roll(f, -1, axis) - np.roll(f, 1, axis)) / (2.0 * h)


def _periodic_lap(f: np.ndarray, hs) -> np.ndarray:
    out = np.zeros_like(f)
    for a, h in enumerate(hs):
        out += (np.roll(f, -1, a) - 2.0 * f + np.roll(f, 1, a)) / (h * h)
    return out


def burgers_rhs(state: np.ndarray, p: BurgersParams) -> np.ndarray:
    """Time derivative of the flat (N, 2) velocity field (u, v)."""
    state = np.asarray(state, dtype=np.float64)
    if not np.isfinite(state).all():
        raise ValueError("non-finite state")
    u = state[:, 0].reshape(p.nx, p.ny)
    v = state[:, 1].reshape(p.nx, p.ny)
    hs = (p.dx, p.dy)
    du = p.nu * _periodic_lap(u, hs) - u * _periodic_d1(u, 0, p.dx) - v * _periodic_d1(u, 1, p.dy)
    dv = p.nu * _periodic_lap(v, hs) - u * _periodic_d1(v, 0, p.dx) - v * _periodic_d1(v, 1, p.dy)
    return np.stack([du.ravel(), dv.ravel()], axis=1)


def gs_rhs(state: np.ndarray, p: GrayScottParams) -> np.ndarray:
    """Time derivative of the flat (N, 2) concentration field (u, v)."""
    state = np.asarray(state, dtype=np.float64)
    if not np.isfinite(state).all():
        raise ValueError("non-finite state")
    shape = (p.n, p.n, p.n)
    u = state[:, 0].reshape(shape)
    v = state[:, 1].reshape(shape)
    hs = (p.dx, p.dx, p.dx)
    uvv = u * v * v
    du = p.Du * _periodic_lap(u, hs) - uvv + p.alpha * (1.0 - u)
    dv = p.Dv * _periodic_lap(v, hs) + uvv - (p.beta + p.alpha) * v
    return np.stack([du.ravel(), dv.ravel()], axis=1)


def rk4_step(rhs, state: np.ndarray, dt: float) -> np.ndarray:
    """One classical 4th-order Runge-Kutta step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    k1 = rhs(state)
    k2 = rhs(state + 0.5 * dt * k1)
    k3 = rhs(state + 0.5 * dt * k2)
    k4 = rhs(state + dt * k3)
    for name, k in (("k1", k1), ("k2", k2), ("k3", k3), ("k4", k4)):
        if not np.isfinite(k).all():
            raise SolverBlowupError(f"non-finite RK4 stage {name}")
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def burgers_ic(p: BurgersParams) -> np.ndarray:
    """Random truncated Fourier initial field, normalized into roughly [-1, 1].

    Each velocity component uses an independent series over modes
    (a, b) in [0, n_a] x [0, n_b] with phase 2*pi*((a - n_a/2) x + (b - n_b/2) y)
    and i.i.d. standard-normal cosine/sine coefficients, then is rescaled to
    (2 * field / max|field| + c) / 3 with c uniform on [-1, 1].
    """
    seed = p.seed
    for _ in range(8):
        rng = np.random.default_rng(seed)
        x = np.arange(p.nx)[:, None] * p.dx
        y = np.arange(p.ny)[None, :] * p.dy
        fields = []
        consts = []
        for _component in range(2):
            lam = rng.standard_normal((p.n_a + 1, p.n_b + 1))
            gam = rng.standard_normal((p.n_a + 1, p.n_b + 1))
            a = np.arange(p.n_a + 1)[:, None, None, None] - p.n_a / 2.0
            b = np.arange(p.n_b + 1)[None, :, None, None] - p.n_b / 2.0
            phase = 2.0 * np.pi * (a * x[None, None] + b * y[None, None])
            series = (lam[..., None, None] * np.cos(phase)
                      + gam[..., None, None] * np.sin(phase)).sum(axis=(0, 1))
            fields.append(series)
        consts = rng.uniform(-1.0, 1.0, size=2)
        peaks = [np.abs(f).max() for f in fields]
        if all(pk > 0 for pk in peaks):
            out = [(2.0 * f / pk + c) / 3.0 for f, pk, c in zip(fields, peaks, consts)]
            return np.stack([out[0].ravel(), out[1].ravel()], axis=1)
        seed += 1  # degenerate zero field: resample
    raise RuntimeError("could not draw a nonzero initial field")


def gs_ic(p: GrayScottParams) -> np.ndarray:
    """Noisy uniform initial concentrations: u = (1 - rt) + rt*N(0,1), v = rt*N(0,1)."""
    rng = np.random.default_rng(p.seed)
    n3 = p.n ** 3
    u = (1.0 - p.rt) + p.rt * rng.standard_normal(n3)
    v = p.rt * rng.standard_normal(n3)
    return np.stack([u, v], axis=1)


def simulate(params, ic: np.ndarray | None, total_steps: int, save_every: int) -> Trajectory:
    """Integrate at the solver step, recording every ``save_every``-th state.

    The initial condition is frame 0, so the result has
    ``total_steps // save_every + 1`` frames and dataset step
    ``save_every * params.dt``.  Aborts with the failing step index if any
    value exceeds the blow-up limit.
    """
    if total_steps % save_every != 0:
        raise ValueError("total_steps must be divisible by save_every")
    if isinstance(params, BurgersParams):
        rhs = lambda s: burgers_rhs(s, params)
        meta = {"system": "burgers2d", "nu": params.nu, "seed": params.seed}
        default_ic = burgers_ic
    elif isinstance(params, GrayScottParams):
        rhs = lambda s: gs_rhs(s, params)
        meta = {"system": "grayscott3d", "Du": params.Du, "Dv": params.Dv,
                "alpha": params.alpha, "beta": params.beta, "rt": params.rt,
                "seed": params.seed}
        default_ic = gs_ic
    else:
        raise TypeError(f"unknown solver params {type(params).__name__}")

    state = default_ic(params) if ic is None else np.asarray(ic, dtype=np.float64)
    frames = [state.copy()]
    for step in range(1, total_steps + 1):
        try:
            state = rk4_step(rhs, state, params.dt)
        except SolverBlowupError as exc:
            raise SolverBlowupError(f"blow-up at solver step {step}: {exc}") from exc
        if np.abs(state).max() > BLOWUP_LIMIT:
            raise SolverBlowupError(f"blow-up at solver step {step}: |state| > {BLOWUP_LIMIT:g}")
        if step % save_every == 0:
            frames.append(state.copy())
    return Trajectory(
        states=np.stack(frames),
        dt_dataset=save_every * params.dt,
        physics_meta=meta,
    )
