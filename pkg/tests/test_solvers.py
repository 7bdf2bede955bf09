import numpy as np
import pytest

from fluxgnn.solvers import (BurgersParams, GrayScottParams, SolverBlowupError,
                             Trajectory, burgers_ic, burgers_rhs, gs_ic, gs_rhs,
                             rk4_step, simulate)


def small_burgers(**kw):
    defaults = dict(nx=16, ny=16, dx=1 / 16, dy=1 / 16, dt=2e-4, seed=1)
    defaults.update(kw)
    return BurgersParams(**defaults)


class TestBurgersRhs:
    def test_constant_field_is_stationary(self):
        p = small_burgers()
        state = np.tile([0.4, -0.7], (p.nx * p.ny, 1))
        np.testing.assert_allclose(burgers_rhs(state, p), 0.0, atol=1e-14)

    def test_discrete_laplacian_symbol_at_peak(self):
        # u = sin(2 pi x): at the peak the advection terms vanish and the rate
        # equals nu * lambda_d * u with the exact 5-point stencil eigenvalue
        # lambda_d = -4 sin^2(pi dx) / dx^2, itself -(2 pi)^2 + O(dx^2).
        p = small_burgers()
        x = (np.arange(p.nx) * p.dx)[:, None] * np.ones((1, p.ny))
        u = np.sin(2 * np.pi * x)
        state = np.stack([u.ravel(), np.zeros(p.nx * p.ny)], axis=1)
        rate = burgers_rhs(state, p)[:, 0].reshape(p.nx, p.ny)
        peak = p.nx // 4  # x = 0.25
        lam_d = -4.0 * np.sin(np.pi * p.dx) ** 2 / p.dx ** 2
        assert u[peak, 0] == pytest.approx(1.0)
        assert rate[peak, 0] == pytest.approx(p.nu * lam_d, rel=1e-12)
        assert lam_d == pytest.approx(-(2 * np.pi) ** 2, rel=(np.pi * p.dx) ** 2)

    def test_single_node_perturbation_support(self):
        p = small_burgers()
        state = np.zeros((p.nx * p.ny, 2))
        center = (p.nx // 2) * p.ny + p.ny // 2
        state[center, 0] = 1.0
        rate = np.abs(burgers_rhs(state, p)).sum(axis=1).reshape(p.nx, p.ny)
        touched = np.argwhere(rate > 0)
        ci, cj = p.nx // 2, p.ny // 2
        for i, j in touched:
            assert abs(i - ci) + abs(j - cj) <= 1  # 5-point stencil support

    def test_nonfinite_state_rejected(self):
        p = small_burgers()
        state = np.zeros((p.nx * p.ny, 2))
        state[3, 1] = np.nan
        with pytest.raises(ValueError):
            burgers_rhs(state, p)


class TestGrayScottRhs:
    def test_fixed_point(self):
        p = GrayScottParams(n=6)
        state = np.tile([1.0, 0.0], (p.n ** 3, 1))
        np.testing.assert_array_equal(gs_rhs(state, p), 0.0)

    def test_empty_state_reaction(self):
        p = GrayScottParams(n=6)
        state = np.zeros((p.n ** 3, 2))
        rate = gs_rhs(state, p)
        np.testing.assert_allclose(rate[:, 0], p.alpha)
        np.testing.assert_array_equal(rate[:, 1], 0.0)

    def test_uniform_state_has_no_diffusion(self):
        p = GrayScottParams(n=6)
        u, v = 0.37, 0.21
        state = np.tile([u, v], (p.n ** 3, 1))
        rate = gs_rhs(state, p)
        np.testing.assert_allclose(rate[:, 0], -u * v * v + p.alpha * (1 - u), rtol=1e-13)
        np.testing.assert_allclose(rate[:, 1], u * v * v - (p.beta + p.alpha) * v,
                                   rtol=1e-13)


class TestRK4:
    def test_linear_ode_matches_exponential_truncation(self):
        lam, dt = -0.83, 0.37
        y0 = np.array([[2.0, -1.5]])
        y1 = rk4_step(lambda y: lam * y, y0, dt)
        z = lam * dt
        growth = 1 + z + z ** 2 / 2 + z ** 3 / 6 + z ** 4 / 24
        np.testing.assert_allclose(y1, y0 * growth, rtol=1e-14)

    def test_zero_rhs_identity(self):
        y0 = np.random.default_rng(0).standard_normal((5, 2))
        np.testing.assert_array_equal(rk4_step(lambda y: 0.0 * y, y0, 0.1), y0)

    def test_bad_dt_rejected(self):
        with pytest.raises(ValueError):
            rk4_step(lambda y: y, np.zeros((2, 2)), 0.0)

    def test_convergence_order_against_fine_reference(self):
        # error vs a dt/8 reference shrinks ~16x when dt halves
        p = small_burgers(nx=32, ny=32, dx=1 / 32, dy=1 / 32)
        ic = burgers_ic(p)
        duration = 0.008

        def run(dt):
            state = ic.copy()
            pp = small_burgers(nx=32, ny=32, dx=1 / 32, dy=1 / 32, dt=dt)
            for _ in range(round(duration / dt)):
                state = rk4_step(lambda s: burgers_rhs(s, pp), state, dt)
            return state

        ref = run(5e-5)  # dt/8 of the coarsest run
        err_coarse = np.linalg.norm(run(4e-4) - ref)
        err_fine = np.linalg.norm(run(2e-4) - ref)
        order = np.log2(err_coarse / err_fine)
        assert order >= 3.8


class TestInitialConditions:
    def test_burgers_ic_bounded(self):
        field = burgers_ic(small_burgers(seed=3))
        assert np.abs(field).max() <= 1.0 + 1e-12  # (2 + |c|)/3 with |c| <= 1

    def test_burgers_ic_deterministic(self):
        a = burgers_ic(small_burgers(seed=11))
        b = burgers_ic(small_burgers(seed=11))
        np.testing.assert_array_equal(a, b)
        c = burgers_ic(small_burgers(seed=12))
        assert not np.array_equal(a, c)

    def test_burgers_ic_single_mode_constant(self):
        field = burgers_ic(small_burgers(n_a=0, n_b=0, seed=5))
        np.testing.assert_allclose(field[:, 0], field[0, 0], atol=1e-15)
        np.testing.assert_allclose(field[:, 1], field[0, 1], atol=1e-15)

    def test_gs_ic_noise_free(self):
        field = gs_ic(GrayScottParams(n=6, rt=0.0, seed=0))
        np.testing.assert_array_equal(field[:, 0], 1.0)
        np.testing.assert_array_equal(field[:, 1], 0.0)

    def test_gs_ic_full_noise_is_standard_normal_draw(self):
        p = GrayScottParams(n=6, rt=1.0, seed=4)
        field = gs_ic(p)
        rng = np.random.default_rng(4)
        lam_u = rng.standard_normal(p.n ** 3)
        np.testing.assert_array_equal(field[:, 0], lam_u)

    def test_gs_ic_moments(self):
        # pooled over seeds: E[u0] = 1 - rt = 0.9, Var[u0] = rt^2 = 0.01
        samples = np.concatenate(
            [gs_ic(GrayScottParams(n=16, rt=0.1, seed=s))[:, 0] for s in range(8)])
        assert samples.mean() == pytest.approx(0.9, abs=5e-4)
        assert samples.var() == pytest.approx(0.01, abs=5e-4)


class TestSimulate:
    def test_frame_counting(self):
        p = GrayScottParams(n=6, rt=0.1, seed=0)
        traj = simulate(p, None, total_steps=40, save_every=5)
        assert traj.n_frames == 9
        assert traj.dt_dataset == pytest.approx(5 * p.dt)

    def test_divisibility_required(self):
        with pytest.raises(ValueError):
            simulate(GrayScottParams(n=6), None, total_steps=41, save_every=5)

    def test_gs_fixed_point_preserved(self):
        p = GrayScottParams(n=6, rt=0.0, seed=0)
        traj = simulate(p, None, total_steps=100, save_every=10)
        target = np.tile([1.0, 0.0], (p.n ** 3, 1))
        for frame in traj.states:
            np.testing.assert_allclose(frame, target, atol=1e-14)

    def test_blowup_reports_step(self):
        p = small_burgers(dt=50.0)  # far beyond the stability limit
        with pytest.raises(SolverBlowupError, match="step"):
            simulate(p, None, total_steps=50, save_every=5)

    def test_shift_equivariance(self):
        p = small_burgers(seed=9)
        ic = burgers_ic(p)
        grid = ic.reshape(p.nx, p.ny, 2)
        shifted = np.roll(grid, 1, axis=0).reshape(-1, 2)
        a = simulate(p, ic, total_steps=10, save_every=2)
        b = simulate(p, shifted, total_steps=10, save_every=2)
        for fa, fb in zip(a.states, b.states):
            rolled = np.roll(fa.reshape(p.nx, p.ny, 2), 1, axis=0).reshape(-1, 2)
            np.testing.assert_allclose(fb, rolled, atol=1e-12)

    def test_determinism(self):
        p = small_burgers(seed=21)
        a = simulate(p, None, total_steps=20, save_every=5)
        b = simulate(p, None, total_steps=20, save_every=5)
        np.testing.assert_array_equal(a.states, b.states)


class TestTrajectoryType:
    def test_validation(self):
        with pytest.raises(ValueError):
            Trajectory(states=np.zeros((1, 4, 2)), dt_dataset=0.1)
        with pytest.raises(ValueError):
            Trajectory(states=np.zeros((3, 4, 2)), dt_dataset=0.0)
        bad = np.zeros((3, 4, 2))
        bad[1, 2, 0] = np.inf
        with pytest.raises(ValueError):
            Trajectory(states=bad, dt_dataset=0.1)
