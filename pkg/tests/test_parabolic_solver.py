import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from csf_lab import flows
from csf_lab.parabolic_solver import (
    DirichletSpec,
    GraphFrame,
    Grid1D,
    H_residual,
    NewtonDiverged,
    Operator,
    Orientation,
    Status,
    V_residual,
    _Discretisation,
    discrete_rate,
    eval_H,
    eval_V,
    frame_gradient,
    residual_operator,
    scaled_atan,
    solve_dirichlet,
    step_implicit,
)
from csf_lab.warped_metric import WarpingFunction


def grim_spec(metric, per_unit, dt):
    grid = Grid1D.with_resolution(-1.0, 1.0, per_unit, dt)
    edge = -math.log(math.cos(1.0))
    return DirichletSpec(
        Operator.V, metric, grid, lambda x: -np.log(np.cos(x)), lambda t: t + edge, lambda t: t + edge
    )


def smooth_spec(metric, op, lo, hi, n, dt, u0):
    grid = Grid1D(lo, hi, n, dt)
    x = grid.nodes
    v = u0(x)
    return DirichletSpec(op, metric, grid, u0, lambda t: float(v[0]), lambda t: float(v[-1]))


class TestTypes:
    def test_grid(self):
        g = Grid1D.with_resolution(-2, 2, 40, 1e-3)
        assert g.n == 161 and g.h == pytest.approx(0.025)
        assert 0.0 in g.nodes
        for bad in [(1, 0, 5, 0.1), (0, 1, 2, 0.1), (0, 1, 5, 0.0)]:
            with pytest.raises(ValueError):
                Grid1D(*bad)

    def test_frame(self):
        g = Grid1D(0, 1, 5, 0.1)
        f = GraphFrame(g, [0, 1, 2, 3, 4], 0.0)
        assert f.orientation is Orientation.VERTICAL
        with pytest.raises(ValueError):
            f.values[0] = 3.0
        with pytest.raises(ValueError):
            GraphFrame(g, [0, 1, 2], 0.0)
        with pytest.raises(ValueError):
            GraphFrame(g, [0, 1, np.nan, 3, 4], 0.0)

    def test_spec_compatibility(self, flat):
        g = Grid1D(0, 1, 5, 0.1)
        s = DirichletSpec(Operator.V, flat, g, lambda x: x, lambda t: 0.0, lambda t: 2.0)
        with pytest.raises(ValueError, match="boundary"):
            s.initial_frame()


class TestPointwiseOperators:
    def test_grim_reaper_identity_symbolic(self):
        x = sp.symbols("x")
        p, q = sp.tan(x), sp.diff(sp.tan(x), x)
        mu = 1 / (1 + p**2)
        assert sp.simplify(mu * q - 1) == 0

    def test_eval_V_examples(self, blooming, flat):
        x = np.linspace(-1.3, 1.3, 11)
        assert np.allclose(eval_V(flat, x, np.tan(x), 1 / np.cos(x) ** 2), 1.0, atol=1e-13)
        assert eval_V(blooming, 2.5, 0.0, 0.0) == 0.0
        assert eval_V(blooming, 0.5, 4.0, 0.0) == 0.0

    def test_eval_H_examples(self, blooming, flat):
        assert eval_H(blooming, 0.7, 0.0, 0.0) == 0.0
        assert eval_H(blooming, 10.0, 0.0, 0.0) == -100.0
        assert eval_H(flat, 0.3, 1.0, 2.0) == pytest.approx(1.0)

    @settings(max_examples=200, deadline=None)
    @given(x=st.floats(-2.8, 2.8), p=st.floats(0.05, 20), q=st.floats(-30, 30), v=st.floats(-5, 5))
    def test_gauges_agree(self, x, p, q, v):
        # for y(x, t) increasing, its inverse x(y, t) has x_y = 1/p, x_yy = -q/p^3,
        # x_t = -y_t/p; the horizontal residual is then -V/p
        m = WarpingFunction.blooming()
        rv = V_residual(m, x, v, p, q)
        rh = H_residual(m, x, -v / p, 1 / p, -q / p**3)
        assert rh == pytest.approx(-rv / p, rel=1e-9, abs=1e-9 * (1 + abs(v) + abs(q)))

    @settings(max_examples=200, deadline=None)
    @given(p=st.floats(-1e6, 1e6), phi=st.floats(0, 800))
    def test_scaled_atan(self, p, phi):
        got = float(scaled_atan(p, phi))
        ref = float(math.exp(-phi) * math.atan(math.exp(phi) * p)) if phi < 300 else None
        assert math.isfinite(got)
        assert abs(got) <= math.pi / 2 * math.exp(-phi) + 1e-300
        if ref is not None:
            assert got == pytest.approx(ref, rel=1e-12, abs=1e-300)


class TestDiscretisation:
    @pytest.mark.parametrize("op,base", [(Operator.V, 0.0), (Operator.H, 2.5), (Operator.H, -1.7)])
    def test_jacobian_against_finite_differences(self, blooming, rng, op, base):
        n = 31
        grid = Grid1D(0.5 if op is Operator.V else 0.0, 3.0 if op is Operator.V else 1.0, n, 1e-3)
        u = base + np.cumsum(rng.uniform(-0.2, 0.5, n)) * 0.2
        spec = DirichletSpec(op, blooming, grid, lambda x: u, lambda t: u[0], lambda t: u[-1])
        disc = _Discretisation(spec)
        F, (lo, di, up) = disc.rate(u, jacobian=True)
        J = np.zeros((n - 2, n))
        e = 1e-6
        for j in range(n):
            a, b = u.copy(), u.copy()
            a[j] += e
            b[j] -= e
            J[:, j] = (disc.rate(a) - disc.rate(b)) / (2 * e)
        r = np.arange(n - 2)
        scale = 1 + np.abs(J).max()
        assert np.max(np.abs(J[r, r + 1] - di)) < 1e-6 * scale
        assert np.max(np.abs(J[r, r + 2] - up)) < 1e-6 * scale
        assert np.max(np.abs(J[r, r] - lo)) < 1e-6 * scale

    @pytest.mark.parametrize("op", [Operator.V, Operator.H])
    def test_monotone_scheme(self, blooming, rng, op):
        # off-diagonal Jacobian entries are nonnegative: the discrete comparison principle
        for _ in range(20):
            n = 41
            grid = Grid1D(-3, 3, n, 1e-3) if op is Operator.V else Grid1D(0, 1, n, 1e-3)
            if op is Operator.V:
                u = rng.normal(0, 1, n).cumsum() * 0.3
            else:
                # the midpoint-phi flux adds an O(phi' p / h) off-diagonal part; monotone
                # while the cell Peclet number stays below one, which holds here
                u = 1.0 + 0.5 * grid.nodes + 0.02 * rng.normal(0, 1, n).cumsum()
            spec = DirichletSpec(op, blooming, grid, lambda x: u, lambda t: u[0], lambda t: u[-1])
            _, (lo, _, up) = _Discretisation(spec).rate(u, jacobian=True)
            assert lo.min() >= -1e-12 * (1 + np.abs(lo).max())
            assert up.min() >= -1e-12 * (1 + np.abs(up).max())

    def test_discrete_rate_second_order_when_flat(self, flat):
        errs = []
        for n in (41, 81, 161):
            x = np.linspace(-1, 1, n)
            u = -np.log(np.cos(x))
            spec = DirichletSpec(Operator.V, flat, Grid1D(-1, 1, n, 1e-3), lambda z: u, lambda t: u[0],
                                 lambda t: u[-1])
            errs.append(np.max(np.abs(discrete_rate(spec, u) - 1.0)))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(orders > 1.85)


class TestStep:
    def test_constant_is_fixed_point(self, blooming):
        grid = Grid1D(0.0, 0.9, 19, 1e-2)
        spec = DirichletSpec(Operator.V, blooming, grid, lambda x: np.full_like(x, 0.3), lambda t: 0.3,
                             lambda t: 0.3)
        f1 = step_implicit(spec.initial_frame(), spec)
        assert np.array_equal(f1.values, spec.initial_frame().values)
        assert f1.t == pytest.approx(1e-2)

    def test_grim_reaper_step(self, flat):
        spec = grim_spec(flat, 100, 1e-3)
        f0 = spec.initial_frame()
        f1 = step_implicit(f0, spec)
        h = spec.grid.h
        assert np.max(np.abs(f1.values - f0.values - 1e-3)) < 1e-3 + h**2

    def test_matches_fine_explicit_euler(self, blooming):
        dt = 1e-2
        u0 = lambda x: 0.4 * np.sin(2 * x) + 0.1 * x  # noqa: E731
        spec = smooth_spec(blooming, Operator.V, -1.5, 1.5, 61, dt, u0)
        f1 = step_implicit(spec.initial_frame(), spec)
        u = spec.initial_frame().values.copy()
        k = 1000
        for _ in range(k):
            u[1:-1] += dt / k * discrete_rate(spec, u)
        assert np.max(np.abs(f1.values - u)) <= 5 * dt**2

    def test_grid_mismatch(self, flat):
        spec = grim_spec(flat, 20, 1e-3)
        other = GraphFrame(Grid1D(-1, 1, 5, 1e-3), np.zeros(5), 0.0)
        with pytest.raises(ValueError):
            step_implicit(other, spec)

    def test_newton_failure_raises(self):
        bad = WarpingFunction.custom(lambda x: np.zeros_like(x), lambda x: np.full_like(x, np.nan),
                                     lambda x: np.zeros_like(x))
        spec = smooth_spec(bad, Operator.V, 0, 1, 11, 1e-3, lambda x: x)
        with pytest.raises(NewtonDiverged):
            step_implicit(spec.initial_frame(), spec)
        traj = solve_dirichlet(spec, 0.01)
        assert traj.status is Status.DIVERGED and len(traj.frames) == 1


class TestSolve:
    def test_zero_stays_zero(self, flat):
        grid = Grid1D(-2, 2, 41, 1e-2)
        spec = DirichletSpec(Operator.V, flat, grid, np.zeros_like, lambda t: 0.0, lambda t: 0.0)
        traj = solve_dirichlet(spec, 0.5)
        assert traj.status is Status.COMPLETED
        assert np.all(traj.values == 0)
        assert np.allclose(np.diff(traj.times), 1e-2)

    def test_bad_horizon(self, flat):
        with pytest.raises(ValueError):
            solve_dirichlet(grim_spec(flat, 20, 1e-3), 0.0)

    def test_gradient_blowup_status(self, flat):
        spec = grim_spec(flat, 20, 1e-2)
        spec.grad_blowup_threshold = 1.0  # tan(1) > 1 at the ends
        traj = solve_dirichlet(spec, 0.1)
        assert traj.status is Status.GRADIENT_BLOWUP and traj.stop_time == pytest.approx(0.01)

    def test_grim_reaper_convergence_in_h(self, flat):
        errs = []
        for per_unit in (25, 50, 100):
            traj = solve_dirichlet(grim_spec(flat, per_unit, 1e-3), 0.2, keep_every=200)
            x = traj.grid.nodes
            errs.append(np.max(np.abs(traj.frames[-1].values - (0.2 - np.log(np.cos(x))))))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(orders >= 1.9)

    def test_self_convergence_in_dt(self):
        # the grim reaper is linear in t, so use a profile that is not a soliton
        flat = WarpingFunction.flat()
        finals = []
        for dt in (4e-3, 2e-3, 1e-3, 5e-4):
            spec = smooth_spec(flat, Operator.V, -1, 1, 41, dt, lambda x: 0.5 * np.cos(np.pi * x / 2) ** 2)
            finals.append(solve_dirichlet(spec, 0.2).frames[-1].values)
        d = [np.max(np.abs(a - b)) for a, b in zip(finals[:-1], finals[1:])]
        orders = np.log2(np.array(d[:-1]) / np.array(d[1:]))
        assert np.all(orders > 0.9)

    def test_boundary_data_exact(self, blooming):
        grid = Grid1D(0.0, 1.0, 41, 1e-3)
        ct = flows.line_translation(blooming, 4.0, 0.2)
        spec = DirichletSpec(Operator.H, blooming, grid, lambda y: np.full_like(y, 4.0), lambda t: float(ct(t)),
                             lambda t: 4.0)
        traj = solve_dirichlet(spec, 0.1)
        for f in traj.frames:
            assert f.values[0] == spec.left_bc(f.t) and f.values[-1] == 4.0

    def test_deterministic(self, blooming):
        a = solve_dirichlet(flows.spec_Vn(4, blooming, 20, 2e-3), 0.1)
        b = solve_dirichlet(flows.spec_Vn(4, blooming, 20, 2e-3), 0.1)
        assert np.array_equal(a.values, b.values)
        assert a.values.tobytes() == b.values.tobytes()

    @pytest.mark.parametrize("seed", [1, 2, 3, 4])
    def test_comparison_vertical(self, blooming, seed):
        rng = np.random.default_rng(seed)
        grid = Grid1D(-3, 3, 121, 2e-3)
        x = grid.nodes
        c = rng.normal(size=4)
        base = c[0] * np.sin(x) + c[1] * np.cos(2 * x) + c[2] * x / 3
        gap = np.abs(c[3]) * (1 + np.sin(3 * x) ** 2) * 0.1
        lo_v, hi_v = base, base + gap
        s0 = DirichletSpec(Operator.V, blooming, grid, lambda z: lo_v, lambda t: lo_v[0], lambda t: lo_v[-1])
        s1 = DirichletSpec(Operator.V, blooming, grid, lambda z: hi_v, lambda t: hi_v[0] + t, lambda t: hi_v[-1])
        a, b = solve_dirichlet(s0, 0.2), solve_dirichlet(s1, 0.2)
        assert a.status is Status.COMPLETED and b.status is Status.COMPLETED
        assert np.all(a.values <= b.values + 1e-9)

    @pytest.mark.parametrize("seed", [5, 6, 7])
    def test_comparison_horizontal(self, blooming, seed):
        rng = np.random.default_rng(seed)
        grid = Grid1D(0, 1, 41, 1e-3)
        y = grid.nodes
        lo_v = 1.5 + 1.2 * y + 0.2 * rng.uniform() * np.sin(np.pi * y)
        hi_v = lo_v + 0.3 * rng.uniform() * (1 + y)
        s0 = DirichletSpec(Operator.H, blooming, grid, lambda z: lo_v, lambda t: lo_v[0], lambda t: lo_v[-1])
        s1 = DirichletSpec(Operator.H, blooming, grid, lambda z: hi_v, lambda t: hi_v[0], lambda t: hi_v[-1])
        a, b = solve_dirichlet(s0, 0.1), solve_dirichlet(s1, 0.1)
        assert np.all(a.values <= b.values + 1e-9)

    def test_keep_every(self, flat):
        traj = solve_dirichlet(grim_spec(flat, 20, 1e-3), 0.1, keep_every=10)
        assert len(traj.frames) == 11
        assert traj.frame_at(0.05).t == pytest.approx(0.05)


class TestGradientAndResidual:
    def test_frame_gradient(self):
        g = Grid1D(0, 1, 11, 1e-3)
        assert np.allclose(frame_gradient(GraphFrame(g, 2 + 3 * g.nodes, 0)), 3.0, atol=1e-13)
        assert np.allclose(frame_gradient(GraphFrame(g, g.nodes**2, 0)), 2 * g.nodes, atol=1e-12)
        g2 = Grid1D(0, 3, 3001, 1e-3)
        err = frame_gradient(GraphFrame(g2, np.sin(g2.nodes), 0)) - np.cos(g2.nodes)
        assert np.max(np.abs(err)) < 1e-6

    def test_residual_zero_on_solver_output(self, blooming):
        spec = flows.spec_Vn(4, blooming, 20, 1e-3)
        traj = solve_dirichlet(spec, 0.02)
        for a, b in zip(traj.frames[:-1], traj.frames[1:]):
            assert np.max(np.abs(residual_operator(a, b, spec))) < 1e-9

    def test_linear_profile_is_subsolution(self, blooming):
        grid = Grid1D(0, 5, 201, 1e-3)
        spec = DirichletSpec(Operator.V, blooming, grid, lambda x: 4 * x, lambda t: 0.0, lambda t: 20.0)
        f0 = spec.initial_frame()
        f1 = GraphFrame(grid, f0.values, 1e-3)
        # the continuous residual is -phi'(x)(...) <= 0; where phi' is still
        # exponentially small just above x = 1 the O(h^2) consistency error shows
        assert np.max(residual_operator(f0, f1, spec)) <= 1e-6

    def test_barrier_b_is_discrete_supersolution(self, blooming):
        grid = Grid1D(0.05, 3.0, 119, 1e-3)
        y = grid.nodes
        spec = DirichletSpec(Operator.H, blooming, grid, lambda z: flows.barrier_b(z, 0.05),
                             lambda t: 0.0, lambda t: 0.0)
        for t in np.arange(0.05, 0.45, 0.05):
            f0 = GraphFrame(grid, flows.barrier_b(y, t), t, Orientation.HORIZONTAL)
            f1 = GraphFrame(grid, flows.barrier_b(y, t + 1e-3), t + 1e-3, Orientation.HORIZONTAL)
            assert residual_operator(f0, f1, spec).min() >= -1e-8

    def test_residual_needs_ordered_frames(self, flat):
        spec = grim_spec(flat, 20, 1e-3)
        f = spec.initial_frame()
        with pytest.raises(ValueError):
            residual_operator(f, f, spec)
