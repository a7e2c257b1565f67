"""The specific boundary value problems, the nested limit and the barriers.

Vertical problems ``V_n`` live on ``[-n, n]`` with odd data that is zero
inside ``[-(n-1), n-1]`` and rises to ``+-1`` at the ends.  Their solutions
decrease in ``n`` and the pointwise limit is a non-static flow that starts
from the x-axis.  Horizontal problems ``H_c`` live on ``y in [0, 1]`` with the
left end pulled in by a vertical line moving under the flow.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

from .parabolic_solver import (
    DirichletSpec,
    Grid1D,
    GraphFrame,
    Operator,
    Orientation,
    Status,
    Trajectory,
    V_residual,
    H_residual,
    solve_dirichlet,
)
from .warped_metric import WarpingFunction, circle_flow, f1, geodesic_eta, geodesic_m_through, zeta

__all__ = [
    "NotMonotone",
    "DomainTooSmall",
    "NestedFamily",
    "chi",
    "dchi",
    "initial_Yn",
    "spec_Vn",
    "spec_Hc",
    "line_translation",
    "build_nested",
    "gage_switch",
    "barrier_b",
    "barrier_b_residual",
    "barrier_ubar",
    "peel_x0",
    "peel_check",
    "foliation_F",
    "foliation_rate",
    "foliation_tau",
    "foliation_bound_residual",
    "linear_residual",
    "parallelogram",
    "hc_region",
    "restrict",
    "max_workers",
]

# width parameter of the smooth step inside chi; 0.6 keeps chi' near -3
_CHI_WIDTH = 0.6


class NotMonotone(ValueError):
    pass


class DomainTooSmall(ValueError):
    pass


def max_workers() -> int:
    """Thread cap from ``CSF_LAB_THREADS``, else the available CPUs."""
    env = os.environ.get("CSF_LAB_THREADS", "").strip()
    if env:
        try:
            k = int(env)
        except ValueError:
            raise ValueError(f"CSF_LAB_THREADS must be a positive integer, got {env!r}") from None
        if k < 1:
            raise ValueError("CSF_LAB_THREADS must be a positive integer")
        return k
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover - not linux
        return os.cpu_count() or 1


# --------------------------------------------------------------------------
# cutoff and initial data


def _step(u):
    # smooth 0 -> 1 on [0, 1] built from exp(-1/x)
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    a = f1(u / _CHI_WIDTH)
    b = f1((1.0 - u) / _CHI_WIDTH)
    return a / (a + b)


def _dstep(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    mid = (u > 0) & (u < 1)
    um = u[mid] / _CHI_WIDTH
    vm = (1.0 - u[mid]) / _CHI_WIDTH
    a, b = np.exp(-1.0 / um), np.exp(-1.0 / vm)
    out[mid] = a * b * (1.0 / um**2 + 1.0 / vm**2) / ((a + b) ** 2 * _CHI_WIDTH)
    return out


def _check_unit(s):
    s = np.asarray(s, dtype=float)
    if np.any((s < 0) | (s > 1)) or not np.all(np.isfinite(s)):
        raise ValueError("chi is defined on [0, 1]")
    return s


def chi(s):
    """Smooth decreasing cutoff: 1 on ``[0, 1/4]``, 0 on ``[3/4, 1]``, ``chi' > -4``."""
    s = _check_unit(s)
    out = np.asarray(1.0 - _step((s - 0.25) / 0.5))
    return float(out) if out.ndim == 0 else out


def dchi(s):
    s = _check_unit(s)
    out = np.asarray(-_dstep((s - 0.25) / 0.5) / 0.5)
    return float(out) if out.ndim == 0 else out


def initial_Yn(n: int):
    """Odd initial datum on ``[-n, n]``: 0 on ``[0, n-1]``, ``chi(n - x)`` on ``[n-1, n]``.

    The profile rises from 0 at ``n - 1`` to 1 at ``n`` so that it matches the
    boundary value ``y(n, t) = 1``.
    """
    if n < 2:
        raise ValueError("n must be at least 2")

    def Y(x):
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        if np.any(ax > n + 1e-12):
            raise ValueError(f"Y_{n} is defined on [-{n}, {n}]")
        v = np.zeros_like(ax)
        edge = ax >= n - 1
        v[edge] = chi(np.clip(n - ax[edge], 0.0, 1.0))
        out = np.sign(x) * v
        return float(out) if out.ndim == 0 else out

    return Y


def spec_Vn(n: int, metric: WarpingFunction, resolution: int = 40, dt: float = 1e-3) -> DirichletSpec:
    """Vertical problem on ``[-n, n]`` with data ``Y_n`` and ends clamped at ``-1, 1``."""
    if n < 2:
        raise ValueError("n must be at least 2")
    grid = Grid1D.with_resolution(-n, n, resolution, dt)
    return DirichletSpec(
        Operator.V,
        metric,
        grid,
        initial_Yn(n),
        lambda t: -1.0,
        lambda t: 1.0,
        label=f"V_{n}",
    )


def line_translation(metric: WarpingFunction, c: float, t_end: float, dt: float = 1e-5):
    """``c(t)`` with ``c' = -phi'(c)``, ``c(0) = c``, as a C^1 interpolant."""
    cf = circle_flow(metric, c, t_end, dt=dt)
    if cf.extinction_time is not None:
        raise ValueError("the vertical line reaches x = 0 before t_end")
    return CubicHermiteSpline(cf.t, cf.R, -np.asarray(metric.dphi(cf.R)))


def spec_Hc(c: float, metric: WarpingFunction, resolution: int = 40, dt: float = 1e-3, T: float = 1.0) -> DirichletSpec:
    """Horizontal problem on ``y in [0, 1]``: ``x(0, t) = c(t)``, ``x(1, t) = c``, start ``x = c``."""
    if not c > 0:
        raise ValueError("c must be positive")
    ct = line_translation(metric, c, T + 2 * dt)
    grid = Grid1D.with_resolution(0.0, 1.0, resolution, dt)
    return DirichletSpec(
        Operator.H,
        metric,
        grid,
        lambda y: np.full_like(np.asarray(y, dtype=float), c),
        lambda t: float(ct(t)),
        lambda t: c,
        label=f"H_{c:g}",
    )


# --------------------------------------------------------------------------
# nested limit


@dataclass
class NestedFamily:
    ns: list[int]
    trajectories: dict[int, Trajectory]
    window: Grid1D
    times: np.ndarray
    limit_values: np.ndarray  # (n_times, n_window_nodes)

    @property
    def x(self) -> np.ndarray:
        return self.window.nodes

    @property
    def limit_frames(self) -> list[GraphFrame]:
        return [GraphFrame(self.window, v, t) for t, v in zip(self.times, self.limit_values)]

    def limit_at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        return self.limit_values[k]

    def window_values(self, n: int) -> np.ndarray:
        """Frames of ``y_n`` restricted to the common window."""
        return restrict(self.trajectories[n], self.window.lo, self.window.hi).values


def restrict(traj: Trajectory, lo: float, hi: float) -> Trajectory:
    """The trajectory on the grid nodes inside ``[lo, hi]`` (which must be nodes)."""
    g = traj.grid
    x = g.nodes
    tol = 1e-9 * g.h
    i0 = int(np.argmin(np.abs(x - lo)))
    i1 = int(np.argmin(np.abs(x - hi)))
    if abs(x[i0] - lo) > tol or abs(x[i1] - hi) > tol:
        raise ValueError("window ends must be grid nodes")
    sub = Grid1D(x[i0], x[i1], i1 - i0 + 1, g.dt)
    frames = [GraphFrame(sub, f.values[i0 : i1 + 1], f.t, f.orientation) for f in traj.frames]
    return Trajectory(frames, traj.status, traj.stop_time, traj.message)


def _solve(spec, T, keep_every):
    return solve_dirichlet(spec, T, keep_every=keep_every)


def build_nested(
    ns,
    metric: WarpingFunction,
    resolution: int = 40,
    T: float = 0.5,
    dt: float = 1e-3,
    keep_every: int = 1,
    workers: int | None = None,
) -> NestedFamily:
    """Solve ``V_n`` for each ``n`` and take the per-node minimum on the common window.

    The minimum is taken on ``x >= 0`` and reflected, so the limit is odd by
    construction.  Solves run in a thread pool capped by ``CSF_LAB_THREADS``.
    """
    ns = [int(n) for n in ns]
    if not ns or any(b <= a for a, b in zip(ns, ns[1:])) or ns[0] < 2:
        raise ValueError("ns must be increasing integers >= 2")
    specs = [spec_Vn(n, metric, resolution, dt) for n in ns]
    workers = min(len(ns), workers or max_workers())
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trajs = list(pool.map(lambda s: _solve(s, T, keep_every), specs))
    else:
        trajs = [_solve(s, T, keep_every) for s in specs]
    family = dict(zip(ns, trajs))
    m = ns[0]
    nt = min(len(tr.frames) for tr in trajs)
    window = restrict(trajs[0], -m, m)
    half = [restrict(tr, 0.0, m).values[:nt] for tr in trajs]
    right = np.min(np.stack(half), axis=0)
    limit = np.concatenate([-right[:, :0:-1], right], axis=1)
    times = trajs[0].times[:nt]
    return NestedFamily(ns, family, window.grid, times, limit)


# --------------------------------------------------------------------------
# gage switching


def gage_switch(frame: GraphFrame, n: int | None = None, target: Grid1D | None = None) -> GraphFrame:
    """Invert a strictly monotone graph onto a uniform grid over its range.

    The inverse is a monotone piecewise-cubic (PCHIP) interpolant, so it is
    monotone as well.  ``n`` defaults to the node count of ``frame``.  With
    ``target`` the inverse is sampled on that grid instead, and only the part
    of the frame whose values cover ``[target.lo, target.hi]`` has to be
    strictly monotone; this handles frames that saturate at their ends.
    """
    v = np.asarray(frame.values)
    xs = frame.nodes
    if v[-1] < v[0]:
        v, xs = v[::-1], xs[::-1]
    if target is not None:
        if target.lo < v[0] or target.hi > v[-1]:
            raise ValueError("target range exceeds the range of the frame")
        i0 = max(int(np.searchsorted(v, target.lo, side="right")) - 1, 0)
        i1 = min(int(np.searchsorted(v, target.hi, side="left")), len(v) - 1)
        v, xs = v[i0 : i1 + 1], xs[i0 : i1 + 1]
    if len(v) < 2 or not np.all(np.diff(v) > 1e-12):
        raise NotMonotone("gage switch needs a strictly monotone frame")
    if target is None:
        grid = Grid1D(float(v[0]), float(v[-1]), n or frame.grid.n, frame.grid.dt)
    else:
        grid = target
    inv = PchipInterpolator(v, xs)(grid.nodes)
    if target is None:
        inv[0], inv[-1] = xs[0], xs[-1]
    orient = Orientation.HORIZONTAL if frame.orientation is Orientation.VERTICAL else Orientation.VERTICAL
    return GraphFrame(grid, inv, frame.t, orient)


# --------------------------------------------------------------------------
# barriers


def _check_t(t):
    t = np.asarray(t, dtype=float)
    if np.any((t <= 0) | (t > 0.5)):
        raise ValueError("barriers are defined for t in (0, 1/2]")
    return t


def barrier_b(y, t):
    """Supersolution for horizontal graphs, ``t + 1/t + 1/log(1 + y)``."""
    t = _check_t(t)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ValueError("barrier b needs y > 0")
    out = t + zeta(t) + 1.0 / np.log1p(y)
    return float(out) if np.ndim(out) == 0 else out


def barrier_b_residual(metric: WarpingFunction, y, t):
    """``H(b)`` from the closed-form derivatives of ``b``; >= 0 means supersolution."""
    t = _check_t(t)
    y = np.asarray(y, dtype=float)
    L = np.log1p(y)
    b = t + 1.0 / t + 1.0 / L
    b_t = 1.0 - 1.0 / t**2
    b_y = -1.0 / (L**2 * (1.0 + y))
    b_yy = (2.0 * L + L**2) / (L**4 * (1.0 + y) ** 2)
    return H_residual(metric, b, b_t, b_y, b_yy)


def barrier_ubar(x, t):
    """Subsolution ``max(-1, 2 - exp(1/(x - t - 1/t)))``, and -1 left of ``t + 1/t``."""
    t = float(_check_t(t))
    x = np.asarray(x, dtype=float)
    s = x - t - zeta(t)
    out = np.full_like(x, -1.0)
    right = s > 0
    with np.errstate(over="ignore"):
        out[right] = np.maximum(-1.0, 2.0 - np.exp(1.0 / s[right]))
    return float(out) if out.ndim == 0 else out


def peel_x0(t: float, eps: float) -> float:
    """Position right of which the limit is within ``eps`` of 1."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    t = float(_check_t(t))
    return t + zeta(t) + 1.0 / np.log1p(eps)


def peel_check(frame: GraphFrame, eps: float) -> bool:
    """True iff every node right of ``peel_x0`` has value above ``1 - eps``."""
    x0 = peel_x0(frame.t, eps)
    x = frame.nodes
    if x[-1] <= x0:
        raise DomainTooSmall(f"frame ends at x = {x[-1]:g}, before x0 = {x0:g}")
    return bool(np.all(np.asarray(frame.values)[x > x0] > 1.0 - eps - 1e-6))


# --------------------------------------------------------------------------
# foliation


def foliation_rate(k: int) -> float:
    """``A_k = 2 (k + 1)^2``."""
    return 2.0 * (k + 1) ** 2


def foliation_tau(k: int) -> float:
    """Time for which ``4x e^{A_k t}`` stays below slope ``4 + 1/k``."""
    return np.log1p(1.0 / (4.0 * k)) / foliation_rate(k)


def foliation_F(k: int, metric: WarpingFunction, resolution: int = 40, T: float = 0.1, dt: float = 1e-3) -> Trajectory:
    """Vertical flow on ``[0, k+1]`` from ``4x`` with ends held at 0 and ``4(k+1)``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    grid = Grid1D.with_resolution(0.0, k + 1.0, resolution, dt)
    top = 4.0 * (k + 1)
    spec = DirichletSpec(Operator.V, metric, grid, lambda x: 4.0 * np.asarray(x, dtype=float),
                         lambda t: 0.0, lambda t: top, label=f"F_{k}")
    return solve_dirichlet(spec, T)


def foliation_bound_residual(metric: WarpingFunction, k: int, x, t):
    """``V(4x e^{A_k t})``; nonnegative on ``[0, k+1]``."""
    A = foliation_rate(k)
    x = np.asarray(x, dtype=float)
    e = np.exp(A * np.asarray(t, dtype=float))
    return V_residual(metric, x, 4.0 * A * x * e, 4.0 * e * np.ones_like(x), np.zeros_like(x))


def linear_residual(metric: WarpingFunction, x, slope: float = 4.0):
    """``V(slope * x)`` for the static line; nonpositive where ``phi' x >= 0``."""
    x = np.asarray(x, dtype=float)
    return V_residual(metric, x, np.zeros_like(x), np.full_like(x, slope), np.zeros_like(x))


# --------------------------------------------------------------------------
# regions


def parallelogram(n: int, x):
    """Lower and upper edges of the region that contains every ``y_n`` frame."""
    x = np.asarray(x, dtype=float)
    lo = np.maximum(-1.0, 1.0 + 4.0 * (x - n))
    hi = np.minimum(1.0, -1.0 + 4.0 * (x + n))
    return lo, hi


def hc_region(metric: WarpingFunction, c: float, y, ct_values):
    """Bounds for ``H_c`` frames at heights ``y``.

    Returns ``(lower, upper)``; ``lower`` is the geodesic from ``(0, 0)`` to
    ``(c, 1)`` written as ``x(y)`` (one row), ``upper`` is the segment from
    ``(c(t), 0)`` to ``(c, 1)`` with one row per entry of ``ct_values``.
    """
    y = np.asarray(y, dtype=float)
    m = geodesic_m_through(metric, c, 1.0)
    lower = geodesic_eta(metric, m, y, c)
    ct = np.atleast_1d(np.asarray(ct_values, dtype=float))
    upper = ct[:, None] * (1.0 - y) + c * y
    return lower, upper


def completed(traj: Trajectory) -> bool:
    return traj.status is Status.COMPLETED
