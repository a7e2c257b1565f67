"""Numerical checks of the comparison-type statements.

Intersection counting, ordered-pair avoidance, the Gauss-Bonnet extinction
bound, the two circle-based formulations of blooming and a decay probe for
uniqueness on metrics that do not bloom.  Everything works on finished
trajectories, so the functions are pure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .flows import chi
from .parabolic_solver import (
    DirichletSpec,
    Grid1D,
    GraphFrame,
    Operator,
    Status,
    Trajectory,
    frame_gradient,
    solve_dirichlet,
)
from .warped_metric import WarpingFunction, bloom_probe, circle_flow

__all__ = [
    "PreconditionViolation",
    "IntersectionEvent",
    "IntersectionReport",
    "ExtinctionBound",
    "BloomEquivalence",
    "UniquenessReport",
    "constant_trajectory",
    "sampled_trajectory",
    "intersection_events",
    "intersection_count",
    "intersection_monotonicity",
    "avoidance_check",
    "extinction_bound",
    "bloom_equivalence_check",
    "uniqueness_probe",
]

DEADBAND = 1e-9
AVOID_TOL = 1e-9
TRANSVERSE_SLOPE = 1e-6


class PreconditionViolation(ValueError):
    pass


# --------------------------------------------------------------------------
# helpers for comparison trajectories


def constant_trajectory(grid: Grid1D, value: float, times) -> Trajectory:
    """The static solution ``u = value`` sampled at ``times``."""
    vals = np.full(grid.n, float(value))
    return Trajectory([GraphFrame(grid, vals, float(t)) for t in times])


def sampled_trajectory(grid: Grid1D, fn, times) -> Trajectory:
    """Frames ``fn(nodes, t)``, e.g. a closed-form barrier."""
    x = grid.nodes
    return Trajectory([GraphFrame(grid, np.asarray(fn(x, float(t)), dtype=float), float(t)) for t in times])


def _same_grid(a: GraphFrame, b: GraphFrame):
    ga, gb = a.grid, b.grid
    if ga.n != gb.n or abs(ga.lo - gb.lo) > 1e-12 or abs(ga.hi - gb.hi) > 1e-12:
        raise ValueError("frames must share a grid")


def _same_sampling(ta: Trajectory, tb: Trajectory):
    if len(ta.frames) != len(tb.frames):
        raise ValueError("trajectories must have the same number of frames")
    if not np.allclose(ta.times, tb.times, rtol=0, atol=1e-12):
        raise ValueError("trajectories must share their time sampling")
    _same_grid(ta.frames[0], tb.frames[0])


# --------------------------------------------------------------------------
# intersections


@dataclass(frozen=True)
class IntersectionEvent:
    start: int  # first node of the event
    stop: int  # last node (equal to start for a crossing between nodes)
    crossing: bool  # sign of a - b differs on the two sides
    transverse: bool  # slopes differ by more than 1e-6 at the event


@dataclass
class IntersectionReport:
    times: np.ndarray
    counts: np.ndarray
    monotone: bool


def intersection_events(frame_a: GraphFrame, frame_b: GraphFrame, deadband: float = DEADBAND):
    """Zeros of ``a - b``, with runs inside the deadband merged into one event.

    A sign change between neighbouring nodes is one event; a run of nodes
    with ``|a - b| < deadband`` is one event whatever its length, including
    the degenerate case ``a == b`` everywhere.
    """
    _same_grid(frame_a, frame_b)
    d = np.asarray(frame_a.values) - np.asarray(frame_b.values)
    slope = frame_gradient(frame_a) - frame_gradient(frame_b)
    s = np.where(np.abs(d) < deadband, 0, np.sign(d)).astype(int)
    events = []
    n = len(s)
    i = 0
    while i < n:
        if s[i] == 0:
            j = i
            while j + 1 < n and s[j + 1] == 0:
                j += 1
            left = s[i - 1] if i > 0 else 0
            right = s[j + 1] if j + 1 < n else 0
            crossing = left * right < 0
            trans = bool(np.max(np.abs(slope[i : j + 1])) > TRANSVERSE_SLOPE)
            events.append(IntersectionEvent(i, j, crossing, trans))
            i = j + 1
            continue
        if i + 1 < n and s[i + 1] != 0 and s[i + 1] != s[i]:
            trans = bool(max(abs(slope[i]), abs(slope[i + 1])) > TRANSVERSE_SLOPE)
            events.append(IntersectionEvent(i, i + 1, True, trans))
        i += 1
    return events


def intersection_count(frame_a: GraphFrame, frame_b: GraphFrame, deadband: float = DEADBAND) -> int:
    return len(intersection_events(frame_a, frame_b, deadband))


def intersection_monotonicity(traj_a: Trajectory, traj_b: Trajectory, deadband: float = DEADBAND) -> IntersectionReport:
    """Intersection counts over time and whether they never increase."""
    _same_sampling(traj_a, traj_b)
    counts = np.array(
        [intersection_count(fa, fb, deadband) for fa, fb in zip(traj_a.frames, traj_b.frames)], dtype=int
    )
    return IntersectionReport(traj_a.times, counts, bool(np.all(np.diff(counts) <= 0)))


def avoidance_check(traj_a: Trajectory, traj_b: Trajectory, tol: float = AVOID_TOL) -> bool:
    """``a <= b`` everywhere, given ``a <= b`` on the parabolic boundary.

    The parabolic boundary is the first frame plus both end nodes of every
    frame; PreconditionViolation is raised when the ordering fails there.
    """
    _same_sampling(traj_a, traj_b)
    A, B = traj_a.values, traj_b.values
    diff = A - B
    if np.any(diff[0] > tol) or np.any(diff[:, 0] > tol) or np.any(diff[:, -1] > tol):
        raise PreconditionViolation("data are not ordered on the parabolic boundary")
    return bool(np.all(diff <= tol))


# --------------------------------------------------------------------------
# extinction


@dataclass(frozen=True)
class ExtinctionBound:
    alpha: float
    inner_times: tuple
    bound: float


def extinction_bound(alpha: float, inner_times=()) -> ExtinctionBound:
    """``alpha / 2 pi + sum(inner_times)`` for a curve enclosing disjoint inner curves."""
    inner = tuple(float(t) for t in inner_times)
    if alpha < 0 or any(t < 0 for t in inner):
        raise ValueError("area discrepancy and inner times must be nonnegative")
    return ExtinctionBound(float(alpha), inner, float(alpha) / (2.0 * math.pi) + sum(inner))


# --------------------------------------------------------------------------
# blooming formulations


@dataclass
class BloomEquivalence:
    condition1: bool
    condition2: bool
    status: str  # "agree", "disagree" or "inconclusive"
    probe_times: np.ndarray
    start_radii: np.ndarray
    radii_at_probe: np.ndarray  # (len(start_radii), len(probe_times))
    bloom_status: str = ""
    notes: list = field(default_factory=list)

    @property
    def agree(self) -> bool:
        return self.status == "agree"


def _radius_at(metric, R0, times, dt):
    cf = circle_flow(metric, R0, float(max(times)) + dt, dt=dt)
    return np.interp(times, cf.t, cf.R)


def bloom_equivalence_check(
    metric: WarpingFunction,
    probe_times=(0.1, 0.25, 0.4),
    start_radii=None,
    dt: float = 1e-4,
    max_ratio: float = 0.5,
) -> BloomEquivalence:
    """Compare two formulations of blooming for a rotationally symmetric metric.

    Condition 1 is the circle coming in from infinity (``bloom_probe``).
    Condition 2 asks that at each positive time every closed curve lies in a
    fixed ball; the proxy uses circles, the extreme case.  The radius reached
    at each probe time must stay bounded as the starting radius is
    quadrupled, which is read off from the increments contracting by at
    least ``max_ratio``; when a limiting pull-in curve exists no circle may
    end up outside it.
    """
    if not (metric.polar or metric.kind.value in ("blooming", "flat")):
        raise ValueError("metric must be rotationally symmetric")
    probe = np.asarray(probe_times, dtype=float)
    radii = 4.0 * 4.0 ** np.arange(8) if start_radii is None else np.asarray(start_radii, dtype=float)
    report = bloom_probe(metric, dt=dt)
    notes = []
    rows = np.array([_radius_at(metric, R0, probe, dt) for R0 in radii])
    steps = np.abs(np.diff(rows, axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = steps[1:] / steps[:-1]
    # the last two ratios decide; an exact zero increment counts as settled
    tail = np.where(steps[:-1][-2:] == 0, 0.0, ratios[-2:])
    settled = bool(np.all(tail <= max_ratio))
    cond2 = settled
    if report.blooms:
        lim = report.pull_in_at(probe)
        inside = bool(np.all(rows <= lim + 1e-6 * np.maximum(1.0, lim)))
        if not inside:
            notes.append("a circle ends up outside the limiting pull-in curve")
        cond2 = settled and inside
    elif settled:
        notes.append("circle radii settle although no pull-in curve was found")
    if report.status == "inconclusive":
        status = "inconclusive"
    else:
        status = "agree" if report.blooms == cond2 else "disagree"
    return BloomEquivalence(report.blooms, cond2, status, probe, radii, rows, report.status, notes)


# --------------------------------------------------------------------------
# uniqueness probe


@dataclass
class UniquenessReport:
    half_widths: np.ndarray
    interior_sup: np.ndarray
    decays: bool
    barrier_scale: float
    statuses: list


def _edge_bump(L: float, amplitude: float):
    def u0(x):
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        v = np.zeros_like(ax)
        edge = ax >= L - 1
        v[edge] = chi(np.clip(L - ax[edge], 0.0, 1.0))
        return amplitude * np.sign(x) * v

    return u0


def uniqueness_probe(
    metric: WarpingFunction,
    amplitude: float = 1.0,
    half_widths=(25, 50, 100),
    T: float = 1.0,
    resolution: int = 10,
    dt: float = 1e-3,
    check_bloom: bool = True,
) -> UniquenessReport:
    """Does data placed far away leave the middle of the line alone?

    Starts from zero with an odd bump of height ``amplitude`` at ``x = +-L``
    and records ``sup |y|`` over ``[-L/2, L/2]`` at time ``T``.  On a metric
    without blooming this must shrink as ``L`` grows.  ``barrier_scale`` is
    ``sqrt(2T)``, the radius a flat unit-speed circle barrier sweeps in time T.
    """
    if check_bloom and bloom_probe(metric).blooms:
        raise PreconditionViolation("uniqueness probe needs a metric without blooming")
    sups, statuses = [], []
    for L in half_widths:
        L = int(L)
        grid = Grid1D.with_resolution(-L, L, resolution, dt)
        spec = DirichletSpec(
            Operator.V, metric, grid, _edge_bump(L, amplitude), lambda t: -amplitude, lambda t: amplitude
        )
        traj = solve_dirichlet(spec, T, keep_every=max(1, int(round(T / dt))))
        x = grid.nodes
        v = traj.frames[-1].values
        sups.append(float(np.max(np.abs(v[np.abs(x) <= L / 2]))))
        statuses.append(traj.status)
    sups = np.array(sups)
    ok = all(s is Status.COMPLETED for s in statuses)
    decays = bool(ok and np.all(np.diff(sups) < 0)) if amplitude != 0 else bool(np.all(sups == 0))
    return UniquenessReport(np.asarray(half_widths, dtype=float), sups, decays, math.sqrt(2.0 * T), statuses)
