"""Warped-product plane metrics, their curvature formulas and geodesics.

A metric is ``dx^2 + exp(2 phi(x)) dy^2`` in Cartesian form or
``dr^2 + exp(2 phi(r)) dtheta^2`` in polar form; everything here is a function
of the warping function ``phi`` and its first two derivatives.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import BPoly

__all__ = [
    "Kind",
    "WarpingFunction",
    "GeodesicParams",
    "CircleFlow",
    "BloomReport",
    "f1",
    "f2",
    "f3",
    "phi_eval",
    "coeff_mu",
    "coeff_nu",
    "curvature_vertical",
    "curvature_horizontal",
    "geodesic_slope",
    "geodesic_sigma",
    "geodesic_m_through",
    "geodesic_eta",
    "circle_flow",
    "zeta",
    "bloom_probe",
]

R_MIN = 1e-6
R_REF = 2.0


# --------------------------------------------------------------------------
# bump functions


def f1(x):
    """``exp(-1/x)`` for ``x > 0``, zero otherwise."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out if out.ndim else float(out)


def f2(x):
    """Smooth step from 0 (``x <= 0``) to 1 (``x >= 1/4``)."""
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 0.25, 1.0, 0.0)
    mid = (x > 0) & (x < 0.25)
    a = np.exp(-1.0 / x[mid])
    b = np.exp(-1.0 / (0.25 - x[mid]))
    out[mid] = a / (a + b)
    return out if out.ndim else float(out)


def _df2(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    mid = (x > 0) & (x < 0.25)
    xm = x[mid]
    a = np.exp(-1.0 / xm)
    b = np.exp(-1.0 / (0.25 - xm))
    out[mid] = a * b * (1.0 / xm**2 + 1.0 / (0.25 - xm) ** 2) / (a + b) ** 2
    return out


def f3(x):
    """Two-stage ramp: 0 below 1, 1/9 on [5/4, 7/4], 1 from 2 on."""
    x = np.asarray(x, dtype=float)
    return (f2(x - 1.0) + 8.0 * f2(x - 1.75)) / 9.0


def _df3(x):
    x = np.asarray(x, dtype=float)
    return (_df2(x - 1.0) + 8.0 * _df2(x - 1.75)) / 9.0


def _f2_scalar(x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 0.25:
        return 1.0
    a = math.exp(-1.0 / x)
    b = math.exp(-1.0 / (0.25 - x))
    return a / (a + b)


def _dphi_blooming_scalar(x: float) -> float:
    ax = abs(x)
    if ax <= 1.0:
        return 0.0
    if ax >= 2.0:
        v = ax * ax
    else:
        v = ax * ax * (_f2_scalar(ax - 1.0) + 8.0 * _f2_scalar(ax - 1.75)) / 9.0
    return v if x > 0 else -v


# --------------------------------------------------------------------------
# warping functions


class Kind(enum.Enum):
    BLOOMING = "blooming"
    FLAT_CARTESIAN = "flat"
    FLAT_POLAR = "flat-polar"
    CUSTOM = "custom"


class _BloomingPhi:
    """phi for the blooming metric: tabulated on [1, 2], closed form elsewhere.

    phi' = x^2 f3(x) is integrated on 1e-3 knots, and phi between knots is a
    quintic Hermite interpolant of (phi, phi', phi'').  Built once, read-only
    afterwards, so instances can be shared between threads.
    """

    def __init__(self, spacing: float = 1e-3, epsabs: float = 1e-13):
        knots = np.linspace(1.0, 2.0, int(round(1.0 / spacing)) + 1)
        d1 = knots**2 * f3(knots)
        d2 = 2.0 * knots * f3(knots) + knots**2 * _df3(knots)
        vals = np.zeros_like(knots)

        def integrand(s):
            return s * s * float(f3(s))

        for i in range(1, len(knots)):
            piece, _ = integrate.quad(integrand, knots[i - 1], knots[i], epsabs=epsabs, epsrel=1e-13)
            vals[i] = vals[i - 1] + piece
        self.knots = knots
        self.phi2 = vals[-1]
        self._poly = BPoly.from_derivatives(knots, np.column_stack([vals, d1, d2]))

    def phi(self, x):
        ax = np.abs(np.asarray(x, dtype=float))
        out = np.zeros_like(ax)
        mid = (ax > 1.0) & (ax < 2.0)
        out[mid] = self._poly(ax[mid])
        hi = ax >= 2.0
        out[hi] = self.phi2 + (ax[hi] ** 3 - 8.0) / 3.0
        return out

    @staticmethod
    def dphi(x):
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        return np.sign(x) * ax**2 * f3(ax)

    @staticmethod
    def d2phi(x):
        ax = np.abs(np.asarray(x, dtype=float))
        return 2.0 * ax * f3(ax) + ax**2 * _df3(ax)


_BLOOMING_TABLE: _BloomingPhi | None = None


def _blooming_table() -> _BloomingPhi:
    global _BLOOMING_TABLE
    if _BLOOMING_TABLE is None:
        _BLOOMING_TABLE = _BloomingPhi()
    return _BLOOMING_TABLE


@dataclass(frozen=True)
class WarpingFunction:
    """A warping function ``phi`` with derivatives, plus a display name.

    Use the constructors :meth:`blooming`, :meth:`flat`, :meth:`flat_polar`
    and :meth:`custom`.  Evaluation methods accept scalars or arrays.
    """

    kind: Kind
    name: str
    _phi: Callable = field(repr=False, compare=False)
    _dphi: Callable = field(repr=False, compare=False)
    _d2phi: Callable = field(repr=False, compare=False)
    polar: bool = False

    @classmethod
    def blooming(cls) -> "WarpingFunction":
        """Even phi, zero on [-1, 1], with ``phi'(x) = x^2`` for ``|x| >= 2``."""
        table = _blooming_table()
        return cls(Kind.BLOOMING, "blooming", table.phi, table.dphi, table.d2phi)

    @classmethod
    def flat(cls) -> "WarpingFunction":
        zero = lambda x: np.zeros_like(np.asarray(x, dtype=float))  # noqa: E731
        return cls(Kind.FLAT_CARTESIAN, "flat", zero, zero, zero)

    @classmethod
    def flat_polar(cls) -> "WarpingFunction":
        """``phi(r) = log r``: the Euclidean plane in polar coordinates."""
        return cls(
            Kind.FLAT_POLAR,
            "flat-polar",
            lambda r: np.log(r),
            lambda r: 1.0 / np.asarray(r, dtype=float),
            lambda r: -1.0 / np.asarray(r, dtype=float) ** 2,
            polar=True,
        )

    @classmethod
    def custom(cls, phi, dphi, d2phi, name: str = "custom", polar: bool = False) -> "WarpingFunction":
        return cls(Kind.CUSTOM, name, phi, dphi, d2phi, polar=polar)

    @classmethod
    def linear_slope(cls) -> "WarpingFunction":
        """``phi(r) = r`` so that ``phi' = 1``; circles shrink at unit speed."""
        return cls.custom(
            lambda r: np.asarray(r, dtype=float),
            lambda r: np.ones_like(np.asarray(r, dtype=float)),
            lambda r: np.zeros_like(np.asarray(r, dtype=float)),
            name="linear-slope",
            polar=True,
        )

    def _check(self, x):
        if self.kind is Kind.FLAT_POLAR and np.any(np.asarray(x) <= 0):
            raise ValueError("flat-polar warping function needs r > 0")

    def phi(self, x):
        self._check(x)
        return _scalarise(self._phi(x), x)

    def dphi(self, x):
        if np.ndim(x) == 0:
            # scalar fast paths for the ODE integrators
            if self.kind is Kind.BLOOMING:
                return _dphi_blooming_scalar(float(x))
            if self.kind is Kind.FLAT_CARTESIAN:
                return 0.0
            if self.kind is Kind.FLAT_POLAR and x > 0:
                return 1.0 / float(x)
        self._check(x)
        return _scalarise(self._dphi(x), x)

    def d2phi(self, x):
        self._check(x)
        return _scalarise(self._d2phi(x), x)

    def __call__(self, x):
        return self.phi(x), self.dphi(x), self.d2phi(x)


def _scalarise(value, x):
    if np.ndim(x) == 0:
        return float(value)
    return np.asarray(value, dtype=float)


_METRICS = {
    "blooming": WarpingFunction.blooming,
    "flat": WarpingFunction.flat,
    "flat-polar": WarpingFunction.flat_polar,
    "linear-slope": WarpingFunction.linear_slope,
}


def builtin_metric(name: str) -> WarpingFunction:
    try:
        return _METRICS[name]()
    except KeyError:
        raise ValueError(f"unknown metric {name!r}; built-ins: {', '.join(sorted(_METRICS))}") from None


def builtin_names() -> list[str]:
    return sorted(_METRICS)


# --------------------------------------------------------------------------
# pointwise formulas


def phi_eval(metric: WarpingFunction, x):
    """Return ``(phi, phi', phi'')`` at ``x``."""
    return metric(x)


def _exp2(log_abs_p, phi):
    # exp(2 (log|p| + phi)) without intermediate overflow warnings
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        return np.exp(2.0 * (log_abs_p + phi))


def _log_abs(p):
    with np.errstate(divide="ignore"):
        return np.log(np.abs(p))


def mu_from_phi(p, phi):
    """``1 / (1 + p^2 e^{2 phi})`` evaluated without overflow."""
    return 1.0 / (1.0 + _exp2(_log_abs(p), phi))


def nu_from_phi(p, phi):
    """``1 / (e^{2 phi} + p^2)`` evaluated without overflow."""
    with np.errstate(over="ignore", under="ignore"):
        e = np.exp(-2.0 * np.asarray(phi, dtype=float))
        return e / (1.0 + _exp2(_log_abs(p), -np.asarray(phi, dtype=float)))


def coeff_mu(metric: WarpingFunction, p, x):
    out = mu_from_phi(p, metric.phi(x))
    return float(out) if np.ndim(out) == 0 else out


def coeff_nu(metric: WarpingFunction, p, x):
    out = nu_from_phi(p, metric.phi(x))
    return float(out) if np.ndim(out) == 0 else out


def curvature_vertical(metric: WarpingFunction, x, y_x, y_xx):
    """Geodesic curvature of the vertical graph ``y(x)``."""
    phi, dphi, _ = metric(x)
    e = np.exp(phi)
    return (dphi * e * y_x * (y_x**2 * e**2 + 2.0) + e * y_xx) / (1.0 + e**2 * y_x**2) ** 1.5


def curvature_horizontal(metric: WarpingFunction, x, x_y, x_yy):
    """Geodesic curvature of the horizontal graph ``x(y)``; ``x`` is the graph value."""
    phi, dphi, _ = metric(x)
    e = np.exp(phi)
    return (dphi * e * (e**2 + 2.0 * x_y**2) - e * x_yy) / (e**2 + x_y**2) ** 1.5


# --------------------------------------------------------------------------
# geodesics


@dataclass(frozen=True)
class GeodesicParams:
    m: float
    h: float = 0.0

    def __post_init__(self):
        if not abs(self.m) < 1.0:
            raise ValueError("geodesic slope parameter must satisfy |m| < 1")


def geodesic_slope(metric: WarpingFunction, m: float, x):
    phi = metric.phi(x)
    e2 = np.exp(2.0 * np.asarray(phi, dtype=float))
    if np.any(e2 <= m * m):
        raise ValueError("geodesic slope undefined where exp(2 phi) <= m^2")
    with np.errstate(over="ignore", under="ignore"):
        out = m / (np.exp(phi) * np.sqrt(e2 - m * m))
    return float(out) if np.ndim(out) == 0 else out


def _breakpoints(metric: WarpingFunction, a: float, b: float):
    if metric.kind is not Kind.BLOOMING:
        return None
    pts = [p for p in (-2.0, -1.75, -1.25, -1.0, 1.0, 1.25, 1.75, 2.0) if min(a, b) < p < max(a, b)]
    return pts or None


def geodesic_sigma(metric: WarpingFunction, params: GeodesicParams, x: float) -> float:
    """``sigma_{m,h}(x) = h + int_0^x slope``, adaptive quadrature at 1e-10."""
    m = params.m
    if m == 0.0:
        return params.h
    val, _ = integrate.quad(
        lambda s: geodesic_slope(metric, m, s),
        0.0,
        x,
        epsabs=1e-10,
        epsrel=1e-12,
        limit=200,
        points=_breakpoints(metric, 0.0, x),
    )
    return params.h + val


def geodesic_m_through(metric: WarpingFunction, x: float, y: float) -> float:
    """Slope parameter ``m`` with ``sigma_{m,0}(x) = y`` (``x, y > 0``)."""
    f = lambda m: geodesic_sigma(metric, GeodesicParams(m), x) - y  # noqa: E731
    hi = 1.0 - 1e-15
    with warnings.catch_warnings():
        # for m near 1 the integrand drops by orders of magnitude where phi
        # leaves zero; quad still meets the tolerance that matters here
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        if f(hi) < 0:
            raise ValueError("no proper geodesic reaches that point")
        return optimize.brentq(f, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def geodesic_eta(metric: WarpingFunction, m: float, y, x_max: float, n_table: int = 801):
    """Inverse ``eta_{m,0} = sigma_{m,0}^{-1}`` evaluated at heights ``y``.

    sigma is tabulated on ``[0, x_max]`` by piecewise quadrature and each root
    is refined with Brent's method.  Heights within 1e-9 of ``sigma(x_max)``
    map to ``x_max``; larger heights are out of range and give ``inf``.
    """
    params = GeodesicParams(m)
    slope = lambda s: geodesic_slope(metric, m, s)  # noqa: E731
    xs = np.linspace(0.0, x_max, n_table)
    pieces = [
        integrate.quad(slope, a, b, epsabs=1e-12, epsrel=1e-12, points=_breakpoints(metric, a, b))[0]
        for a, b in zip(xs[:-1], xs[1:])
    ]
    sig = np.concatenate([[0.0], np.cumsum(pieces)]) + params.h
    y = np.atleast_1d(np.asarray(y, dtype=float))
    out = np.empty_like(y)
    for i, yv in enumerate(y):
        if yv <= sig[0]:
            out[i] = 0.0 if yv == sig[0] else np.nan
            continue
        if yv >= sig[-1]:
            out[i] = x_max if yv <= sig[-1] + 1e-9 else np.inf
            continue
        j = int(np.searchsorted(sig, yv))
        a, b = xs[j - 1], xs[j]
        base = sig[j - 1] - yv

        def g(s, a=a, base=base):
            return base + integrate.quad(slope, a, s, epsabs=1e-13, epsrel=1e-13)[0]

        out[i] = optimize.brentq(g, a, b, xtol=1e-13)
    return out


# --------------------------------------------------------------------------
# geodesic circles  R' = -phi'(R)


@dataclass(frozen=True)
class CircleFlow:
    t: np.ndarray
    R: np.ndarray
    extinction_time: float | None


def _rk4_radius(metric, R0, t_end, dt, r_stop, max_rel=0.01):
    """RK4 for ``R' = -phi'(R)``.

    The nominal step is ``dt``; a step is halved (deterministically) while it
    would change ``R`` by more than ``max_rel`` relatively, which only happens
    near extinction or at very large radii.  Stops when ``R <= r_stop`` and
    reports the crossing time interpolated within the last step.
    """
    f = lambda r: -metric.dphi(r)  # noqa: E731
    ts = [0.0]
    rs = [float(R0)]
    t, r = 0.0, float(R0)
    crossed = None
    while t < t_end - 1e-15:
        h = min(dt, t_end - t)
        k1 = f(r)
        while h * abs(k1) > max_rel * r and h > 1e-300:
            h *= 0.5
        while True:
            k2 = f(r + 0.5 * h * k1) if r + 0.5 * h * k1 > 0 or not metric.polar else math.nan
            k3 = f(r + 0.5 * h * k2) if not math.isnan(k2) and (r + 0.5 * h * k2 > 0 or not metric.polar) else math.nan
            k4 = f(r + h * k3) if not math.isnan(k3) and (r + h * k3 > 0 or not metric.polar) else math.nan
            r_new = r + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            if math.isfinite(r_new) and (r_new > 0 or not metric.polar):
                break
            h *= 0.5
        r_old = r
        t += h
        r = r_new
        ts.append(t)
        rs.append(r)
        if r <= r_stop:
            # linear interpolation inside the last step
            crossed = t - h * (r_stop - r) / (r_old - r) if r_old > r else t
            break
    return np.array(ts), np.array(rs), crossed


def circle_flow(metric: WarpingFunction, R0: float, t_end: float, dt: float = 1e-4) -> CircleFlow:
    """Radius of a geodesic circle under the flow, ``R' = -phi'(R)``.

    Integration stops at ``t_end`` or when the radius drops to 1e-6, in which
    case the crossing time is reported as the extinction time.
    """
    if R0 <= 0 or dt <= 0:
        raise ValueError("need R0 > 0 and dt > 0")
    ts, rs, ext = _rk4_radius(metric, R0, t_end, dt, R_MIN)
    return CircleFlow(ts, rs, ext)


def zeta(t):
    """Line flying in from infinity: ``1/t`` for ``0 < t <= 1/2``."""
    ta = np.asarray(t, dtype=float)
    if np.any(ta <= 0) or np.any(ta > 0.5):
        raise ValueError("zeta is only available for 0 < t <= 1/2")
    out = 1.0 / ta
    return float(out) if out.ndim == 0 else out


@dataclass
class BloomReport:
    blooms: bool
    status: str
    radii: np.ndarray
    pull_in_times: np.ndarray
    pull_in_curve: np.ndarray  # columns t, R
    limit_existence_time: float

    def pull_in_at(self, t):
        """Radius of the limiting pull-in curve at times ``t``."""
        tc, rc = self.pull_in_curve[:, 0], self.pull_in_curve[:, 1]
        return np.interp(t, tc, rc, left=np.nan, right=np.nan)


def default_radii() -> np.ndarray:
    return 4.0 * 2.0 ** np.arange(22)


def bloom_probe(
    metric: WarpingFunction,
    radii=None,
    horizon: float = 10.0,
    dt: float = 1e-4,
    tol: float = 1e-6,
    r_ref: float = R_REF,
) -> BloomReport:
    """Decide whether geodesic circles can come in from infinity in finite time.

    For each starting radius the time to shrink to ``r_ref`` is computed.  The
    metric blooms when these pull-in times settle (two consecutive ones within
    ``tol``); it does not bloom when they exceed ``horizon`` or their
    increments stop contracting.
    """
    radii = default_radii() if radii is None else np.asarray(radii, dtype=float)
    if np.any(radii <= 0) or np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be positive and increasing")
    times: list[float] = []
    curves = []
    status = "inconclusive"
    for R in radii:
        ts, rs, hit = _rk4_radius(metric, R, horizon, dt, r_ref)
        if hit is None:
            # pull-in from this radius takes longer than the horizon
            times.append(math.inf)
            status = "no-bloom"
            break
        times.append(hit)
        curves.append((ts, rs))
        if len(times) >= 2 and abs(times[-1] - times[-2]) < tol:
            status = "blooms"
            break
        if len(times) >= 3 and times[-1] - times[-2] >= times[-2] - times[-3]:
            status = "no-bloom"
            break
    T = np.array(times)
    if status != "blooms":
        return BloomReport(False, status, radii[: len(T)], T, np.empty((0, 2)), math.inf)
    # Aitken extrapolation of the converging pull-in times
    t_lim = T[-1]
    if len(T) >= 3:
        d1, d2 = T[-2] - T[-3], T[-1] - T[-2]
        if d1 > d2 > 0:
            t_lim = T[-1] + d2 * d2 / (d1 - d2)
    ts, rs = curves[-1]
    shift = t_lim - T[-1]
    curve = np.column_stack([ts + shift, rs])
    return BloomReport(True, status, radii[: len(T)], T, curve, float(t_lim))
