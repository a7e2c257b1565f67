"""``csf-lab``: run a scenario, write CSV/SVG artifacts and a manifest.

Exit status is 0 when every check of the scenario passes, 1 when a check or
a solve fails and 2 for configuration errors.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import diagnostics as diag
from . import flows
from .parabolic_solver import Status, solve_dirichlet
from .warped_metric import (
    GeodesicParams,
    bloom_probe,
    builtin_metric,
    builtin_names,
    curvature_vertical,
    geodesic_m_through,
    geodesic_sigma,
    geodesic_slope,
    zeta,
)

log = logging.getLogger("csf_lab")

SCENARIOS = ("bloom", "nonunique", "barriers", "invariants", "uniqueness-probe", "geodesics")
DEFAULT_T = {"uniqueness-probe": 1.0, "barriers": 1.0}
DEFAULT_METRIC = {"uniqueness-probe": "flat"}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    scenario: str
    metric: str = "blooming"
    resolution: int = 40
    dt: float = 1e-3
    T: float = 0.5
    ns: list = field(default_factory=lambda: [8, 16, 24])
    output_dir: str = "csf-lab-out"
    emit_svg: bool = False

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {', '.join(SCENARIOS)}")
        if self.metric not in builtin_names():
            raise ConfigError(f"metric: unknown metric {self.metric!r}; built-ins are {', '.join(builtin_names())}")
        if self.resolution < 10:
            raise ConfigError("resolution: must be at least 10 nodes per unit")
        if not 0 < self.dt <= 1e-2:
            raise ConfigError("dt: must satisfy 0 < dt <= 1e-2")
        if not self.T > 0:
            raise ConfigError("T: must be positive")
        if not self.ns or any(n < 2 for n in self.ns) or any(b <= a for a, b in zip(self.ns, self.ns[1:])):
            raise ConfigError("ns: must be increasing integers >= 2")
        return self


# --------------------------------------------------------------------------
# configuration


def _parse_ns(text: str, where: str) -> list:
    try:
        return [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise ConfigError(f"{where}: ns must be a comma separated list of integers, got {text!r}") from None


_CASTS = {"metric": str, "resolution": int, "dt": float, "T": float, "output_dir": str}


def _read_file(path: str, scenario: str) -> dict:
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keep "T" upper case
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    values: dict = {}
    for section in ("experiment", scenario):
        if not cp.has_section(section):
            continue
        for key, raw in cp.items(section):
            where = f"{path} [{section}] {key}"
            if key == "ns":
                values["ns"] = _parse_ns(raw, where)
            elif key in ("emit_svg", "svg"):
                try:
                    values["emit_svg"] = cp.getboolean(section, key)
                except ValueError:
                    raise ConfigError(f"{where}: expected a boolean, got {raw!r}") from None
            elif key in ("out", "output_dir"):
                values["output_dir"] = raw
            elif key in _CASTS:
                try:
                    values[key] = _CASTS[key](raw)
                except ValueError:
                    raise ConfigError(f"{where}: cannot parse {raw!r}") from None
            else:
                raise ConfigError(f"{where}: unknown key")
    return values


def parse_config(scenario: str, path: str | None = None, **flags) -> ExperimentConfig:
    """Defaults, then the config file (``[experiment]`` and ``[<scenario>]``), then flags."""
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")
    values = {"T": DEFAULT_T.get(scenario, 0.5), "metric": DEFAULT_METRIC.get(scenario, "blooming")}
    if path:
        values.update(_read_file(path, scenario))
    values.update({k: v for k, v in flags.items() if v is not None})
    return ExperimentConfig(scenario=scenario, **values).validate()


# --------------------------------------------------------------------------
# artifacts


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


class Artifacts:
    """Collects CSV bodies, SVG figures and check results; writes them at the end."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.csv: dict[str, str] = {}
        self.svg: dict[str, str] = {}
        self.checks: list[dict] = []
        self.solves: list[dict] = []
        self.units: dict[str, dict] = {}

    def table(self, name: str, header, rows):
        # header cells are "name [unit]"; the CSV gets bare names, units go to the manifest
        names = [h.split(" [")[0] for h in header]
        self.units[name] = {h.split(" [")[0]: h.split(" [")[1].rstrip("]") if " [" in h else "" for h in header}
        lines = [",".join(names)]
        lines += [",".join(_fmt(v) for v in row) for row in rows]
        self.csv[name] = "\n".join(lines) + "\n"

    def check(self, name: str, ok: bool, value=None, tolerance=None):
        ok = bool(ok)
        self.checks.append({"name": name, "pass": ok, "value": _jsonable(value), "tolerance": tolerance})
        log.info("%s %s", "PASS" if ok else "FAIL", name)
        return ok

    def solve(self, label: str, traj):
        self.solves.append({"label": label, "status": traj.status.value, "stop_time": traj.stop_time,
                            "message": traj.message})
        return traj.status is Status.COMPLETED

    def plot(self, name: str, curves, xlabel: str, ylabel: str):
        if self.cfg.emit_svg:
            self.svg[name] = svg_lines(curves, xlabel, ylabel)

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks) and all(s["status"] == "completed" for s in self.solves)

    def write(self) -> Path:
        out = Path(self.cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {}
        for name, body in sorted({**self.csv, **self.svg}.items()):
            (out / name).write_text(body, encoding="utf-8")
            files[name] = hashlib.sha256(body.encode("utf-8")).hexdigest()
        combined = hashlib.sha256("".join(f"{k}:{v}\n" for k, v in sorted(files.items())).encode()).hexdigest()
        manifest = {
            "tool": "csf-lab",
            "version": __version__,
            "config": asdict(self.cfg),
            "files": files,
            "units": self.units,
            "content_hash": combined,
            "checks": self.checks,
            "solves": self.solves,
            "passed": self.passed,
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return out


def _jsonable(v):
    if v is None or isinstance(v, (str, bool)):
        return v
    if isinstance(v, (int, np.integer)):
        return int(v)
    v = float(v)
    return v if math.isfinite(v) else str(v)


def svg_lines(curves, xlabel: str = "x", ylabel: str = "y", width: int = 640, height: int = 400) -> str:
    """One polyline per ``(label, xs, ys)``; the viewport fits all data."""
    xs_all = np.concatenate([np.asarray(c[1], dtype=float) for c in curves])
    ys_all = np.concatenate([np.asarray(c[2], dtype=float) for c in curves])
    ok = np.isfinite(xs_all) & np.isfinite(ys_all)
    x0, x1 = float(xs_all[ok].min()), float(xs_all[ok].max())
    y0, y1 = float(ys_all[ok].min()), float(ys_all[ok].max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pad = 40
    sx = (width - 2 * pad) / (x1 - x0)
    sy = (height - 2 * pad) / (y1 - y0)
    colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
        'fill="none" stroke="#888"/>',
        f'<text x="{width / 2:.1f}" y="{height - 8}" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="12" y="{height / 2:.1f}" font-size="12" transform="rotate(-90 12 {height / 2:.1f})" '
        f'text-anchor="middle">{ylabel}</text>',
        f'<text x="{pad}" y="{pad - 6}" font-size="10">x [{x0:.4g}, {x1:.4g}]  y [{y0:.4g}, {y1:.4g}]</text>',
    ]
    for i, (label, xs, ys) in enumerate(curves):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        keep = np.isfinite(xs) & np.isfinite(ys)
        pts = " ".join(
            f"{pad + (a - x0) * sx:.2f},{height - pad - (b - y0) * sy:.2f}" for a, b in zip(xs[keep], ys[keep])
        )
        colour = colours[i % len(colours)]
        parts.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.2" points="{pts}">'
                     f"<title>{label}</title></polyline>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# --------------------------------------------------------------------------
# scenarios


def _probe_times(T: float, wanted=(0.1, 0.2, 0.4)):
    return [t for t in wanted if t <= T + 1e-12]


def run_bloom(cfg: ExperimentConfig, art: Artifacts):
    metric = builtin_metric(cfg.metric)
    report = bloom_probe(metric)
    art.check("bloom_probe conclusive", report.status != "inconclusive", report.status)
    if not report.blooms:
        art.table("bloom.csv", ["t [time]", "R [length]", "zeta [length]", "rel_err [1]"], [])
        art.check("metric blooms", metric.kind.value != "blooming", report.status)
        return
    hi = min(cfg.T, 0.5)
    ts = np.round(np.arange(0.05, hi - 0.05 + 1e-9, 0.01), 12) if hi > 0.05 else np.array([])
    R = report.pull_in_at(ts)
    z = np.array([zeta(t) for t in ts])
    rel = np.abs(R - z) / z
    art.table("bloom.csv", ["t [time]", "R [length]", "zeta [length]", "rel_err [1]"], zip(ts, R, z, rel))
    art.check("metric blooms", True, report.limit_existence_time)
    if metric.kind.value == "blooming" and len(ts):
        art.check("pull-in curve matches 1/t", np.max(rel) <= 1e-3, np.max(rel), 1e-3)
    art.plot("bloom.svg", [("R(t)", ts, R), ("1/t", ts, z)], "t", "R")


def run_nonunique(cfg: ExperimentConfig, art: Artifacts):
    metric = builtin_metric(cfg.metric)
    fam = flows.build_nested(cfg.ns, metric, cfg.resolution, cfg.T, cfg.dt)
    for n, tr in fam.trajectories.items():
        art.solve(f"V_{n}", tr)
    x = fam.x
    rows, curves = [], []
    for t in _probe_times(cfg.T):
        lim = fam.limit_at(t)
        ub = flows.barrier_ubar(x, t)
        frame = fam.limit_frames[int(np.argmin(np.abs(fam.times - t)))]
        try:
            peel = flows.peel_check(frame, 0.5)
        except flows.DomainTooSmall:
            peel = False
        rows += [(t, xi, yi, ui, peel) for xi, yi, ui in zip(x, lim, ub)]
        art.check(f"ubar below limit at t={t:g}", np.max(ub - lim) <= 1e-6, np.max(ub - lim), 1e-6)
        if abs(t - 0.2) < 1e-12:
            art.check("peel check at t=0.2, eps=0.5", peel, flows.peel_x0(t, 0.5))
        if abs(t - 0.1) < 1e-12:
            art.check("limit not identically zero at t=0.1", np.max(np.abs(lim)) > 1e-6, np.max(np.abs(lim)))
        curves += [(f"limit t={t:g}", x, lim), (f"ubar t={t:g}", x, ub)]
    art.table("nonunique.csv", ["t [time]", "x [length]", "y_limit [length]", "ubar [length]", "peel_ok [bool]"], rows)
    for a, b in zip(cfg.ns, cfg.ns[1:]):
        va = flows.restrict(fam.trajectories[a], 0.0, a).values
        vb = flows.restrict(fam.trajectories[b], 0.0, a).values
        nt = min(len(va), len(vb))
        gap = np.max(vb[:nt] - va[:nt])
        art.check(f"nesting y_{b} <= y_{a} on [0,{a}]", gap <= 1e-6, gap, 1e-6)
    art.plot("nonunique.svg", curves, "x", "y")


def run_barriers(cfg: ExperimentConfig, art: Artifacts):
    metric = builtin_metric(cfg.metric)
    rows = []
    ys = np.linspace(0.05, 3.0, 60)
    ts = np.linspace(0.05, 0.45, 41)
    Y, Tm = np.meshgrid(ys, ts)
    rb = flows.barrier_b_residual(metric, Y, Tm)
    rows += [("b_under_H", y, t, r) for y, t, r in zip(Y.ravel(), Tm.ravel(), rb.ravel())]
    art.check("b is a supersolution", rb.min() >= -1e-8, rb.min(), -1e-8)
    k = 4
    xs = np.linspace(0.0, k + 1.0, 101)
    r4 = flows.linear_residual(metric, xs)
    rows += [("4x_under_V", x, 0.0, r) for x, r in zip(xs, r4)]
    art.check("4x is a subsolution", r4.max() <= 1e-12, r4.max(), 1e-12)
    tau = flows.foliation_tau(k)
    X, Tk = np.meshgrid(xs, np.linspace(0.0, tau, 21))
    rf = flows.foliation_bound_residual(metric, k, X, Tk)
    rows += [("4xexp_under_V", x, t, r) for x, t, r in zip(X.ravel(), Tk.ravel(), rf.ravel())]
    art.check("4x exp(A_k t) is a supersolution", rf.min() >= -1e-8, rf.min(), -1e-8)
    art.table("barrier_residuals.csv", ["kind", "coordinate [length]", "t [time]", "residual [length/time]"], rows)

    region_rows, curves = [], []
    for c in (3.0, 5.0):
        spec = flows.spec_Hc(c, metric, cfg.resolution, cfg.dt, cfg.T)
        traj = solve_dirichlet(spec, cfg.T)
        art.solve(spec.label, traj)
        y = traj.grid.nodes
        ct = [spec.left_bc(t) for t in traj.times]
        lower, upper = flows.hc_region(metric, c, y, ct)
        V = traj.values
        low_gap = np.max(lower[None, :] - V)
        up_gap = np.max(V - upper)
        art.check(f"H_{c:g} above the geodesic", low_gap <= 1e-6, low_gap, 1e-6)
        art.check(f"H_{c:g} below the chord", up_gap <= 1e-6, up_gap, 1e-6)
        mono = np.min(np.diff(V[1:], axis=1))
        art.check(f"H_{c:g} nondecreasing in y", mono >= -1e-8, mono, -1e-8)
        step = max(1, len(traj.frames) // 10)
        for k_t in range(0, len(traj.frames), step):
            t = traj.times[k_t]
            region_rows += [(c, t, yi, xi, lo, hi) for yi, xi, lo, hi in zip(y, V[k_t], lower, upper[k_t])]
        curves += [(f"H_{c:g} t={traj.times[-1]:g}", V[-1], y), (f"geodesic c={c:g}", lower, y)]
    art.table("hc_region.csv", ["c [length]", "t [time]", "y [length]", "x [length]", "lower [length]",
                                "upper [length]"], region_rows)
    art.plot("hc_region.svg", curves, "x", "y")


def run_invariants(cfg: ExperimentConfig, art: Artifacts):
    metric = builtin_metric(cfg.metric)
    fam = flows.build_nested(cfg.ns, metric, cfg.resolution, cfg.T, cfg.dt)
    rows = []

    def record(name, n, value, tol, ok):
        rows.append((name, n, value, tol, ok))
        art.check(f"{name} n={n}", ok, value, tol)

    for n, tr in fam.trajectories.items():
        art.solve(f"V_{n}", tr)
        V = tr.values
        odd = np.max(np.abs(V + V[:, ::-1]))
        record("odd", n, odd, 1e-9, odd < 1e-9)
        mono = np.min(np.diff(V[1:], axis=1))
        record("nondecreasing", n, mono, -1e-8, mono >= -1e-8)
        lo, hi = flows.parallelogram(n, tr.grid.nodes)
        gap = max(np.max(lo - V), np.max(V - hi))
        record("parallelogram", n, gap, 1e-6, gap <= 1e-6)
        grid = tr.grid
        worst = 0
        for h in np.round(np.arange(-0.9, 0.91, 0.3), 12):
            rep = diag.intersection_monotonicity(tr, diag.constant_trajectory(grid, h, tr.times))
            ok = rep.monotone and bool(np.all(rep.counts[1:] == 1))
            worst = max(worst, int(rep.counts[1:].max()))
            if not ok:
                record(f"intersections h={h:g}", n, int(rep.counts.max()), 1, False)
        record("intersections with constants", n, worst, 1, worst == 1)
    for a, b in zip(cfg.ns, cfg.ns[1:]):
        ta = flows.restrict(fam.trajectories[a], 0.0, a)
        tb = flows.restrict(fam.trajectories[b], 0.0, a)
        ok = diag.avoidance_check(tb, ta, tol=1e-6)
        gap = np.max(tb.values - ta.values)
        record(f"nesting vs {a}", b, gap, 1e-6, ok)
    art.table("invariants.csv", ["check", "n [1]", "value", "tolerance", "pass [bool]"], rows)


def run_uniqueness(cfg: ExperimentConfig, art: Artifacts):
    metric = builtin_metric(cfg.metric)
    try:
        rep = diag.uniqueness_probe(metric, 1.0, (25, 50, 100), cfg.T, dt=cfg.dt)
    except diag.PreconditionViolation as exc:
        art.check("metric does not bloom", False, str(exc))
        return
    art.table("uniqueness.csv", ["L [length]", "interior_sup [length]", "barrier_scale [length]"],
              [(L, s, rep.barrier_scale) for L, s in zip(rep.half_widths, rep.interior_sup)])
    for L, st in zip(rep.half_widths, rep.statuses):
        art.solves.append({"label": f"probe L={L:g}", "status": st.value, "stop_time": None, "message": ""})
    art.check("interior sup decreases with L", rep.decays, float(rep.interior_sup[-1]))
    art.check("interior sup below 0.05 at L=100", rep.interior_sup[-1] < 0.05, rep.interior_sup[-1], 0.05)


def run_geodesics(cfg: ExperimentConfig, art: Artifacts):
    metric = builtin_metric(cfg.metric)
    rows, curves = [], []
    xs = np.linspace(-3.0, 3.0, 121)
    for m in (0.1, 0.5, 0.9):
        p = GeodesicParams(m)
        sig = np.array([geodesic_sigma(metric, p, x) for x in xs])
        yx = geodesic_slope(metric, m, xs)
        h = 1e-5
        yxx = (geodesic_slope(metric, m, xs + h) - geodesic_slope(metric, m, xs - h)) / (2 * h)
        kappa = curvature_vertical(metric, xs, yx, yxx)
        rows += [(m, x, s, k) for x, s, k in zip(xs, sig, kappa)]
        art.check(f"geodesic m={m:g} has zero curvature", np.max(np.abs(kappa)) < 1e-6, np.max(np.abs(kappa)), 1e-6)
        odd = np.max(np.abs(sig + sig[::-1]))
        art.check(f"sigma m={m:g} is odd", odd < 1e-9, odd, 1e-9)
        curves.append((f"m={m:g}", xs, sig))
    art.table("geodesics.csv", ["m [1]", "x [length]", "sigma [length]", "kappa [1/length]"], rows)
    if metric.kind.value == "blooming":
        # a proper geodesic gains more than one unit of height between x = 1 and x = 2
        m = geodesic_m_through(metric, 2.0, 2.5)
        p = GeodesicParams(m)
        gain = geodesic_sigma(metric, p, 2.0) - geodesic_sigma(metric, p, 1.0)
        art.check("sigma(2) > sigma(1) + 1 for some m", gain > 1.0, gain)
    art.plot("geodesics.svg", curves, "x", "sigma")


RUNNERS = {
    "bloom": run_bloom,
    "nonunique": run_nonunique,
    "barriers": run_barriers,
    "invariants": run_invariants,
    "uniqueness-probe": run_uniqueness,
    "geodesics": run_geodesics,
}


def run(cfg: ExperimentConfig) -> int:
    art = Artifacts(cfg)
    RUNNERS[cfg.scenario](cfg, art)
    out = art.write()
    log.info("artifacts written to %s", out)
    return 0 if art.passed else 1


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="csf-lab", description=__doc__.splitlines()[0])
    ap.add_argument("scenario", help=f"one of: {', '.join(SCENARIOS)}")
    ap.add_argument("--config", help="INI file with [experiment] and per-scenario sections")
    ap.add_argument("--metric", help=f"warping function ({', '.join(builtin_names())})")
    ap.add_argument("--dt", type=float)
    ap.add_argument("--resolution", type=int, help="grid nodes per unit length")
    ap.add_argument("--T", dest="T", type=float, help="time horizon")
    ap.add_argument("--ns", help="comma separated n values for nested runs")
    ap.add_argument("--out", dest="output_dir", help="output directory")
    ap.add_argument("--svg", dest="emit_svg", action="store_true", default=None, help="also write SVG plots")
    ap.add_argument("-q", "--quiet", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        ns = _parse_ns(args.ns, "--ns") if args.ns is not None else None
        cfg = parse_config(
            args.scenario,
            args.config,
            metric=args.metric,
            dt=args.dt,
            resolution=args.resolution,
            T=args.T,
            ns=ns,
            output_dir=args.output_dir,
            emit_svg=args.emit_svg,
        )
        flows.max_workers()  # validates CSF_LAB_THREADS
    except (ConfigError, ValueError) as exc:
        print(f"csf-lab: configuration error: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
