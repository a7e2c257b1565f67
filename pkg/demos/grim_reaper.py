"""Solver accuracy on the translating grim reaper.

With phi = 0 the graph y = t - log cos x moves up at unit speed.  Clamp the
ends at x = +-1 to the exact values and compare.
"""
import math

import numpy as np

from csf_lab.parabolic_solver import DirichletSpec, Grid1D, Operator, solve_dirichlet
from csf_lab.warped_metric import WarpingFunction

flat = WarpingFunction.flat()
edge = -math.log(math.cos(1.0))
prev = None
for per_unit in (25, 50, 100, 200):
    grid = Grid1D.with_resolution(-1, 1, per_unit, 1e-3)
    spec = DirichletSpec(Operator.V, flat, grid, lambda x: -np.log(np.cos(x)),
                         lambda t: t + edge, lambda t: t + edge)
    traj = solve_dirichlet(spec, 1.0, keep_every=1000)
    err = np.max(np.abs(traj.frames[-1].values - (1.0 - np.log(np.cos(grid.nodes)))))
    rate = "" if prev is None else f"  order {math.log2(prev / err):.2f}"
    print(f"h = 1/{per_unit:<4d} max error at t=1: {err:.3e}{rate}")
    prev = err
