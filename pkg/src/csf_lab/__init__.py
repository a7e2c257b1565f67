"""Graphical curve shortening flow on warped-product plane metrics.

Modules: :mod:`warped_metric` (metrics, geodesics, circle ODE, blooming),
:mod:`parabolic_solver` (implicit solver for vertical and horizontal graphs),
:mod:`flows` (the boundary value problems, nested limit, barriers),
:mod:`diagnostics` (comparison and intersection checks) and :mod:`cli`.
"""
__version__ = "0.1.0"

from .warped_metric import WarpingFunction, GeodesicParams, BloomReport, bloom_probe, circle_flow  # noqa: E402,F401
from .parabolic_solver import (  # noqa: E402,F401
    DirichletSpec,
    Grid1D,
    GraphFrame,
    Operator,
    Status,
    Trajectory,
    solve_dirichlet,
)
