"""Circles coming in from infinity on the blooming metric.

Circles of radius R0 shrink under R' = -phi'(R).  On the blooming metric
phi'(R) = R^2 beyond R = 2, so the flow from any radius reaches a given
radius in bounded time, and the radii at fixed t converge to 1/t as R0 grows.
On the flat plane (phi' = 1/R) the pull-in time grows like R0^2 instead.
"""
import numpy as np

from csf_lab.warped_metric import bloom_probe, builtin_metric, circle_flow

bloom = builtin_metric("blooming")
flat = builtin_metric("flat-polar")

report = bloom_probe(bloom)
print(f"blooming: status={report.status}, time to reach R=2 from infinity ~ {report.limit_existence_time:.6f}")

ts = np.array([0.05, 0.1, 0.2, 0.3, 0.45])
print("\n   t      limit R(t)      1/t")
for t, r in zip(ts, report.pull_in_at(ts)):
    print(f"{t:5.2f}  {r:12.8f}  {1 / t:10.6f}")

print("\nradius at t = 0.2 for growing start radii")
for R0 in (4, 16, 64, 256, 1024):
    cf = circle_flow(bloom, R0, 0.21)
    print(f"  R0 = {R0:5d}:  R(0.2) = {np.interp(0.2, cf.t, cf.R):.6f}")

print("\nflat plane, extinction times R0^2 / 2")
for R0 in (1, 2, 4):
    print(f"  R0 = {R0}: {circle_flow(flat, R0, R0**2).extinction_time:.5f}")
