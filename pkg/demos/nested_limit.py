"""Non-uniqueness from the x-axis.

Solve the vertical problems on [-n, n] with data that vanishes inside
[-(n-1), n-1] and is pinned to -1, 1 at the ends.  On the blooming metric the
ends pull the graph up in finite time whatever n is, so the per-node minimum
over n is a flow that starts from y = 0 but leaves it immediately.  The
subsolution ubar bounds it from below.
"""
import numpy as np

from csf_lab import flows
from csf_lab.warped_metric import WarpingFunction

metric = WarpingFunction.blooming()
fam = flows.build_nested([8, 16, 24], metric, resolution=20, T=0.4, dt=2e-3)

x = fam.x
show = np.searchsorted(x, [0.0, 2.0, 4.0, 5.5, 6.0, 7.0, 8.0])
print("x      " + "".join(f"{x[i]:9.2f}" for i in show))
for t in (0.0, 0.1, 0.2, 0.4):
    lim = fam.limit_at(t)
    print(f"t={t:3.1f}  " + "".join(f"{lim[i]:9.4f}" for i in show))
    if t > 0:
        ub = flows.barrier_ubar(x, t)
        print("  ubar " + "".join(f"{ub[i]:9.4f}" for i in show))

k = int(np.argmin(np.abs(fam.times - 0.2)))
print(f"\npeel check at t=0.2, eps=0.5 (x0 = {flows.peel_x0(0.2, 0.5):.3f}):",
      flows.peel_check(fam.limit_frames[k], 0.5))
