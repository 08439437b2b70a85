"""Spatial convergence on the manufactured solution.

Under the parabolic time-step restriction dt = 0.25 dx^2 the combined error
decreases like dx^2 for every eps, from the kinetic to the diffusive regime.
A small velocity set keeps this demo to well under a minute.
"""
from apdlr.diagnostics import convergence_slope
from apdlr.harness import RunConfig, converge_errors

grids = [8, 16, 32]
for eps in (1.0, 1e-6):
    cfg = RunConfig(problem="manufactured", n_v=86, rank=5, cfl="parabolic", c1=0.25,
                    t_end=0.02)
    rows = converge_errors(cfg, grids, eps)
    h = [r[0] for r in rows]
    e = [r[1] for r in rows]
    print(f"eps={eps:g}")
    for nx, err in zip(grids, e):
        print(f"  Nx={nx:4d}  error={err:.3e}")
    print(f"  fitted slope {convergence_slope(e, h):.2f}")
