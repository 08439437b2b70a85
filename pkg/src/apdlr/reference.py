"""Reference solvers: full-tensor macro-micro IMEX and the limiting diffusion scheme.

Both run on the same staggered families and velocity set as the low-rank
solver so comparisons need no interpolation.
"""
from __future__ import annotations

import time

import numpy as np

from . import mesh
from .integrator import SchemeConfig, select_dt, time_steps
from .velocity import FOUR_PI


def _upwind_transport(gf, c, grid, axis, h):
    # c^+ D_+ g + c^- D_- g along one axis, per velocity node (last axis)
    cp = np.maximum(c, 0.0)
    cm = np.minimum(c, 0.0)
    gm1 = np.roll(gf, 1, axis=axis)
    gm2 = np.roll(gf, 2, axis=axis)
    gp1 = np.roll(gf, -1, axis=axis)
    gp2 = np.roll(gf, -2, axis=axis)
    out = (3.0 * (cp - cm)) * gf
    out -= (4.0 * cp) * gm1
    out += cp * gm2
    out += (4.0 * cm) * gp1
    out -= cm * gp2
    out *= 1.0 / (2.0 * h)
    return out


def micro_rhs_explicit(rho, g, coeffs, grid, vs, source=None):
    """Explicit part of the discrete micro equation for a dense ``g`` of shape ``(m, n)``.

    Upwind transport minus its velocity average, central density gradient,
    absorption and the (already split) micro source.
    """
    eps = coeffs.eps
    n = vs.n
    gf = g.reshape(grid.shape + (n,))
    tr = _upwind_transport(gf, vs.xi, grid, 2, grid.dx)
    tr += _upwind_transport(gf, vs.eta, grid, 1, grid.dy)
    tr = tr.reshape(-1, n)
    tr -= (tr @ vs.weights)[:, None] / FOUR_PI
    gx = mesh.d_central_rho(rho, grid, "x").reshape(-1, 1)
    gy = mesh.d_central_rho(rho, grid, "y").reshape(-1, 1)
    out = tr
    out *= -1.0 / eps
    out -= (gx * vs.xi + gy * vs.eta) / eps**2
    out -= coeffs.sigma_a_faces.reshape(-1, 1) * g
    if source is not None:
        A, B = source
        out += A @ B.T
    return out


def full_tensor_step(rho, g, coeffs, grid, vs, dt, macro_source=None, micro_source=None, t=0.0):
    """First-order IMEX step of the macro-micro system with a dense micro part.

    ``g`` is stored node-major per face point, shape ``(m, n)``.  Returns
    ``(rho, g)`` at ``t + dt``.
    """
    src = None if micro_source is None else micro_source(t)
    rhs = micro_rhs_explicit(rho, g, coeffs, grid, vs, src)
    rhs *= dt
    rhs += g
    rhs /= (1.0 + dt * coeffs.sigma_s_faces.reshape(-1, 1) / coeffs.eps**2)
    g_new = rhs
    fx = (g_new @ (vs.weights * vs.xi)) / FOUR_PI
    fy = (g_new @ (vs.weights * vs.eta)) / FOUR_PI
    div = mesh.div_faces(fx.reshape(grid.shape), fy.reshape(grid.shape), grid)
    rho_new = rho - dt * div - dt * coeffs.sigma_a_macro * rho
    if macro_source is not None:
        rho_new = rho_new + dt * macro_source(t)
    return rho_new, g_new


def dense_initial_g(disc):
    g0 = disc.initial_g()
    if g0 is None:
        return np.zeros((disc.grid.size, disc.vs.n))
    A, B = g0
    return np.asarray(A).reshape(disc.grid.size, -1) @ np.asarray(B).reshape(disc.vs.n, -1).T


def run_full_tensor(disc, cfg: SchemeConfig, dt=None, callback=None):
    """Integrate ``disc`` with :func:`full_tensor_step`; returns ``(rho, g, wall_time)``."""
    rho = disc.initial_rho()
    g = dense_initial_g(disc)
    dt = select_dt(cfg, disc.grid, disc.coeffs) if dt is None else dt
    t = 0.0
    t0 = time.perf_counter()
    for i, h in enumerate(time_steps(dt, cfg.t_end), start=1):
        rho, g = full_tensor_step(rho, g, disc.coeffs, disc.grid, disc.vs, h,
                                  disc.macro_source, disc.micro_source, t)
        t += h
        if callback is not None:
            callback(i, t, rho, g)
    return rho, g, time.perf_counter() - t0


# ------------------------------------------------------------ diffusion ---

def diffusion_operator(rho, coeffs, grid):
    """``div(grad(rho) / (3 sigma_S))`` with the compact 5-point stencil."""
    ss = coeffs.sigma_s_faces
    if np.any(ss <= 0):
        raise ValueError("the diffusion limit needs sigma_S > 0 on every face")
    return mesh.laplacian_5pt(rho, grid, 1.0 / (3.0 * ss))


def diffusion_step(rho, coeffs, grid, dt, source=None, t=0.0, stage="euler", rho_lag=None):
    """Explicit step of the limiting diffusion equation.

    ``stage="euler"`` is forward Euler.  ``stage="rk2"`` is the two-stage
    limit of the second-order scheme: a half step whose diffusion term uses
    ``rho_lag`` (the previous half-step density), then a midpoint step;
    it returns ``(rho_next, rho_half)``.
    """
    G0 = 0.0 if source is None else source(t)
    if stage == "euler":
        return rho + dt * (diffusion_operator(rho, coeffs, grid)
                           - coeffs.sigma_a_macro * rho + G0)
    if stage == "rk2":
        lag = rho if rho_lag is None else rho_lag
        half = rho + 0.5 * dt * (diffusion_operator(lag, coeffs, grid)
                                 - coeffs.sigma_a_macro * rho + G0)
        Gh = 0.0 if source is None else source(t + 0.5 * dt)
        new = rho + dt * (diffusion_operator(half, coeffs, grid)
                          - coeffs.sigma_a_macro * half + Gh)
        return new, half
    raise ValueError(f"stage must be 'euler' or 'rk2', got {stage!r}")


def run_diffusion(disc, dt, t_end, stage="euler", callback=None, first_lag=None):
    """Integrate the diffusion limit on the same grid.

    For ``rk2``, ``first_lag`` supplies the lagged density used by the first
    half step (``None`` means the initial density).
    """
    rho = disc.initial_rho()
    lag = first_lag
    t = 0.0
    for i, h in enumerate(time_steps(dt, t_end), start=1):
        if stage == "rk2":
            rho, lag = diffusion_step(rho, disc.coeffs, disc.grid, h, disc.macro_source, t,
                                      "rk2", lag)
        else:
            rho = diffusion_step(rho, disc.coeffs, disc.grid, h, disc.macro_source, t)
        t += h
        if callback is not None:
            callback(i, t, rho)
    return rho
