"""Time stepping for the coupled density / low-rank micro system.

First order: the K, L, S substeps (any ordering) over a full step with the
density frozen at ``t^n``, each with forward-backward Euler, followed by an
explicit density update that uses the new factors.

Second order: half density step, K-L-S over ``dt/2`` and S-L-K over ``dt/2``
(both with ARS(2,2,2) and the density frozen at the half step), then a
midpoint density update with the half-step factors.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from . import mesh
from .diagnostics import RunRecord, effective_rank, singular_values
from .imex import IMEXTableau, ars222
from .lowrank import (DEFAULT_SEED, LowRankFactors, NumericalFailure, k_step, l_step,
                      orthonormality_defect, s_step)
from .velocity import FOUR_PI, moments

ORDERINGS = tuple("".join(p) for p in itertools.permutations("KLS"))
CFL_KINDS = ("mixed", "hyperbolic", "parabolic")

ARSTableau = IMEXTableau


@dataclass(frozen=True)
class SchemeConfig:
    order: int = 1
    substep_order: str = "KLS"
    cfl: str = "mixed"
    c1: float = 0.1
    c2: float = 0.1
    t_end: float = 0.1
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ValueError(f"order must be 1 or 2, got {self.order}")
        if self.substep_order not in ORDERINGS:
            raise ValueError(f"substep_order must be one of {ORDERINGS}, got {self.substep_order!r}")
        if self.cfl not in CFL_KINDS:
            raise ValueError(f"cfl must be one of {CFL_KINDS}, got {self.cfl!r}")
        if not (self.c1 > 0 and self.c2 > 0):
            raise ValueError("CFL constants c1, c2 must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")


@dataclass
class State:
    F: LowRankFactors
    rho: np.ndarray
    t: float = 0.0


# ------------------------------------------------------------ density -----

def macro_flux(F: LowRankFactors, vs):
    """Face fluxes ``<v g>_v / 4 pi`` of the low-rank micro part, x and y."""
    _, flux = moments(F.V, vs)
    c = F.S @ flux[:2].T / FOUR_PI
    return F.X @ c[:, 0], F.X @ c[:, 1]


def _div_flux(F, grid, vs):
    fx, fy = macro_flux(F, vs)
    return mesh.div_faces(fx.reshape(grid.shape), fy.reshape(grid.shape), grid)


def rho_step_euler(rho, F, coeffs, grid, vs, G_macro, dt):
    out = rho - dt * _div_flux(F, grid, vs) - dt * coeffs.sigma_a_macro * rho
    if G_macro is not None:
        out = out + dt * G_macro
    return out


def rho_step_midpoint(rho_n, F_half, rho_half, coeffs, grid, vs, G_macro_half, dt):
    out = rho_n - dt * _div_flux(F_half, grid, vs) - dt * coeffs.sigma_a_macro * rho_half
    if G_macro_half is not None:
        out = out + dt * G_macro_half
    return out


# ---------------------------------------------------------------- steps ---

def _substeps(F, sequence, rho, disc, h, stepper, t, seed):
    kw = dict(stepper=stepper, micro_source=disc.micro_source, t=t)
    cache = {}
    for name in sequence:
        if name == "K":
            F = k_step(F, rho, disc.coeffs, disc.grid, disc.vs, h, seed=seed, **kw)
        elif name == "L":
            F = l_step(F, rho, disc.coeffs, disc.grid, disc.vs, h, seed=seed, cache=cache, **kw)
        else:
            F = s_step(F, rho, disc.coeffs, disc.grid, disc.vs, h, cache=cache, **kw)
    return F


def _macro(disc, t):
    return None if disc.macro_source is None else disc.macro_source(t)


def step_first_order(state: State, cfg: SchemeConfig, disc, dt) -> State:
    F = _substeps(state.F, cfg.substep_order, state.rho, disc, dt,
                  "backward-euler", state.t, cfg.seed)
    rho = rho_step_euler(state.rho, F, disc.coeffs, disc.grid, disc.vs,
                         _macro(disc, state.t), dt)
    return State(F, rho, state.t + dt)


def step_second_order(state: State, cfg: SchemeConfig, disc, dt) -> State:
    h = 0.5 * dt
    tab = ars222()
    t = state.t
    rho_half = rho_step_euler(state.rho, state.F, disc.coeffs, disc.grid, disc.vs,
                              _macro(disc, t), h)
    F_half = _substeps(state.F, cfg.substep_order, rho_half, disc, h, tab, t, cfg.seed)
    F_new = _substeps(F_half, cfg.substep_order[::-1], rho_half, disc, h, tab, t + h, cfg.seed)
    rho = rho_step_midpoint(state.rho, F_half, rho_half, disc.coeffs, disc.grid, disc.vs,
                            _macro(disc, t + h), dt)
    return State(F_new, rho, t + dt)


def step(state, cfg, disc, dt):
    if cfg.order == 1:
        return step_first_order(state, cfg, disc, dt)
    return step_second_order(state, cfg, disc, dt)


def advance(state, cfg, disc, dt, index):
    """:func:`step` that tags a :class:`NumericalFailure` with the step index."""
    try:
        return step(state, cfg, disc, dt)
    except NumericalFailure as exc:
        raise NumericalFailure(f"step {index} (t={state.t:.6g}): {exc}", step=index) from exc


# ----------------------------------------------------------- time steps ---

def select_dt(cfg: SchemeConfig, grid, coeffs) -> float:
    """CFL time step; ``mixed`` uses the smallest positive scattering value."""
    h = min(grid.dx, grid.dy)
    if cfg.cfl == "mixed":
        return cfg.c1 * coeffs.sigma_s_min * h**2 + cfg.c2 * coeffs.eps * h
    if cfg.cfl == "hyperbolic":
        return cfg.c1 * h
    return cfg.c1 * h**2


def time_steps(dt, t_end):
    """Uniform steps of ``dt`` with the last one clipped to land on ``t_end``."""
    n = int(np.floor(t_end / dt * (1.0 + 1e-12)))
    steps = [dt] * n
    rest = t_end - n * dt
    if rest > 1e-10 * dt:
        steps.append(rest)
    return steps


# ------------------------------------------------------------------ run ---

@dataclass
class RunResult:
    state: State
    record: RunRecord
    steps: list = field(default_factory=list)


def run(disc, cfg: SchemeConfig, rank, augment=True, dt=None, record_every=1,
        callback=None, track_orthonormality=False) -> RunResult:
    """Integrate ``disc`` to ``cfg.t_end`` with the low-rank scheme.

    ``callback(step_index, state)`` is called after every step.
    """
    F = disc.initial_factors(rank, augment=augment)
    state = State(F, disc.initial_rho(), 0.0)
    dt = select_dt(cfg, disc.grid, disc.coeffs) if dt is None else dt
    steps = time_steps(dt, cfg.t_end)
    record = RunRecord(config=dict(cfg.__dict__, rank=rank, augment=augment, dt=dt))
    record.add(0, state.t, 0.0, singular_values(state.F.S), masses(state.rho),
               orthonormality_defect(state.F, disc.grid, disc.vs) if track_orthonormality else None)
    t0 = time.perf_counter()
    for i, h in enumerate(steps, start=1):
        state = advance(state, cfg, disc, h, i)
        if i == len(steps):
            state.t = cfg.t_end
        if i % record_every == 0 or i == len(steps):
            record.add(i, state.t, h, singular_values(state.F.S), masses(state.rho),
                       orthonormality_defect(state.F, disc.grid, disc.vs)
                       if track_orthonormality else None)
        if callback is not None:
            callback(i, state)
    record.wall_time = time.perf_counter() - t0
    return RunResult(state, record, steps)


def masses(rho):
    """Sum of the density over each family (vertex, center)."""
    rho = np.asarray(rho)
    return (float(np.sum(rho[0])), float(np.sum(rho[1])))


__all__ = [
    "ARSTableau", "ORDERINGS", "SchemeConfig", "State", "RunResult", "run", "step", "advance",
    "step_first_order", "step_second_order", "rho_step_euler", "rho_step_midpoint",
    "select_dt", "time_steps", "masses", "macro_flux", "effective_rank",
]
