"""Additive IMEX Runge-Kutta stage driver shared by the K, L and S substeps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class IMEXTableau:
    """Double Butcher tableau ``(A_expl, w_expl; A_impl, w_impl)``."""

    name: str
    A_expl: np.ndarray
    w_expl: np.ndarray
    A_impl: np.ndarray
    w_impl: np.ndarray

    def __post_init__(self):
        s = self.stages
        for M in (self.A_expl, self.A_impl):
            if M.shape != (s, s):
                raise ValueError("tableau matrices must be square and of equal size")
        if np.any(np.triu(self.A_expl) != 0):
            raise ValueError("explicit matrix must be strictly lower triangular")
        if np.any(np.triu(self.A_impl, 1) != 0):
            raise ValueError("implicit matrix must be lower triangular")

    @property
    def stages(self) -> int:
        return self.A_expl.shape[0]

    @property
    def c_expl(self):
        return self.A_expl.sum(axis=1)

    @property
    def c_impl(self):
        return self.A_impl.sum(axis=1)

    @property
    def stiffly_accurate(self) -> bool:
        return (np.array_equal(self.w_expl, self.A_expl[-1])
                and np.array_equal(self.w_impl, self.A_impl[-1]))


def ars111() -> IMEXTableau:
    """Forward-backward Euler: explicit part at the old time, implicit at the new."""
    return IMEXTableau(
        "ars111",
        A_expl=np.array([[0.0, 0.0], [1.0, 0.0]]),
        w_expl=np.array([1.0, 0.0]),
        A_impl=np.array([[0.0, 0.0], [0.0, 1.0]]),
        w_impl=np.array([0.0, 1.0]),
    )


def ars222() -> IMEXTableau:
    """Second order, L-stable, stiffly accurate; gamma = 1 - sqrt(2)/2."""
    g = 1.0 - np.sqrt(2.0) / 2.0
    d = 1.0 - 1.0 / (2.0 * g)
    return IMEXTableau(
        "ars222",
        A_expl=np.array([[0.0, 0.0, 0.0], [g, 0.0, 0.0], [d, 1.0 - d, 0.0]]),
        w_expl=np.array([d, 1.0 - d, 0.0]),
        A_impl=np.array([[0.0, 0.0, 0.0], [0.0, g, 0.0], [0.0, 1.0 - g, g]]),
        w_impl=np.array([0.0, 1.0 - g, g]),
    )


TABLEAUS = {"backward-euler": ars111, "ars111": ars111, "ars222": ars222}


def get_tableau(stepper) -> IMEXTableau:
    if isinstance(stepper, IMEXTableau):
        return stepper
    try:
        return TABLEAUS[stepper]()
    except KeyError:
        raise ValueError(f"unknown stepper {stepper!r}; choose from {sorted(TABLEAUS)}") from None


def imex_integrate(y0, t0, h, explicit, implicit_apply, implicit_solve, tableau):
    """One step of ``y' = E(t, y) + I(y)``.

    ``explicit(t, y)`` evaluates ``E``; ``implicit_apply(y)`` evaluates the
    linear stiff part ``I``; ``implicit_solve(rhs, c)`` returns ``y`` with
    ``y - c I(y) = rhs``.
    """
    Ae, Ai = tableau.A_expl, tableau.A_impl
    we, wi = tableau.w_expl, tableau.w_impl
    ce = tableau.c_expl
    s = tableau.stages
    sa = tableau.stiffly_accurate
    need_e = [bool(np.any(Ae[q + 1:, q] != 0)) or (not sa and we[q] != 0) for q in range(s)]
    need_i = [bool(np.any(Ai[q + 1:, q] != 0)) or (not sa and wi[q] != 0) for q in range(s)]
    E = [None] * s
    I = [None] * s
    y = y0
    for p in range(s):
        rhs = y0
        for q in range(p):
            if Ae[p, q] != 0:
                rhs = rhs + (h * Ae[p, q]) * E[q]
            if Ai[p, q] != 0:
                rhs = rhs + (h * Ai[p, q]) * I[q]
        y = implicit_solve(rhs, h * Ai[p, p]) if Ai[p, p] != 0 else rhs
        if need_e[p]:
            E[p] = explicit(t0 + ce[p] * h, y)
        if need_i[p]:
            I[p] = implicit_apply(y)
    if sa:
        return y
    out = y0
    for q in range(s):
        if we[q] != 0:
            out = out + (h * we[q]) * E[q]
        if wi[q] != 0:
            out = out + (h * wi[q]) * I[q]
    return out
