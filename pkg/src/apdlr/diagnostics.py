"""Error norms, rank tracking and convergence slopes."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import CENTER

RANK_THRESHOLD = 1e-5


def l2_error_centers(rho_a, rho_b, grid):
    """Discrete L2 distance over the cell-center family.

    ``sqrt(dx * dy * sum((a - b)^2))``, which is the usual ``dx^2`` weighting
    on square cells.
    """
    a = np.asarray(rho_a, dtype=float)
    b = np.asarray(rho_b, dtype=float)
    if a.shape != grid.shape or b.shape != grid.shape:
        raise ValueError(f"fields of shape {a.shape} / {b.shape} do not match grid {grid.shape}")
    d = a[CENTER] - b[CENTER]
    return float(np.sqrt(grid.dx * grid.dy * np.sum(d * d)))


def singular_values(S):
    return np.linalg.svd(np.asarray(S), compute_uv=False)


def effective_rank(S, threshold=RANK_THRESHOLD) -> int:
    """Number of singular values of ``S`` strictly above ``threshold``."""
    return int(np.sum(singular_values(S) > threshold))


def convergence_slope(errors, h) -> float:
    """Least-squares slope of ``log(error)`` against ``log(h)``."""
    e = np.asarray(errors, dtype=float)
    h = np.asarray(h, dtype=float)
    if e.shape != h.shape or e.size < 3:
        raise ValueError("need at least three (h, error) pairs")
    if np.any(e <= 0) or np.any(h <= 0):
        raise ValueError("errors and mesh sizes must be positive")
    slope, _ = np.polyfit(np.log(h), np.log(e), 1)
    return float(slope)


@dataclass
class RunRecord:
    config: dict = field(default_factory=dict)
    steps: list = field(default_factory=list)
    times: list = field(default_factory=list)
    dts: list = field(default_factory=list)
    sigmas: list = field(default_factory=list)
    ranks: list = field(default_factory=list)
    masses: list = field(default_factory=list)
    ortho: list = field(default_factory=list)
    wall_time: float = 0.0
    errors: dict = field(default_factory=dict)

    def add(self, step, t, dt, sigma, mass, ortho=None):
        sigma = np.sort(np.abs(np.asarray(sigma)))[::-1]
        self.steps.append(int(step))
        self.times.append(float(t))
        self.dts.append(float(dt))
        self.sigmas.append(sigma)
        self.ranks.append(effective_rank(np.diag(sigma)))
        self.masses.append(tuple(mass))
        self.ortho.append(ortho)

    def mass_drift(self):
        """Largest relative change of the per-family mass over the run."""
        m = np.asarray(self.masses)
        ref = np.maximum(np.abs(m[0]), 1e-300)
        return float(np.max(np.abs(m - m[0]) / ref))

    @property
    def final_rank(self) -> int:
        return self.ranks[-1]
