"""Benchmark problems and their discretization on a staggered grid.

A :class:`ProblemSpec` holds point-evaluable coefficients, initial data and
sources.  Velocity-dependent data (micro initial value, sources) are given in
separable form ``sum_q a_q(t, x) b_q(v)`` so that the low-rank solver never
needs to form a dense ``grid x velocity`` array.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .lowrank import CoefficientFields, init_factors
from .mesh import StaggeredGrid
from .velocity import FOUR_PI, VelocitySet, load_velocity_set


@dataclass(frozen=True)
class SeparableSource:
    """``a(x) * tf(t)`` paired with velocity profiles ``b(v)``.

    ``spatial`` has shape ``(points, q)``; ``velocity`` is ``(n, q)`` for a
    micro source and ``None`` for a macro source (then the ``q`` terms are
    summed).
    """

    spatial: np.ndarray
    velocity: Optional[np.ndarray] = None
    time_factor: Optional[Callable[[float], object]] = None

    def __call__(self, t):
        a = self.spatial if self.time_factor is None else self.spatial * self.time_factor(t)
        if self.velocity is None:
            return a.sum(axis=-1)
        return a, self.velocity


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    bounds: tuple
    eps: float
    sigma_s: Callable
    sigma_a: Callable
    rho0: Callable
    # (x, y, vs) -> (A, B) with g0 = A B^T, or None for g0 = 0
    g0: Optional[Callable] = None
    # (x, y, vs) -> SeparableSource; x, y are flat point arrays
    macro_source: Optional[Callable] = None
    micro_source: Optional[Callable] = None
    exact_rho: Optional[Callable] = None
    desk: dict = field(default_factory=dict)
    paper: dict = field(default_factory=dict)
    description: str = ""

    def defaults(self, paper_scale=False) -> dict:
        out = dict(self.desk)
        if paper_scale:
            out.update(self.paper)
        return out


# --------------------------------------------------------------- catalog ---

def _zero(x, y):
    return np.zeros_like(np.asarray(x, dtype=float))


def _one(x, y):
    return np.ones_like(np.asarray(x, dtype=float))


def _mean(vs: VelocitySet, B):
    return (vs.weights @ B) / FOUR_PI


def manufactured(eps=1.0) -> ProblemSpec:
    """Smooth manufactured solution on ``[0, 1]^2`` with a rank-one micro part.

    ``rho = exp(-t) s(x, y)`` with ``s = sin^2(2 pi x) sin^2(2 pi y)`` and
    ``g = rho (eta + eta^3) / 3``; ``sigma_S = 1``, ``sigma_A = 0``.
    """
    tp = 2.0 * np.pi

    def s(x, y):
        return np.sin(tp * x) ** 2 * np.sin(tp * y) ** 2

    def sx(x, y):
        return tp * np.sin(2 * tp * x) * np.sin(tp * y) ** 2

    def sy(x, y):
        return tp * np.sin(tp * x) ** 2 * np.sin(2 * tp * y)

    def h(eta):
        return (eta + eta**3) / 3.0

    def full_source(x, y, vs):
        # G = d_t f + v.grad f / eps + g / eps, f = rho (1 + eps h), separated
        xi, eta = vs.xi, vs.eta
        A = np.stack([s(x, y), s(x, y), sx(x, y), sy(x, y)], axis=-1)
        B = np.stack([-np.ones_like(xi), (1.0 / eps - eps) * h(eta),
                      xi / eps + xi * h(eta), eta / eps + eta * h(eta)], axis=-1)
        return A, B

    def macro(x, y, vs):
        A, B = full_source(x, y, vs)
        return SeparableSource(A * _mean(vs, B), None, lambda t: np.exp(-t))

    def micro(x, y, vs):
        A, B = full_source(x, y, vs)
        return SeparableSource(A / eps, B - _mean(vs, B), lambda t: np.exp(-t))

    def g0(x, y, vs):
        return s(x, y)[:, None], h(vs.eta)[:, None]

    return ProblemSpec(
        name="manufactured", bounds=(0.0, 1.0, 0.0, 1.0), eps=eps,
        sigma_s=_one, sigma_a=_zero, rho0=s, g0=g0,
        macro_source=macro, micro_source=micro,
        exact_rho=lambda t, x, y: np.exp(-t) * s(x, y),
        desk=dict(Nx=32, n_v=302, rank=5, cfl="mixed", c1=0.18, c2=0.1, t_end=0.1),
        paper=dict(Nx=128, n_v=590),
        description="manufactured smooth solution, exact density available",
    )


def manufactured_source_pointwise(t, x, y, v, eps):
    """The full kinetic source ``G(t, x, v)`` of :func:`manufactured`, pointwise."""
    tp = 2.0 * np.pi
    xi, eta = v[..., 0], v[..., 1]
    s = np.sin(tp * x) ** 2 * np.sin(tp * y) ** 2
    sx = tp * np.sin(2 * tp * x) * np.sin(tp * y) ** 2
    sy = tp * np.sin(tp * x) ** 2 * np.sin(2 * tp * y)
    h = (eta + eta**3) / 3.0
    e = np.exp(-t)
    return e * (-s + s * (1.0 / eps - eps) * h
                + sx * (xi / eps + xi * h) + sy * (eta / eps + eta * h))


def _gaussian(var, x0=0.0, y0=0.0):
    def rho0(x, y):
        return np.exp(-((x - x0) ** 2 + (y - y0) ** 2) / (4.0 * var)) / (4.0 * np.pi * var)
    return rho0


def variable_sigma_s(x, y):
    c = np.sqrt(np.asarray(x, dtype=float) ** 2 + np.asarray(y, dtype=float) ** 2)
    inner = 0.999 * c**4 * (c + np.sqrt(2.0)) ** 2 * (c - np.sqrt(2.0)) ** 2 + 0.001
    return np.where(c < 1.0, inner, 1.0)


def gaussian_constant(eps=1e-6) -> ProblemSpec:
    return ProblemSpec(
        name="gaussian_constant", bounds=(-1.0, 1.0, -1.0, 1.0), eps=eps,
        sigma_s=_one, sigma_a=_zero, rho0=_gaussian(1e-2),
        desk=dict(Nx=64, n_v=302, rank=5, cfl="mixed", c1=0.1, c2=0.1, t_end=0.1),
        paper=dict(Nx=128, n_v=590),
        description="Gaussian pulse, sigma_S = 1, diffusive regime",
    )


def gaussian_variable(eps=0.01) -> ProblemSpec:
    return ProblemSpec(
        name="gaussian_variable", bounds=(-1.0, 1.0, -1.0, 1.0), eps=eps,
        sigma_s=variable_sigma_s, sigma_a=_zero, rho0=_gaussian(1e-2),
        desk=dict(Nx=64, n_v=302, rank=40, cfl="mixed", c1=0.1, c2=0.1, t_end=0.004),
        paper=dict(Nx=256, n_v=2702, rank=60, t_end=0.012),
        description="Gaussian pulse, radially varying sigma_S in [0.001, 1]",
    )


def _data_path(name) -> Path:
    return Path(str(resources.files("apdlr") / "data" / name))


def load_block_layout(path=None):
    """Read a block layout file.

    Each non-comment line is ``x_min x_max y_min y_max sigma_a sigma_s``;
    blocks are half-open ``[min, max)``.  Returns an ``(nblocks, 6)`` array.
    """
    path = _data_path("two_material_blocks.txt") if path is None else Path(path)
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] != 6:
        raise ValueError(f"block layout {path} must have 6 columns, found {data.shape[1]}")
    if np.any(data[:, 1] <= data[:, 0]) or np.any(data[:, 3] <= data[:, 2]):
        raise ValueError(f"block layout {path} has empty blocks")
    return data


def _block_field(blocks, column, background):
    def f(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.full(np.broadcast_shapes(x.shape, y.shape), float(background))
        for x0, x1, y0, y1, *vals in blocks:
            mask = (x >= x0) & (x < x1) & (y >= y0) & (y < y1)
            out[mask] = vals[column]
        return out
    return f


def two_material(eps=1.0, layout=None) -> ProblemSpec:
    blocks = load_block_layout(layout)

    def G(x, y):
        return np.where((x >= 2) & (x < 3) & (y >= 2) & (y < 3), 1.0, 0.0)

    def macro(x, y, vs):
        return SeparableSource(G(x, y)[:, None])

    return ProblemSpec(
        name="two_material", bounds=(0.0, 5.0, 0.0, 5.0), eps=eps,
        sigma_s=_block_field(blocks, 1, 1.0), sigma_a=_block_field(blocks, 0, 0.0),
        rho0=_gaussian(1e-2, 2.5, 2.5), macro_source=macro,
        desk=dict(Nx=50, n_v=146, rank=20, cfl="mixed", c1=0.1, c2=0.1, t_end=0.1),
        paper=dict(Nx=250, n_v=2702, rank=150, t_end=1.7),
        description="lattice-style absorber blocks with a central source",
    )


def line_source(eps=1.0) -> ProblemSpec:
    return ProblemSpec(
        name="line_source", bounds=(-1.5, 1.5, -1.5, 1.5), eps=eps,
        sigma_s=_one, sigma_a=_zero, rho0=_gaussian(4e-4),
        desk=dict(Nx=60, n_v=302, rank=30, cfl="mixed", c1=0.025, c2=0.025, t_end=0.1),
        paper=dict(Nx=150, n_v=5810, rank=600, t_end=0.7),
        description="narrow Gaussian approximating a line source",
    )


CATALOG = {
    "manufactured": manufactured,
    "gaussian_constant": gaussian_constant,
    "gaussian_variable": gaussian_variable,
    "two_material": two_material,
    "line_source": line_source,
}


def get_problem(name, **kwargs) -> ProblemSpec:
    try:
        factory = CATALOG[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; available: {', '.join(CATALOG)}") from None
    return factory(**kwargs)


# ----------------------------------------------------------- discretize ----

@dataclass
class Discretization:
    """A problem sampled on a grid and a velocity set."""

    problem: ProblemSpec
    grid: StaggeredGrid
    vs: VelocitySet
    coeffs: CoefficientFields
    macro_source: Optional[Callable] = None
    micro_source: Optional[Callable] = None

    def initial_rho(self):
        X, Y = self.grid.macro_points()
        return np.asarray(self.problem.rho0(X, Y), dtype=float)

    def initial_g(self):
        """Separable initial micro part ``(A, B)`` or ``None``."""
        if self.problem.g0 is None:
            return None
        X, Y = self.grid.face_points()
        return self.problem.g0(X.reshape(-1), Y.reshape(-1), self.vs)

    def initial_factors(self, r, augment=True):
        g0 = self.initial_g()
        if g0 is None:
            g0 = (np.zeros((self.grid.size, 1)), np.zeros((self.vs.n, 1)))
        return init_factors(g0, self.grid, self.vs, r, augment=augment)

    def exact_rho(self, t):
        if self.problem.exact_rho is None:
            return None
        X, Y = self.grid.macro_points()
        return self.problem.exact_rho(t, X, Y)


def discretize(problem: ProblemSpec, Nx, n_v=None, Ny=None, vs=None):
    """Sample ``problem`` on an ``Nx x Ny`` grid with an ``n_v``-node velocity set."""
    a, b, c, d = problem.bounds
    grid = StaggeredGrid(a, b, c, d, int(Nx), int(Ny or Nx))
    if vs is None:
        vs = load_velocity_set(n_v)
    Xf, Yf = grid.face_points()
    Xm, Ym = grid.macro_points()
    ev = lambda f, X, Y: np.asarray(f(X, Y), dtype=float) * np.ones(grid.shape)
    coeffs = CoefficientFields(
        eps=float(problem.eps),
        sigma_s_faces=ev(problem.sigma_s, Xf, Yf),
        sigma_a_faces=ev(problem.sigma_a, Xf, Yf),
        sigma_s_macro=ev(problem.sigma_s, Xm, Ym),
        sigma_a_macro=ev(problem.sigma_a, Xm, Ym),
    )
    macro = micro = None
    if problem.macro_source is not None:
        src = problem.macro_source(Xm.reshape(-1), Ym.reshape(-1), vs)
        macro = _reshaped_macro(src, grid)
    if problem.micro_source is not None:
        micro = problem.micro_source(Xf.reshape(-1), Yf.reshape(-1), vs)
    return Discretization(problem, grid, vs, coeffs, macro, micro)


def _reshaped_macro(src: SeparableSource, grid):
    def G(t):
        return src(t).reshape(grid.shape)
    return G
