"""Quadrature on the unit sphere and velocity moments of a basis.

Node tables live in ``apdlr/data`` as plain text, one node per line
``x y z w`` with weights summing to one; the loader rescales them to 4*pi.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

FOUR_PI = 4.0 * np.pi

LEBEDEV_SIZES = (6, 26, 86, 110, 146, 194, 302, 590, 2702, 5810)

_DATA_ENV = "APDLR_QUADRATURE_DIR"


class QuadratureError(ValueError):
    """Unknown table size or malformed table file."""


@dataclass(frozen=True)
class VelocitySet:
    """Nodes ``(n, 3)`` on the unit sphere with positive weights ``(n,)``."""

    nodes: np.ndarray
    weights: np.ndarray
    name: str = ""

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        weights = np.array(self.weights, dtype=float)
        if nodes.ndim != 2 or nodes.shape[1] != 3 or weights.shape != (nodes.shape[0],):
            raise ValueError("nodes must be (n, 3) and weights (n,)")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def xi(self):
        return self.nodes[:, 0]

    @property
    def eta(self):
        return self.nodes[:, 1]

    @property
    def gamma(self):
        return self.nodes[:, 2]

    def integrate(self, f):
        """``<f>_v`` along the first axis of ``f``."""
        return np.tensordot(self.weights, f, axes=(0, 0))

    def inner(self, f, g):
        return self.integrate(np.asarray(f) * np.asarray(g))


def _table_dir(directory=None) -> Path:
    if directory is not None:
        return Path(directory)
    env = os.environ.get(_DATA_ENV)
    if env:
        return Path(env)
    return Path(str(resources.files("apdlr") / "data"))


def available_sizes(directory=None) -> list[int]:
    sizes = []
    for p in sorted(_table_dir(directory).glob("lebedev_*.txt")):
        try:
            sizes.append(int(p.stem.split("_")[1]))
        except ValueError:
            continue
    return sorted(sizes)


def load_velocity_set(n: int, directory=None) -> VelocitySet:
    """Load the vendored Lebedev rule with ``n`` nodes.

    Parameters
    ----------
    n : int
        Node count, one of :func:`available_sizes`.
    directory : path, optional
        Alternative table directory; defaults to ``$APDLR_QUADRATURE_DIR`` or
        the package data.
    """
    path = _table_dir(directory) / f"lebedev_{int(n):04d}.txt"
    if not path.exists():
        raise QuadratureError(
            f"no quadrature table with {n} nodes; available sizes: "
            f"{available_sizes(directory)}")
    try:
        data = np.loadtxt(path, comments="#", dtype=float, ndmin=2)
    except ValueError as exc:
        raise QuadratureError(f"malformed quadrature table {path}: {exc}") from exc
    if data.shape != (int(n), 4):
        raise QuadratureError(
            f"malformed quadrature table {path}: expected {n} rows of 4 columns, "
            f"got shape {data.shape}")
    nodes = np.ascontiguousarray(data[:, :3])
    w = data[:, 3]
    if np.any(w <= 0) or not np.all(np.isfinite(data)):
        raise QuadratureError(f"malformed quadrature table {path}: bad weights")
    norms = np.linalg.norm(nodes, axis=1)
    if np.max(np.abs(norms - 1.0)) > 1e-12:
        raise QuadratureError(f"malformed quadrature table {path}: nodes off the sphere")
    weights = FOUR_PI * w / w.sum()
    return VelocitySet(nodes, np.ascontiguousarray(weights), name=f"lebedev{n}")


def product_velocity_set(n_polar: int, n_azimuth: int) -> VelocitySet:
    """Gauss-Legendre in cos(theta) times equispaced azimuth.

    Allows arbitrary resolutions; with an even ``n_azimuth`` the set is
    antipodally symmetric.
    """
    mu, wmu = np.polynomial.legendre.leggauss(n_polar)
    phi = 2.0 * np.pi * (np.arange(n_azimuth) + 0.5) / n_azimuth
    MU, PHI = np.meshgrid(mu, phi, indexing="ij")
    s = np.sqrt(1.0 - MU**2)
    nodes = np.stack([s * np.cos(PHI), s * np.sin(PHI), MU], axis=-1).reshape(-1, 3)
    w = np.repeat(wmu, n_azimuth) * (2.0 * np.pi / n_azimuth)
    return VelocitySet(nodes, w, name=f"product{n_polar}x{n_azimuth}")


def moments(V, vs: VelocitySet):
    """Zeroth and first moments of each basis column.

    Returns
    -------
    mean : (r,) array, ``<V_j>_v``
    flux : (3, r) array, ``<v V_j>_v`` (rows xi, eta, gamma)
    """
    V = np.asarray(V)
    mean = vs.weights @ V
    flux = (vs.nodes * vs.weights[:, None]).T @ V
    return mean, flux


@dataclass(frozen=True)
class TransportTensors:
    """Projected advection matrices ``<d V_j V_l> - <V_j><d V_l>/4pi``.

    ``xp``/``xm`` use ``max(xi, 0)`` / ``min(xi, 0)``; ``yp``/``ym`` the same
    for ``eta``.
    """

    xp: np.ndarray
    xm: np.ndarray
    yp: np.ndarray
    ym: np.ndarray

    @property
    def x(self):
        return self.xp + self.xm

    @property
    def y(self):
        return self.yp + self.ym


def _projected(d, V, vs: VelocitySet, mean):
    wd = vs.weights * d
    return (V.T * wd) @ V - np.outer(mean, wd @ V) / FOUR_PI


def transport_tensors(V, vs: VelocitySet) -> TransportTensors:
    V = np.asarray(V)
    mean = vs.weights @ V
    xi, eta = vs.xi, vs.eta
    return TransportTensors(
        xp=_projected(np.maximum(xi, 0.0), V, vs, mean),
        xm=_projected(np.minimum(xi, 0.0), V, vs, mean),
        yp=_projected(np.maximum(eta, 0.0), V, vs, mean),
        ym=_projected(np.minimum(eta, 0.0), V, vs, mean),
    )
