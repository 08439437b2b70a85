"""Periodic staggered grid in two space dimensions.

Four point families share the same ``(Ny, Nx)`` index space (``l`` outer,
``k`` inner):

========  ==================================  ============
family    location of entry ``[l, k]``        carries
========  ==================================  ============
vertex    ``(x_k, y_l)``                      density
center    ``(x_{k+1/2}, y_{l+1/2})``          density
x-face    ``(x_{k+1/2}, y_l)``                micro part
y-face    ``(x_k, y_{l+1/2})``                micro part
========  ==================================  ============

A macro field is an array of shape ``(2, Ny, Nx)`` (vertex block, then center
block); a face field has shape ``(2, Ny, Nx)`` as well (x-face block, then
y-face block).  Every stencil below accepts trailing axes, so a stack of ``r``
basis functions can be passed as ``(2, Ny, Nx, r)``.  Periodicity is handled
with ``np.roll``; there are no ghost cells.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

VERTEX, CENTER = 0, 1
XFACE, YFACE = 0, 1

_KAX, _LAX = 2, 1  # axis of k (x direction) and l (y direction)


@dataclass(frozen=True)
class StaggeredGrid:
    """Uniform periodic grid on ``[a, b] x [c, d]`` with ``Nx x Ny`` cells."""

    a: float
    b: float
    c: float
    d: float
    Nx: int
    Ny: int

    def __post_init__(self):
        if self.Nx < 4 or self.Ny < 4:
            raise ValueError(f"need Nx, Ny >= 4, got Nx={self.Nx}, Ny={self.Ny}")
        if not (self.b > self.a and self.d > self.c):
            raise ValueError("domain bounds must satisfy b > a and d > c")

    @classmethod
    def square(cls, lo: float, hi: float, N: int) -> "StaggeredGrid":
        return cls(lo, hi, lo, hi, N, N)

    @property
    def dx(self) -> float:
        return (self.b - self.a) / self.Nx

    @property
    def dy(self) -> float:
        return (self.d - self.c) / self.Ny

    @property
    def shape(self) -> tuple[int, int, int]:
        """Shape of a macro or face field."""
        return (2, self.Ny, self.Nx)

    @property
    def size(self) -> int:
        """Number of points in a macro (or face) field, both families."""
        return 2 * self.Nx * self.Ny

    def _axes(self, xshift: float, yshift: float):
        x = self.a + (np.arange(self.Nx) + xshift) * self.dx
        y = self.c + (np.arange(self.Ny) + yshift) * self.dy
        return np.meshgrid(x, y)  # (Ny, Nx), 'xy' indexing

    def macro_points(self):
        """Coordinates ``(X, Y)`` of the density points, each of shape ``(2, Ny, Nx)``."""
        xv, yv = self._axes(0.0, 0.0)
        xc, yc = self._axes(0.5, 0.5)
        return np.stack([xv, xc]), np.stack([yv, yc])

    def face_points(self):
        """Coordinates ``(X, Y)`` of the face centers, each of shape ``(2, Ny, Nx)``."""
        xx, yx = self._axes(0.5, 0.0)
        xy, yy = self._axes(0.0, 0.5)
        return np.stack([xx, xy]), np.stack([yx, yy])

    def metadata(self) -> dict:
        return {"a": self.a, "b": self.b, "c": self.c, "d": self.d,
                "Nx": self.Nx, "Ny": self.Ny}


def _shift(f, n, axis):
    # value at index i - n, i.e. shift(f, 1, kax)[.., k] == f[.., k-1]
    return np.roll(f, n, axis=axis)


def d_upwind_x(f, dx, side):
    """Second-order one-sided x-derivative within each face family.

    ``side="plus"`` looks backwards (for positive velocities),
    ``side="minus"`` looks forwards.
    """
    if side == "plus":
        return (3.0 * f - 4.0 * _shift(f, 1, _KAX) + _shift(f, 2, _KAX)) / (2.0 * dx)
    if side == "minus":
        return (-3.0 * f + 4.0 * _shift(f, -1, _KAX) - _shift(f, -2, _KAX)) / (2.0 * dx)
    raise ValueError(f"side must be 'plus' or 'minus', got {side!r}")


def d_upwind_y(f, dy, side):
    """y counterpart of :func:`d_upwind_x`."""
    if side == "plus":
        return (3.0 * f - 4.0 * _shift(f, 1, _LAX) + _shift(f, 2, _LAX)) / (2.0 * dy)
    if side == "minus":
        return (-3.0 * f + 4.0 * _shift(f, -1, _LAX) - _shift(f, -2, _LAX)) / (2.0 * dy)
    raise ValueError(f"side must be 'plus' or 'minus', got {side!r}")


def d_upwind(f, grid: StaggeredGrid, direction, side):
    if direction == "x":
        return d_upwind_x(f, grid.dx, side)
    if direction == "y":
        return d_upwind_y(f, grid.dy, side)
    raise ValueError(f"direction must be 'x' or 'y', got {direction!r}")


def d_central_rho(rho, grid: StaggeredGrid, direction):
    """Compact central difference of a macro field, landing on the faces.

    On x-faces the x-derivative pairs the two neighbouring vertices and the
    y-derivative the two neighbouring centers; y-faces mirror this.
    """
    rho = np.asarray(rho)
    vert, cent = rho[VERTEX], rho[CENTER]
    out = np.empty_like(rho, dtype=float)
    # within a single family block the k axis is 1 and the l axis is 0
    if direction == "x":
        out[XFACE] = (np.roll(vert, -1, axis=1) - vert) / grid.dx
        out[YFACE] = (cent - np.roll(cent, 1, axis=1)) / grid.dx
    elif direction == "y":
        out[XFACE] = (cent - np.roll(cent, 1, axis=0)) / grid.dy
        out[YFACE] = (np.roll(vert, -1, axis=0) - vert) / grid.dy
    else:
        raise ValueError(f"direction must be 'x' or 'y', got {direction!r}")
    return out


def d_central_X(X, grid: StaggeredGrid, direction):
    """Wide central difference ``(f(x+h) - f(x-h)) / 2h`` within each face family."""
    if direction == "x":
        return (_shift(X, -1, _KAX) - _shift(X, 1, _KAX)) / (2.0 * grid.dx)
    if direction == "y":
        return (_shift(X, -1, _LAX) - _shift(X, 1, _LAX)) / (2.0 * grid.dy)
    raise ValueError(f"direction must be 'x' or 'y', got {direction!r}")


def div_faces(Fx, Fy, grid: StaggeredGrid):
    """Flux-form divergence of face data onto the density points.

    ``Fx`` is the x-component of the flux and ``Fy`` the y-component, both
    given on the two face families.  Vertices use the x-component on x-faces
    and the y-component on y-faces; centers the other way round.
    """
    Fx = np.asarray(Fx)
    Fy = np.asarray(Fy)
    out = np.empty(np.broadcast_shapes(Fx.shape, Fy.shape))
    fxx, fxy = Fx[XFACE], Fx[YFACE]
    fyx, fyy = Fy[XFACE], Fy[YFACE]
    out[VERTEX] = ((fxx - np.roll(fxx, 1, axis=1)) / grid.dx
                   + (fyy - np.roll(fyy, 1, axis=0)) / grid.dy)
    out[CENTER] = ((np.roll(fxy, -1, axis=1) - fxy) / grid.dx
                   + (np.roll(fyx, -1, axis=0) - fyx) / grid.dy)
    return out


def laplacian_5pt(rho, grid: StaggeredGrid, weight_faces=None):
    """``div(w grad rho)`` on both density families with the compact 5-point stencil."""
    gx = d_central_rho(rho, grid, "x")
    gy = d_central_rho(rho, grid, "y")
    if weight_faces is not None:
        gx = gx * weight_faces
        gy = gy * weight_faces
    return div_faces(gx, gy, grid)


def inner_x(F, G, grid: StaggeredGrid):
    """Midpoint-rule inner product over both face families.

    ``0.5 * dx * dy * sum(F * G)``.  ``np.sum`` uses pairwise summation, which
    keeps the accumulated round-off well below the AP comparison levels.
    """
    return 0.5 * grid.dx * grid.dy * np.sum(np.asarray(F) * np.asarray(G))


def face_weight(grid: StaggeredGrid) -> float:
    """Uniform quadrature weight of a single face point."""
    return 0.5 * grid.dx * grid.dy
