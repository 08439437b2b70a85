"""Low-rank micro part ``g = X S V^T`` and the projector-splitting substeps.

Shapes: ``X`` is ``(m, r)`` with ``m = 2 Nx Ny`` face points (x-faces then
y-faces, each row-major), ``V`` is ``(n, r)`` over velocity nodes and ``S`` is
``(r, r)``.  ``X`` is orthonormal in :func:`apdlr.mesh.inner_x`, ``V`` in the
quadrature inner product ``sum(w f g)``.

Each substep integrates its subflow with an IMEX Runge-Kutta tableau: the
relaxation term ``sigma_S / eps^2`` is implicit, transport, density forcing,
absorption and sources are explicit.  ``rho`` is frozen during a substep.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from . import mesh
from .imex import get_tableau, imex_integrate
from .velocity import FOUR_PI, VelocitySet, moments, transport_tensors

DEFAULT_SEED = 20190101
PIVOT_RTOL = 1e-13
SSTEP_MAX_COND = 1e12


class NumericalFailure(RuntimeError):
    """A substep hit an ill-posed linear system; ``step`` is set by the driver."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


@dataclass
class LowRankFactors:
    X: np.ndarray
    S: np.ndarray
    V: np.ndarray

    @property
    def rank(self) -> int:
        return self.S.shape[0]

    def copy(self) -> "LowRankFactors":
        return LowRankFactors(self.X.copy(), self.S.copy(), self.V.copy())


@dataclass(frozen=True)
class CoefficientFields:
    """Scattering/absorption sampled on faces and density points, plus ``eps``."""

    eps: float
    sigma_s_faces: np.ndarray
    sigma_a_faces: np.ndarray
    sigma_s_macro: np.ndarray
    sigma_a_macro: np.ndarray

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if np.any(self.sigma_s_faces < 0) or np.any(self.sigma_a_faces < 0):
            raise ValueError("coefficients must be non-negative")
        ss = np.asarray(self.sigma_s_faces, dtype=float)
        sa = np.asarray(self.sigma_a_faces, dtype=float)
        # uniform fields let the Galerkin matrices collapse to multiples of I
        object.__setattr__(self, "_ss_uniform", float(ss.flat[0]) if np.all(ss == ss.flat[0]) else None)
        object.__setattr__(self, "_sa_zero", bool(np.all(sa == 0)))

    @classmethod
    def constant(cls, grid, eps, sigma_s=1.0, sigma_a=0.0):
        full = lambda v: np.full(grid.shape, float(v))
        return cls(eps, full(sigma_s), full(sigma_a), full(sigma_s), full(sigma_a))

    @property
    def sigma_s_min(self) -> float:
        """Smallest positive scattering value (zero-scattering cells excluded)."""
        pos = self.sigma_s_faces[self.sigma_s_faces > 0]
        return float(pos.min()) if pos.size else 0.0


def _weights_sqrt(weights, rows):
    w = np.asarray(weights, dtype=float)
    if w.ndim == 0:
        return np.full(rows, np.sqrt(float(w)))
    if w.shape != (rows,):
        raise ValueError(f"weights of shape {w.shape} do not match {rows} rows")
    return np.sqrt(w)


def _completion(Qt, p, rows, seed):
    rng = np.random.default_rng([seed, p])
    v = rng.standard_normal(rows)
    for _ in range(2):
        v -= (Qt[:p] @ v) @ Qt[:p]
    return v / np.linalg.norm(v)


def _qr_cgs2(A, tol, seed):
    # classical Gram-Schmidt with reorthogonalization, on rows of A^T so that
    # every basis vector is contiguous
    rows, r = A.shape
    Qt = np.zeros((r, rows))
    R = np.zeros((r, r))
    At = np.ascontiguousarray(A.T)
    for p in range(r):
        v = At[p].copy()
        for _ in range(2):
            c = Qt[:p] @ v
            v -= c @ Qt[:p]
            R[:p, p] += c
        nrm = np.linalg.norm(v)
        if nrm <= tol:
            Qt[p] = _completion(Qt, p, rows, seed)
        else:
            R[p, p] = nrm
            Qt[p] = v / nrm
    return Qt.T, R


def weighted_qr(M, weights, seed=DEFAULT_SEED):
    """QR factorization orthonormal in ``sum(weights * f * g)``.

    Returns ``(Q, R)`` with ``M = Q R``, ``R`` upper triangular with a
    non-negative diagonal.  Columns whose pivot falls below
    ``1e-13 * ||M||`` get ``R[p, p] = 0`` and a reproducible pseudo-random
    direction orthogonal to the preceding ones.

    ``weights`` is a scalar (uniform) or one weight per row.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError("weighted_qr expects a 2-D array")
    rows, r = M.shape
    if r > rows:
        raise ValueError(f"cannot orthonormalize {r} columns in dimension {rows}")
    sw = _weights_sqrt(weights, rows)
    A = M * sw[:, None]
    tol = PIVOT_RTOL * np.linalg.norm(A)
    Q, R = scipy.linalg.qr(A, mode="economic", check_finite=False)
    sign = np.where(np.diag(R) < 0, -1.0, 1.0)
    Q *= sign
    R *= sign[:, None]
    if r and np.min(np.abs(np.diag(R))) <= tol:
        Q, R = _qr_cgs2(A, tol, seed)
    return Q / sw[:, None], R


# ---------------------------------------------------------------- setup ----

def _velocity_candidates(right, vs, r, augment):
    cols = [right]
    if augment:
        cols.insert(0, vs.nodes)
    cand = np.hstack(cols)
    if cand.shape[1] < r:
        cand = np.hstack([cand, np.zeros((vs.n, r - cand.shape[1]))])
    Q, _ = weighted_qr(cand, vs.weights)
    return Q[:, :r]


def init_factors(g0, grid, vs: VelocitySet, r, augment=False):
    """Rank-``r`` factors of the initial micro part.

    ``g0`` is either a dense ``(m, n)`` array or a pair ``(A, B)`` with
    ``g0 = A B^T``.  With ``augment=True`` the span of ``V`` is forced to
    contain ``xi, eta, gamma`` (needed for the diffusion limit).
    """
    m, n = grid.size, vs.n
    if r < 1 or r > min(m, n):
        raise ValueError(f"rank {r} outside [1, {min(m, n)}]")
    if augment and r < 4:
        raise ValueError("augmentation with xi, eta, gamma needs r >= 4")
    wx = mesh.face_weight(grid)
    sx, sv = np.sqrt(wx), np.sqrt(vs.weights)
    if isinstance(g0, tuple):
        A = np.asarray(g0[0], dtype=float).reshape(m, -1)
        B = np.asarray(g0[1], dtype=float).reshape(n, -1)
        if A.shape[1] != B.shape[1]:
            raise ValueError("separable initial data has inconsistent shapes")
        Qa, Ra = weighted_qr(A, wx)
        Qb, Rb = weighted_qr(B, vs.weights)
        _, _, Wt = np.linalg.svd(Ra @ Rb.T)
        right = Qb @ Wt.T
        V = _velocity_candidates(right[:, :r], vs, r, augment)
        K = A @ (B.T @ (vs.weights[:, None] * V))
    else:
        g0 = np.asarray(g0, dtype=float).reshape(m, n)
        _, _, Wt = np.linalg.svd(sx * g0 * sv[None, :], full_matrices=False)
        right = Wt[:r].T / sv[:, None]
        V = _velocity_candidates(right, vs, r, augment)
        K = g0 @ (vs.weights[:, None] * V)
    X, S = weighted_qr(K, wx)
    return LowRankFactors(X, S, V)


def reconstruct(F: LowRankFactors):
    """Dense ``g = X S V^T`` of shape ``(m, n)``."""
    return F.X @ F.S @ F.V.T


def orthonormality_defect(F: LowRankFactors, grid, vs):
    """Max deviation of both Gram matrices from the identity."""
    wx = mesh.face_weight(grid)
    r = F.rank
    gx = wx * (F.X.T @ F.X)
    gv = F.V.T @ (vs.weights[:, None] * F.V)
    return max(np.abs(gx - np.eye(r)).max(), np.abs(gv - np.eye(r)).max())


# --------------------------------------------------------------- helpers ---

def _grad_rho(rho, grid):
    return (mesh.d_central_rho(rho, grid, "x").reshape(-1),
            mesh.d_central_rho(rho, grid, "y").reshape(-1))


def _gram_central(X, Xw, grid, axis, h):
    # <X_i, (X_k(+h) - X_k(-h)) / 2h>; by periodicity the backward part is
    # the transpose of the forward part
    r = X.shape[1]
    fwd = np.roll(X.reshape(grid.shape + (r,)), -1, axis=axis).reshape(-1, r)
    P = Xw.T @ fwd
    return (P - P.T) / (2.0 * h)


def _spatial_terms(X, grid, coeffs, rho, cache=None):
    """Galerkin matrices of the frozen spatial basis.

    ``cache`` (a dict) reuses the result while ``X``, ``rho`` and ``coeffs``
    are the same objects, e.g. between an L and an S substep.
    """
    if cache is not None:
        key = cache.get("key")
        if key is not None and key[0] is X and key[1] is rho and key[2] is coeffs:
            return cache["terms"]
    wx = mesh.face_weight(grid)
    r = X.shape[1]
    Xw = wx * X
    gx, gy = _grad_rho(rho, grid)
    rxy = Xw.T @ np.stack([gx, gy], axis=1)
    if coeffs._ss_uniform is not None:
        As = coeffs._ss_uniform * np.eye(r)
    else:
        As = Xw.T @ (coeffs.sigma_s_faces.reshape(-1, 1) * X)
    if coeffs._sa_zero:
        Aa = np.zeros((r, r))
    else:
        Aa = Xw.T @ (coeffs.sigma_a_faces.reshape(-1, 1) * X)
    terms = dict(
        Cx=_gram_central(X, Xw, grid, 2, grid.dx),
        Cy=_gram_central(X, Xw, grid, 1, grid.dy),
        As=As, Aa=Aa, rx=rxy[:, 0], ry=rxy[:, 1], Xw=Xw,
    )
    if cache is not None:
        cache["key"] = (X, rho, coeffs)
        cache["terms"] = terms
    return terms


def _source(micro_source, t):
    if micro_source is None:
        return None
    return micro_source(t)


# ---------------------------------------------------------------- K step ---

def _roll_into(dst, src, shift, axis):
    # dst = np.roll(src, shift, axis) without allocating
    n = src.shape[axis]
    shift %= n
    if shift == 0:
        np.copyto(dst, src)
        return dst
    lo = [slice(None)] * src.ndim
    hi = [slice(None)] * src.ndim
    lo[axis], hi[axis] = slice(shift, None), slice(None, n - shift)
    np.copyto(dst[tuple(lo)], src[tuple(hi)])
    lo[axis], hi[axis] = slice(None, shift), slice(n - shift, None)
    np.copyto(dst[tuple(lo)], src[tuple(hi)])
    return dst


class _UpwindWork:
    """Reusable buffers for ``2h (D_+ P + D_- M)`` on ``(2, Ny, Nx, r)`` stacks."""

    def __init__(self, shape):
        self.P = np.empty(shape)
        self.M = np.empty(shape)
        self.w1 = np.empty(shape)
        self.w2 = np.empty(shape)

    def add_pair(self, out, axis):
        P, M, w1, w2 = self.P, self.M, self.w1, self.w2
        # 3P - 4P(-1) + P(-2) = 3P - roll(4P - roll(P, 1), 1)
        _roll_into(w1, P, 1, axis)
        np.multiply(P, 4.0, out=w2)
        w2 -= w1
        _roll_into(w1, w2, 1, axis)
        P *= 3.0
        P -= w1
        out += P
        # -3M + 4M(+1) - M(+2) = -3M + roll(4M - roll(M, -1), -1)
        _roll_into(w1, M, -1, axis)
        np.multiply(M, 4.0, out=w2)
        w2 -= w1
        _roll_into(w1, w2, -1, axis)
        M *= -3.0
        M += w1
        out += M
        return out


def k_step(F, rho, coeffs, grid, vs, dt, stepper="backward-euler",
           micro_source=None, t=0.0, seed=DEFAULT_SEED):
    """Evolve ``K = X S`` with ``V`` frozen, then re-orthonormalize ``X``."""
    tab = get_tableau(stepper)
    eps = coeffs.eps
    r = F.rank
    shp = grid.shape + (r,)
    T = transport_tensors(F.V, vs)
    cx = 1.0 / (2.0 * grid.dx * eps)
    cy = 1.0 / (2.0 * grid.dy * eps)
    Txp, Txm = T.xp.T * cx, T.xm.T * cx
    Typ, Tym = T.yp.T * cy, T.ym.T * cy
    _, flux = moments(F.V, vs)
    gx, gy = _grad_rho(rho, grid)
    forcing = np.stack([gx, gy], axis=1) @ (flux[:2] / -eps**2)
    sa = None if coeffs._sa_zero else coeffs.sigma_a_faces.reshape(-1, 1)
    ss = coeffs.sigma_s_faces.reshape(-1, 1) / eps**2
    VW = vs.weights[:, None] * F.V

    work = _UpwindWork(shp)
    P2, M2 = work.P.reshape(-1, r), work.M.reshape(-1, r)

    def explicit(tt, K):
        out = np.zeros(shp)
        np.matmul(K, Txp, out=P2)
        np.matmul(K, Txm, out=M2)
        work.add_pair(out, 2)
        np.matmul(K, Typ, out=P2)
        np.matmul(K, Tym, out=M2)
        work.add_pair(out, 1)
        out = out.reshape(-1, r)
        out *= -1.0
        out += forcing
        if sa is not None:
            out -= sa * K
        src = _source(micro_source, tt)
        if src is not None:
            A, B = src
            out += A @ (B.T @ VW)
        return out

    K = imex_integrate(
        F.X @ F.S, t, dt, explicit,
        implicit_apply=lambda K: -ss * K,
        implicit_solve=lambda rhs, c: rhs / (1.0 + c * ss),
        tableau=tab)
    X, S1 = weighted_qr(K, mesh.face_weight(grid), seed)
    return LowRankFactors(X, S1, F.V)


# ---------------------------------------------------------------- L step ---

def l_step(F, rho, coeffs, grid, vs, dt, stepper="backward-euler",
           micro_source=None, t=0.0, seed=DEFAULT_SEED, cache=None):
    """Evolve ``L = V S^T`` with ``X`` frozen, then re-orthonormalize ``V``."""
    tab = get_tableau(stepper)
    eps = coeffs.eps
    r = F.rank
    st = _spatial_terms(F.X, grid, coeffs, rho, cache)
    xi, eta, w = vs.xi[:, None], vs.eta[:, None], vs.weights
    CxT, CyT = st["Cx"].T / eps, st["Cy"].T / eps
    forcing = -(np.outer(vs.xi, st["rx"]) + np.outer(vs.eta, st["ry"])) / eps**2
    Aa = st["Aa"]
    As = st["As"] / eps**2
    eye = np.eye(r)

    def explicit(tt, L):
        px = xi * L
        py = eta * L
        px -= (w @ px) / FOUR_PI
        py -= (w @ py) / FOUR_PI
        out = forcing - px @ CxT - py @ CyT - L @ Aa
        src = _source(micro_source, tt)
        if src is not None:
            A, B = src
            out += B @ (A.T @ st["Xw"])
        return out

    def solve(rhs, c):
        return np.linalg.solve(eye + c * As, rhs.T).T

    L = imex_integrate(F.V @ F.S.T, t, dt, explicit,
                       implicit_apply=lambda L: -L @ As,
                       implicit_solve=solve, tableau=tab)
    V, R = weighted_qr(L, vs.weights, seed)
    return LowRankFactors(F.X, R.T, V)


# ---------------------------------------------------------------- S step ---

def s_step(F, rho, coeffs, grid, vs, dt, stepper="backward-euler",
           micro_source=None, t=0.0, cache=None):
    """Evolve ``S`` backwards along the projected flow with ``X``, ``V`` frozen.

    The relaxation term enters with a positive sign, so the implicit system
    ``I - c A / eps^2`` may be singular.  When its smallest eigenvalue falls
    below ``1e-12`` times ``1 + c ||A|| / eps^2`` (or below ``1e-12`` times its
    largest one) a :class:`NumericalFailure` is raised.
    """
    tab = get_tableau(stepper)
    eps = coeffs.eps
    r = F.rank
    st = _spatial_terms(F.X, grid, coeffs, rho, cache)
    T = transport_tensors(F.V, vs)
    TxT, TyT = T.x.T, T.y.T
    Cx, Cy = st["Cx"] / eps, st["Cy"] / eps
    _, flux = moments(F.V, vs)
    forcing = (np.outer(st["rx"], flux[0]) + np.outer(st["ry"], flux[1])) / eps**2
    Aa = st["Aa"]
    As = st["As"] / eps**2
    VW = vs.weights[:, None] * F.V
    eye = np.eye(r)

    def explicit(tt, S):
        out = forcing + Cx @ S @ TxT + Cy @ S @ TyT + Aa @ S
        src = _source(micro_source, tt)
        if src is not None:
            A, B = src
            out -= (st["Xw"].T @ A) @ (B.T @ VW)
        return out

    def solve(rhs, c):
        M = eye - c * As
        ev_a = c * np.linalg.eigvalsh(As)
        ev = 1.0 - ev_a
        # measured against the size of the two terms, so that a uniform
        # cancellation 1 - c*sigma ~ 0 is caught even though cond(M) = 1
        amin = np.min(np.abs(ev))
        amax = max(np.max(np.abs(ev)), 1.0 + np.max(np.abs(ev_a)))
        if amin == 0 or amax / amin > SSTEP_MAX_COND:
            raise NumericalFailure(
                f"S-step system I - (dt/eps^2) A is near singular: smallest |eigenvalue| "
                f"{amin:.3e}, condition {amax / max(amin, 1e-300):.3e}")
        return np.linalg.solve(M, rhs)

    S = imex_integrate(F.S, t, dt, explicit,
                       implicit_apply=lambda S: As @ S,
                       implicit_solve=solve, tableau=tab)
    return replace(F, S=S)


SUBSTEPS = {"K": k_step, "L": l_step, "S": s_step}
