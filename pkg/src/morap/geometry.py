"""Projections onto the inner and outer approximations of the achievable set.

Distances use the norm ``sqrt(v^T M v)`` for a symmetric positive definite
``M``.  Both projections reduce, after a Cholesky change of variables, to a
single non-negative least squares problem.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DegenerateDirection, DimensionMismatch, SolverFailure


def nnls(A: np.ndarray, b: np.ndarray, max_iter: int | None = None) -> np.ndarray:
    """Lawson-Hanson active set method for ``min ||Ax - b||`` subject to ``x >= 0``."""
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, n = A.shape
    x = np.zeros(n)
    passive = np.zeros(n, bool)
    tol = 10 * np.finfo(float).eps * max(m, n) * max(1.0, np.abs(A).sum(0).max(initial=0.0))
    max_iter = max_iter or 3 * n + 30
    w = A.T @ (b - A @ x)
    it = 0
    while (~passive).any() and np.max(np.where(passive, -np.inf, w)) > tol:
        it += 1
        if it > max_iter:
            raise SolverFailure("non-negative least squares exceeded its iteration cap")
        passive[int(np.argmax(np.where(passive, -np.inf, w)))] = True
        while True:
            z = np.zeros(n)
            z[passive] = np.linalg.lstsq(A[:, passive], b, rcond=None)[0]
            if (z[passive] > tol).all():
                x = z
                break
            neg = passive & (z <= tol)
            alpha = np.min(x[neg] / (x[neg] - z[neg]))
            x = x + alpha * (z - x)
            passive &= x > tol
            x[~passive] = 0.0
            if not passive.any():
                break
        w = A.T @ (b - A @ x)
    return x


def _metric(M, d: int) -> np.ndarray:
    M = np.eye(d) if M is None else np.asarray(M, dtype=np.float64)
    if M.shape != (d, d):
        raise DimensionMismatch(f"metric must be {d}x{d}")
    if not np.allclose(M, M.T):
        raise ValueError("metric must be symmetric")
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise ValueError("metric must be positive definite") from exc


def norm_distance(v, M=None) -> float:
    v = np.asarray(v, dtype=np.float64)
    M = np.eye(v.size) if M is None else np.asarray(M, dtype=np.float64)
    return float(np.sqrt(max(v @ M @ v, 0.0)))


def project_to_lower(t, points: Sequence, M=None) -> tuple[np.ndarray, np.ndarray]:
    """Closest point to ``t`` in the downward closure of the convex hull of ``points``.

    Returns ``(x, lam)`` with ``x <= points^T lam``, ``lam >= 0`` and
    ``sum(lam) == 1``.

    With ``M = L L^T`` and ``a_k = L^T (t - r_k)``, ``c_i = L^T e_i`` the task is
    the minimum-norm point of conv{a_k} + cone{c_i}.  The NNLS problem
    ``min ||sum u_k a_k + sum v_i c_i||^2 + (sum u_k - 1)^2`` over ``u, v >= 0``
    has that point, scaled by ``sigma = sum u_k``, as its residual.
    """
    t = np.asarray(t, dtype=np.float64)
    R = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if R.size == 0:
        raise ValueError("at least one point is required")
    if R.shape[1] != t.size:
        raise DimensionMismatch("points and threshold differ in dimension")
    L = _metric(M, t.size)
    m, d = R.shape
    dominating = np.flatnonzero((R >= t).all(axis=1))
    if dominating.size:
        lam = np.zeros(m)
        lam[dominating[0]] = 1.0
        return t.copy(), lam
    # the projection is scale-equivariant; normalising keeps the simplex row comparable
    scale = max(1.0, float(np.abs(t[None, :] - R).max()))
    A = np.zeros((d + 1, m + d))
    A[:d, :m] = L.T @ (t[None, :] - R).T / scale
    A[:d, m:] = L.T
    A[d, :m] = 1.0
    e = np.zeros(d + 1)
    e[d] = 1.0
    u = nnls(A, e)
    sigma = u[:m].sum()
    if sigma <= 0:
        raise SolverFailure("degenerate projection onto the inner approximation")
    lam = u[:m] / sigma
    slack = u[m:] * scale / sigma
    top = R.T @ lam
    if (t <= top + 1e-12 * (1 + np.abs(t))).all():
        return t.copy(), lam
    x = top - slack
    _check_lower_kkt(t, x, R, lam, slack, L)
    return x, lam


def _check_lower_kkt(t, x, R, lam, slack, L, tol=1e-6) -> None:
    M = L @ L.T
    g = M @ (t - x)  # outward normal at x
    scale = 1.0 + np.abs(R).max() + np.abs(t).max()
    if (g < -tol * scale).any():
        raise SolverFailure("projection violates the downward-closure optimality condition")
    # every point lies below the supporting hyperplane through x
    if (R @ g - x @ g > tol * scale * (1 + np.abs(g).sum())).any():
        raise SolverFailure("projection violates the supporting hyperplane condition")


def weight_vector(t, t_up, M=None) -> np.ndarray:
    """Normalised direction ``M (t - t_up)`` (entries >= 0, summing to one)."""
    t = np.asarray(t, dtype=np.float64)
    t_up = np.asarray(t_up, dtype=np.float64)
    M = np.eye(t.size) if M is None else np.asarray(M, dtype=np.float64)
    g = M @ (t - t_up)
    g = np.where(np.abs(g) <= 1e-12 * (1 + np.abs(g).max(initial=0.0)), 0.0, g)
    if (g < 0).any():
        raise DegenerateDirection("direction has a negative component")
    s = g.sum()
    if s <= 0:
        raise DegenerateDirection("threshold coincides with its projection")
    return g / s


def project_to_upper(t, halfspaces: Sequence[tuple[Sequence[float], Sequence[float]]],
                     M=None) -> np.ndarray:
    """Closest point to ``t`` in the intersection of ``{z : w . z <= w . r}``.

    Each halfspace is given as a pair ``(w, r)``.  Solved as a least distance
    program through its NNLS dual.
    """
    t = np.asarray(t, dtype=np.float64)
    if not halfspaces:
        return t.copy()
    W = np.array([np.asarray(w, dtype=np.float64) for w, _ in halfspaces])
    h = np.array([float(np.dot(w, r)) for w, r in halfspaces])
    if W.shape[1] != t.size:
        raise DimensionMismatch("halfspaces and threshold differ in dimension")
    if (W @ t <= h).all():
        return t.copy()
    L = _metric(M, t.size)
    # z = t + L^{-T} y ; constraint w.z <= h  <=>  -(L^{-1} w) . y >= w.t - h
    G = -np.linalg.solve(L, W.T).T
    g = W @ t - h
    y = least_distance(G, g)
    return t + np.linalg.solve(L.T, y)


def least_distance(G: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Minimum-norm ``y`` with ``G y >= h`` (Lawson-Hanson LDP)."""
    m, d = G.shape
    E = np.vstack([G.T, h[None, :]])
    f = np.zeros(d + 1)
    f[d] = 1.0
    u = nnls(E, f)
    r = E @ u - f
    if abs(r[d]) <= 1e-12:
        raise SolverFailure("halfspace system is infeasible")
    return -r[:d] / r[d]


def in_lower(t, points, M=None, tol: float = 1e-9) -> bool:
    x, _ = project_to_lower(t, points, M)
    return norm_distance(np.asarray(t) - x, M) <= tol
