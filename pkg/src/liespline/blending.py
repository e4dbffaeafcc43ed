"""Uniform B-spline basis: De Boor-Cox coefficients and blending matrices."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import comb, factorial

import numpy as np

MIN_ORDER = 2
MAX_ORDER = 12


def deboor_cox(i: int, j: int, t: float, t0: float = 0.0, dt: float = 1.0) -> float:
    """Basis function B_{i,j}(t) of degree ``j`` on the grid t_m = t0 + m*dt.

    Plain recursive evaluation; only used as a reference for the matrix form.
    """
    if j < 0:
        raise ValueError("degree must be non-negative")
    ti = t0 + i * dt
    if j == 0:
        return 1.0 if ti <= t < t0 + (i + 1) * dt else 0.0
    left = (t - ti) / (j * dt) * deboor_cox(i, j - 1, t, t0, dt)
    right = (t0 + (i + j + 1) * dt - t) / (j * dt) * deboor_cox(i + 1, j - 1, t, t0, dt)
    return left + right


@dataclass(frozen=True, eq=False)
class BlendingMatrices:
    order: int
    m: np.ndarray
    m_cum: np.ndarray
    m_exact: tuple
    m_cum_exact: tuple


def _blending_exact(k: int) -> list[list[Fraction]]:
    scale = Fraction(1, factorial(k - 1))
    m = [[Fraction(0)] * k for _ in range(k)]
    for s in range(k):
        for n in range(k):
            acc = 0
            for l in range(s, k):
                acc += (-1) ** (l - s) * comb(k, l - s) * (k - 1 - l) ** (k - 1 - n)
            m[s][n] = scale * comb(k - 1, n) * acc
    return m


@lru_cache(maxsize=None)
def blending_matrix(k: int) -> BlendingMatrices:
    """Blending matrix M^(k) and its cumulative form, computed in exact rationals."""
    if not isinstance(k, (int, np.integer)) or not MIN_ORDER <= k <= MAX_ORDER:
        raise ValueError(f"spline order must be in [{MIN_ORDER}, {MAX_ORDER}], got {k!r}")
    k = int(k)
    m = _blending_exact(k)
    m_cum = [[sum((m[s][n] for s in range(j, k)), Fraction(0)) for n in range(k)]
             for j in range(k)]
    mf = np.array([[float(x) for x in row] for row in m])
    mcf = np.array([[float(x) for x in row] for row in m_cum])
    mf.flags.writeable = False
    mcf.flags.writeable = False
    return BlendingMatrices(k, mf, mcf,
                            tuple(tuple(r) for r in m), tuple(tuple(r) for r in m_cum))


@lru_cache(maxsize=None)
def _monomial_derivative_weights(k: int) -> np.ndarray:
    """Falling factorials n!/(n-r)! for r = 0..3, shape (4, k)."""
    w = np.zeros((4, k))
    for r in range(4):
        for n in range(r, k):
            w[r, n] = factorial(n) / factorial(n - r)
    return w


def monomials(k: int, u, order: int = 3) -> np.ndarray:
    """d^r/du^r of (1, u, ..., u^(k-1)) for r = 0..order, shape (order+1, N, k)."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    w = _monomial_derivative_weights(k)
    n = np.arange(k)
    out = np.zeros((order + 1, u.shape[0], k))
    for r in range(order + 1):
        p = np.clip(n - r, 0, None)
        out[r] = w[r] * u[:, None] ** p
    return out


def lambda_arrays(k: int, u, order: int = 3) -> np.ndarray:
    """Cumulative weights and their u-derivatives, shape (order+1, N, k)."""
    mon = monomials(k, u, order)
    return mon @ blending_matrix(k).m_cum.T


@dataclass(frozen=True)
class LambdaBundle:
    order: int
    u: float
    lambda_: np.ndarray
    dlambda: np.ndarray
    ddlambda: np.ndarray
    dddlambda: np.ndarray


def lambda_bundle(k: int, u: float) -> LambdaBundle:
    if not 0.0 <= u <= 1.0:
        raise ValueError("u must lie in [0, 1]")
    lam = lambda_arrays(k, u)[:, 0]
    return LambdaBundle(k, float(u), lam[0], lam[1], lam[2], lam[3])


def format_matrices(k: int) -> str:
    """Human-readable listing of M^(k) and its cumulative form."""
    bm = blending_matrix(k)
    lines = []
    tables = (("M", bm.m_exact, bm.m), ("M_cumulative", bm.m_cum_exact, bm.m_cum))
    for title, exact, approx in tables:
        lines.append(f"{title} (k={k}), exact:")
        width = max(len(str(x)) for row in exact for x in row)
        for row in exact:
            lines.append("  " + " ".join(str(x).rjust(width) for x in row))
        lines.append(f"{title} (k={k}), decimal:")
        for row in approx:
            lines.append("  " + " ".join(f"{x: .12f}" for x in row))
    return "\n".join(lines)
