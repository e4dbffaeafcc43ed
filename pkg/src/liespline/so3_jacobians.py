"""Analytic Jacobians of SO(3) spline value, velocity and acceleration.

Derivatives are first taken with respect to the difference vectors d_j using
an accumulator sweep over the segment (cost linear in k), then mapped to the
k contributing knots.  Knots are perturbed on the left, R -> Exp(delta) R.

All functions are batched: a context with N queries yields (N, 3, 3) blocks.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .lie import SO3, so3_exp, so3_hat, so3_log, so3_right_jacobian, so3_right_jacobian_inv
from .spline import OpCounter, SegmentContext, _tick, evaluate, random_contexts

CONDITIONING_MARGIN = 0.1


class ConditioningWarning(RuntimeWarning):
    """The value Jacobian is evaluated close to the Log branch cut."""


def jac_exp_vector(lam, d, w) -> np.ndarray:
    """d/dd of Exp(-lam d) w, which equals lam Exp(-lam d) hat(w) Jr(-lam d).

    Accepts single vectors (lam scalar) or batches (lam of shape (N,)).
    """
    single = np.ndim(d) == 1
    d = np.atleast_2d(np.asarray(d, dtype=float))
    w = np.atleast_2d(np.asarray(w, dtype=float))
    lam = np.broadcast_to(np.asarray(lam, dtype=float), d.shape[:1])
    v = -lam[:, None] * d
    out = lam[:, None, None] * (so3_exp(v) @ so3_hat(w) @ so3_right_jacobian(v))
    return out[0] if single else out


def _mv(a, v):
    return (a @ v[..., None])[..., 0]


@dataclass(eq=False)
class DJacobians:
    """Blocks with respect to d_1..d_{k-1}; list index j-1 holds d_j.

    ``d_omega_local`` and ``d_omegadot_local`` are the single-step blocks
    d omega^(j+1)/d d_j and d omegadot^(j+1)/d d_j.  ``d_rot_right`` is the
    value Jacobian in the right tangent of R(u): R(u) Exp(eta).
    """

    rho: np.ndarray
    omega_steps: list
    omegadot_steps: list
    d_rho: list
    d_rot_right: list
    d_omega: list
    d_omegadot: list
    d_omega_local: list
    d_omegadot_local: list


def _forward_states(ctx: SegmentContext, counter=None):
    """omega^(j) and omegadot^(j) for j = 1..k (index j-1), plus A_j^T."""
    n = ctx.size
    lam = ctx.lam
    at = [np.swapaxes(a, -1, -2) for a in ctx.A]
    w = [np.zeros((n, 3))]
    wd = [np.zeros((n, 3))]
    for j in range(1, ctx.k):
        d = ctx.d[j - 1]
        l1, l2 = lam[1][:, j, None], lam[2][:, j, None]
        wn = _mv(at[j - 1], w[-1]) + l1 * d
        wdn = l1 * np.cross(wn, d) + _mv(at[j - 1], wd[-1]) + l2 * d
        _tick(counter, mv=3, adds=3)
        w.append(wn)
        wd.append(wdn)
    return w, wd, at


def local_jacobians(ctx: SegmentContext, counter: OpCounter | None = None,
                    warn: bool = True) -> DJacobians:
    """Jacobians of rho = Log R(u), omega and omegadot with respect to each d_j."""
    if ctx.group is not SO3:
        raise ValueError("analytic Jacobians are available for SO(3) splines only")
    k, n = ctx.k, ctx.size
    lam = ctx.lam
    eye = np.broadcast_to(np.eye(3), (n, 3, 3))
    w, wd, at = _forward_states(ctx, counter)
    r = evaluate(ctx)
    rho = so3_log(r, check=False)
    if warn and np.any(np.linalg.norm(rho, axis=-1) > np.pi - CONDITIONING_MARGIN):
        warnings.warn("value Jacobian evaluated near rotation angle pi; Jr^-1(rho) is "
                      "ill-conditioned", ConditioningWarning, stacklevel=2)
    jr_inv_rho = so3_right_jacobian_inv(rho)

    m = k - 1
    d_rho, d_rot, d_om, d_omd = [None] * m, [None] * m, [None] * m, [None] * m
    loc_om, loc_omd = [None] * m, [None] * m
    p = eye
    s = np.zeros((n, 3))
    for j in range(k - 1, 0, -1):
        d = ctx.d[j - 1]
        lj = lam[0][:, j]
        l1, l2 = lam[1][:, j, None, None], lam[2][:, j, None, None]
        jr_neg = so3_right_jacobian(-lj[:, None] * d)
        # Exp(-lam d) is A_j^T, already at hand
        lamat = lj[:, None, None] * at[j - 1]
        g_om = lamat @ (so3_hat(w[j - 1]) @ jr_neg) + l1 * eye
        g_omd = (l1 * (so3_hat(w[j]) - so3_hat(d) @ g_om)
                 + lamat @ (so3_hat(wd[j - 1]) @ jr_neg) + l2 * eye)
        _tick(counter, mm=6, adds=5)
        loc_om[j - 1], loc_omd[j - 1] = g_om, g_omd

        rot = lj[:, None, None] * (p @ so3_right_jacobian(lj[:, None] * d))
        d_rot[j - 1] = rot
        d_rho[j - 1] = jr_inv_rho @ rot
        d_om[j - 1] = p @ g_om
        d_omd[j - 1] = p @ g_omd - so3_hat(s) @ d_om[j - 1]
        _tick(counter, mm=5, adds=1)

        s = s + l1[..., 0] * _mv(p, d)
        p = p @ at[j - 1]
        _tick(counter, mm=1, mv=1, adds=1)
    return DJacobians(rho, w, wd, d_rho, d_rot, d_om, d_omd, loc_om, loc_omd)


def omegadot_jacobians_direct(ctx: SegmentContext) -> list:
    """d omegadot / d d_j by propagating full Jacobians forward through every step.

    Uses omegadot^(l) Jacobian = -ldot D omega^(l) Jacobian + A^T (previous), which is
    quadratic in k; kept as an independent check of the accumulator form.
    """
    k = ctx.k
    lam = ctx.lam
    w, wd, at = _forward_states(ctx)
    loc = local_jacobians(ctx, warn=False)
    out = []
    for j in range(1, k):
        j_om = loc.d_omega_local[j - 1]
        j_omd = loc.d_omegadot_local[j - 1]
        for l in range(j + 1, k):
            l1 = lam[1][:, l, None, None]
            j_om = at[l - 1] @ j_om
            j_omd = -l1 * (so3_hat(ctx.d[l - 1]) @ j_om) + at[l - 1] @ j_omd
        out.append(j_omd)
    return out


@dataclass(eq=False)
class KnotJacobians:
    """Blocks with respect to left perturbations of knots R_i..R_{i+k-1} (index j)."""

    d_rho: list
    d_rot_right: list
    d_omega: list
    d_omegadot: list


def knot_jacobians(ctx: SegmentContext, local: DJacobians | None = None,
                   local_knots=None, counter: OpCounter | None = None) -> KnotJacobians:
    """Chain rule from d_j blocks to knot blocks.

    ``local_knots`` are the k knot rotations of each query; when omitted they are
    rebuilt from the context as R_i Exp(d_1) ... Exp(d_j).
    """
    if local is None:
        local = local_jacobians(ctx, counter)
    k, n = ctx.k, ctx.size
    if local_knots is None:
        local_knots = [ctx.x0]
        for d in ctx.d:
            local_knots.append(local_knots[-1] @ so3_exp(d))
    rt = [np.swapaxes(r, -1, -2) for r in local_knots]
    # dd_j / dR_{i+j} = Jr^-1(d_j) R_{i+j}^T; dd_j / dR_{i+j-1} is its negative
    dd = [None] + [so3_right_jacobian_inv(ctx.d[j - 1]) @ rt[j] for j in range(1, k)]
    _tick(counter, mm=k - 1)
    r_u = evaluate(ctx)
    r_u_t = np.swapaxes(r_u, -1, -2)

    out = {name: [] for name in ("d_rho", "d_rot_right", "d_omega", "d_omegadot")}
    for j in range(k):
        for name in out:
            blk = np.zeros((n, 3, 3))
            src = getattr(local, name)
            if j >= 1:
                blk = blk + src[j - 1] @ dd[j]
                _tick(counter, mm=1)
            if j + 1 <= k - 1:
                blk = blk - src[j] @ dd[j + 1]
                _tick(counter, mm=1, adds=1)
            out[name].append(blk)
    out["d_rho"][0] = out["d_rho"][0] + so3_right_jacobian_inv(local.rho) @ r_u_t
    out["d_rot_right"][0] = out["d_rot_right"][0] + r_u_t
    _tick(counter, mm=1, adds=2)
    return KnotJacobians(**out)


def jacobian_opcount(k: int) -> dict:
    """Instrumented operation counts of one local + knot Jacobian evaluation."""
    rng = np.random.default_rng(k)
    ctx = random_contexts(SO3, k, 1, rng, step=0.5)
    counter = OpCounter()
    knot_jacobians(ctx, local_jacobians(ctx, counter, warn=False), counter=counter)
    return counter.as_dict()


__all__ = [
    "ConditioningWarning", "jac_exp_vector", "DJacobians", "local_jacobians",
    "omegadot_jacobians_direct", "KnotJacobians", "knot_jacobians", "jacobian_opcount",
]
