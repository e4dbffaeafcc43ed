"""Cumulative B-splines on Lie groups and their time derivatives.

Two derivative formulations are provided:

* ``recursive``: velocity, acceleration and jerk propagate through the spline
  segment as tangent vectors, one step per control-point difference.
* ``baseline``: the product rule is applied to X_i * A_1 * ... * A_{k-1}, giving
  matrix-valued derivatives from which the tangent quantities are extracted.

All evaluation works on batches: a :class:`SegmentContext` holds N query points
(possibly on different splines) and every tangent result has shape (N, dim).
The same code accepts :class:`~liespline.jet.Jet` inputs, which is how the
optimizer obtains forward-mode Jacobians.

Derivatives are taken with respect to the normalized segment time u unless a
time-scaled bundle is requested; d/dt = (1/dt) d/du.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blending import lambda_arrays
from .jet import scale
from .lie import SE3, SO3, RdGroup, group_from_tag, orthonormalize, random_tangent

FORMULATIONS = ("recursive", "baseline")


class OutOfRangeError(ValueError):
    """A query time lies outside the spline's valid evaluation window."""


@dataclass
class OpCounter:
    """Matrix operations performed while computing one derivative order."""

    mm_mults: int = 0
    mv_mults: int = 0
    adds: int = 0

    def as_dict(self) -> dict:
        return {"mm_mults": self.mm_mults, "mv_mults": self.mv_mults, "adds": self.adds}


def _tick(counter: OpCounter | None, mm: int = 0, mv: int = 0, adds: int = 0) -> None:
    if counter is not None:
        counter.mm_mults += mm
        counter.mv_mults += mv
        counter.adds += adds


def _bracket_cost(group) -> dict:
    # so(3) brackets are cross products (one hat(w) d product); elsewhere VW - WV.
    if group is SO3:
        return {"mv": 1}
    return {"mm": 2, "adds": 1}


@dataclass(eq=False)
class SegmentContext:
    """Per-query quantities shared by value and derivative evaluation.

    ``d[j-1]`` and ``A[j-1]`` hold the difference vector d_j and
    A_j = Exp(lambda_j d_j) for j = 1..k-1; ``lam[r]`` is the r-th u-derivative
    of the cumulative weights, shape (N, k).
    """

    group: object
    k: int
    i: np.ndarray
    u: np.ndarray
    x0: object
    d: list
    A: list
    lam: np.ndarray

    @property
    def size(self) -> int:
        return self.u.shape[0]


def segment_context(group, local_knots, u, i=None) -> SegmentContext:
    """Build a context from the k contributing knots of each query.

    Args:
        group: SO3, SE3 or an RdGroup.
        local_knots: sequence of k batches X_i, ..., X_{i+k-1}, each (N, ...).
        u: normalized times, shape (N,).
        i: optional segment indices, kept for bookkeeping.
    """
    k = len(local_knots)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    lam = lambda_arrays(k, u)
    d, a = [], []
    for j in range(1, k):
        dj = group.log(group.compose(group.inverse(local_knots[j - 1]), local_knots[j]))
        d.append(dj)
        a.append(group.exp(scale(lam[0][:, j], dj)))
    if i is None:
        i = np.zeros(u.shape[0], dtype=int)
    return SegmentContext(group, k, np.asarray(i), u, local_knots[0], d, a, lam)


@dataclass(eq=False)
class LieSpline:
    """Uniform cumulative B-spline of order k with knots X_0..X_N.

    Knot m sits at time t0 + m*dt.  Queries are valid on
    [t0, t0 + (num_knots - k + 1) * dt); segment i uses knots i..i+k-1.
    """

    group: object
    knots: np.ndarray
    t0: float
    dt: float
    k: int

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=float)
        if self.dt <= 0:
            raise ValueError("knot spacing dt must be positive")
        if self.k < 2:
            raise ValueError("spline order must be at least 2")
        if self.knots.shape[0] < self.k:
            raise ValueError(f"need at least k={self.k} knots, got {self.knots.shape[0]}")

    @property
    def num_knots(self) -> int:
        return self.knots.shape[0]

    @property
    def num_segments(self) -> int:
        return self.num_knots - self.k + 1

    def valid_interval(self) -> tuple[float, float]:
        return self.t0, self.t0 + self.num_segments * self.dt

    def segment_of(self, t) -> tuple[np.ndarray, np.ndarray]:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        s = (t - self.t0) / self.dt
        finite = np.isfinite(s)
        i = np.floor(np.where(finite, s, -1.0)).astype(int)
        lo, hi = self.valid_interval()
        bad = (i < 0) | (i >= self.num_segments) | ~finite
        if np.any(bad):
            raise OutOfRangeError(
                f"time {t[bad][0]!r} outside valid interval [{lo}, {hi})")
        return i, s - i

    def locate(self, t) -> SegmentContext:
        i, u = self.segment_of(t)
        return self.context_at(i, u)

    def context_at(self, i, u) -> SegmentContext:
        """Context for explicit segment indices (u may be 1.0 for continuity checks)."""
        i = np.atleast_1d(np.asarray(i, dtype=int))
        local = [self.knots[i + j] for j in range(self.k)]
        return segment_context(self.group, local, u, i)

    def evaluate(self, t):
        x = evaluate(self.locate(t))
        return x[0] if np.ndim(t) == 0 else x

    def derivatives(self, t, max_order: int = 2, formulation: str = "recursive",
                    time_scaled: bool = False) -> "DerivativeBundle":
        return derivatives(self, t, max_order, formulation, time_scaled)

    def to_json(self) -> dict:
        out = {"group": self.group.name, "k": self.k, "t0": self.t0, "dt": self.dt}
        if isinstance(self.group, RdGroup):
            out["d"] = self.group.dim
            out["knots"] = [[float(x) for x in p] for p in self.knots]
        elif self.group is SO3:
            out["knots"] = [[float(x) for x in r.reshape(-1)] for r in self.knots]
        else:
            out["knots"] = [{"R": [float(x) for x in m[:3, :3].reshape(-1)],
                             "t": [float(x) for x in m[:3, 3]]} for m in self.knots]
        return out

    @classmethod
    def from_json(cls, data: dict) -> "LieSpline":
        group = group_from_tag(data["group"], data.get("d"))
        if group is SO3:
            knots = np.array([np.reshape(r, (3, 3)) for r in data["knots"]], dtype=float)
        elif group is SE3:
            knots = np.zeros((len(data["knots"]), 4, 4))
            for m, kn in zip(knots, data["knots"]):
                m[:3, :3] = np.reshape(kn["R"], (3, 3))
                m[:3, 3] = kn["t"]
                m[3, 3] = 1.0
        else:
            knots = np.array(data["knots"], dtype=float).reshape(-1, group.dim)
        return cls(group, knots, float(data["t0"]), float(data["dt"]), int(data["k"]))


# --------------------------------------------------------------------------- evaluation

def evaluate(ctx: SegmentContext):
    """X(u) = X_i * A_1 * ... * A_{k-1}."""
    g = ctx.group
    x = ctx.x0
    for a in ctx.A:
        x = g.compose(x, a)
    return x


def _recursion(ctx: SegmentContext, order: int, counters: dict):
    """Joint velocity / acceleration / jerk recursion over the segment.

    ``counters`` maps derivative order (1, 2, 3) to an OpCounter or None.
    """
    g = ctx.group
    lam = ctx.lam
    bcost = _bracket_cost(g)
    c1, c2, c3 = counters.get(1), counters.get(2), counters.get(3)
    n = ctx.size
    w = np.zeros((n, g.dim))
    wd = np.zeros((n, g.dim))
    wdd = np.zeros((n, g.dim))
    for j in range(1, ctx.k):
        a, d = ctx.A[j - 1], ctx.d[j - 1]
        l1 = lam[1][:, j]
        w = g.adjoint_inv_apply(a, w) + scale(l1, d)
        _tick(c1, mv=1, adds=1)
        if order < 2:
            continue
        l2 = lam[2][:, j]
        br = g.bracket(w, d)
        _tick(c2, **bcost)
        wd_new = scale(l1, br) + g.adjoint_inv_apply(a, wd) + scale(l2, d)
        _tick(c2, mv=1, adds=2)
        if order >= 3:
            l3 = lam[3][:, j]
            inner = scale(l2, w) + scale(2.0 * l1, wd_new) - scale(l1 * l1, br)
            _tick(c3, adds=2)
            wdd = (g.adjoint_inv_apply(a, wdd) + scale(l3, d) + g.bracket(inner, d))
            _tick(c3, mv=1, adds=2)
            _tick(c3, **bcost)
        wd = wd_new
    return [w, wd, wdd][:order]


def _mat(group, x):
    return group.matrix(x) if isinstance(group, RdGroup) else x


def _hatm(group, v):
    return group.hat_matrix(v)


def group_velocity_matrix(ctx, x, w, counter=None):
    """Xdot = X hat(w)."""
    _tick(counter, mm=1)
    return _mat(ctx.group, x) @ _hatm(ctx.group, w)


def group_acceleration_matrix(ctx, x, w, wd, counter=None):
    """Xddot = X (hat(w)^2 + hat(wd))."""
    hw = _hatm(ctx.group, w)
    _tick(counter, mm=2, adds=1)
    return _mat(ctx.group, x) @ (hw @ hw + _hatm(ctx.group, wd))


def velocity_recursive(ctx: SegmentContext, counter: OpCounter | None = None,
                       group_derivative: bool = False):
    """Velocity by the O(k) recursion.

    With ``group_derivative=True`` the matrix derivative X hat(w) is also formed
    (one extra matrix product) and ``(w, Xdot)`` is returned.
    """
    (w,) = _recursion(ctx, 1, {1: counter})
    if group_derivative:
        return w, group_velocity_matrix(ctx, evaluate(ctx), w, counter)
    return w


def acceleration_recursive(ctx: SegmentContext, counter: OpCounter | None = None,
                           group_derivative: bool = False,
                           velocity_counter: OpCounter | None = None):
    """Acceleration by the joint recursion; velocity work goes to ``velocity_counter``."""
    w, wd = _recursion(ctx, 2, {1: velocity_counter, 2: counter})
    if group_derivative:
        return wd, group_acceleration_matrix(ctx, evaluate(ctx), w, wd, counter)
    return wd


def jerk_recursive(ctx: SegmentContext, counter: OpCounter | None = None):
    _, _, wdd = _recursion(ctx, 3, {3: counter})
    return wdd


# --------------------------------------------------------------------------- baseline

def _chain(factors):
    out = factors[0]
    for f in factors[1:]:
        out = out @ f
    return out


def _inv_matrix(group, x):
    return _mat(group, group.inverse(x))


def _baseline_parts(ctx):
    g = ctx.group
    ms = [_mat(g, a) for a in ctx.A]
    dm = [_hatm(g, d) for d in ctx.d]
    return ms, dm


def _velocity_baseline(ctx, ms, dm, counter):
    """Returns (w, Xdot, Adot) using the product-rule sum."""
    g = ctx.group
    lam = ctx.lam
    adot = []
    for j in range(1, ctx.k):
        adot.append(scale(lam[1][:, j], ms[j - 1] @ dm[j - 1]))
        _tick(counter, mm=1)
    total = None
    for j in range(ctx.k - 1):
        factors = ms[:j] + [adot[j]] + ms[j + 1:]
        term = _chain(factors)
        _tick(counter, mm=len(factors) - 1)
        if total is None:
            total = term
        else:
            total = total + term
            _tick(counter, adds=1)
    xdot = _mat(g, ctx.x0) @ total
    _tick(counter, mm=1)
    x = evaluate(ctx)
    w = g.vee_matrix(_inv_matrix(g, x) @ xdot)
    return w, xdot, adot, x


def velocity_baseline(ctx: SegmentContext, counter: OpCounter | None = None,
                      group_derivative: bool = False):
    """Velocity from Xdot = X_i * sum_j (prod A) Adot_j (prod A), then w = vee(X^-1 Xdot)."""
    ms, dm = _baseline_parts(ctx)
    w, xdot, _, _ = _velocity_baseline(ctx, ms, dm, counter)
    if group_derivative:
        return w, xdot
    return w


def acceleration_baseline(ctx: SegmentContext, counter: OpCounter | None = None,
                          group_derivative: bool = False,
                          velocity_counter: OpCounter | None = None):
    """Acceleration from the full second-order product rule.

    Every term of the double sum is formed as its own chain of products.  The
    counter charges each of the k(k-1)/2 distinct terms k matrix products and
    k additions, the per-term accounting of the reference complexity table.
    """
    _, wd, xdd = baseline_kinematics(ctx, counter, velocity_counter)
    if group_derivative:
        return wd, xdd
    return wd


def baseline_kinematics(ctx: SegmentContext, counter: OpCounter | None = None,
                        velocity_counter: OpCounter | None = None):
    """(w, wdot, Xddot) by the product-rule formulation."""
    g = ctx.group
    lam = ctx.lam
    k = ctx.k
    ms, dm = _baseline_parts(ctx)
    w, _, adot, x = _velocity_baseline(ctx, ms, dm, velocity_counter)
    xi = _mat(g, ctx.x0)
    total = None
    for j in range(k - 1):
        for l in range(j, k - 1):
            factors = list(ms)
            if j == l:
                l1, l2 = lam[1][:, j + 1], lam[2][:, j + 1]
                inner = scale(l2, dm[j]) + scale(l1 * l1, dm[j] @ dm[j])
                factors[j] = ms[j] @ inner
                coef = 1.0
            else:
                factors[j] = adot[j]
                factors[l] = adot[l]
                coef = 2.0
            term = xi @ _chain(factors)
            if coef != 1.0:
                term = term * coef
            total = term if total is None else total + term
            _tick(counter, mm=k, adds=k)
    hw = _hatm(g, w)
    wd = g.vee_matrix(_inv_matrix(g, x) @ total - hw @ hw)
    return w, wd, total


def recursive_kinematics(ctx: SegmentContext, order: int = 2, need_matrix: bool = False):
    """(w, wdot, Xddot-or-None) by the recursive formulation."""
    outs = _recursion(ctx, order, {})
    w = outs[0]
    wd = outs[1] if order >= 2 else None
    xdd = None
    if need_matrix:
        xdd = group_acceleration_matrix(ctx, evaluate(ctx), w, wd)
    return w, wd, xdd


# --------------------------------------------------------------------------- bundles

@dataclass(eq=False)
class DerivativeBundle:
    group: object
    value: object
    velocity: np.ndarray | None = None
    acceleration: np.ndarray | None = None
    jerk: np.ndarray | None = None
    time_scaled: bool = False
    dt: float = 1.0
    op_counts: dict = field(default_factory=dict)

    def orders(self) -> list[int]:
        return [r for r, v in ((1, self.velocity), (2, self.acceleration), (3, self.jerk))
                if v is not None]


def derivatives(spline: LieSpline, t, max_order: int = 2, formulation: str = "recursive",
                time_scaled: bool = False) -> DerivativeBundle:
    """Value and tangent derivatives up to ``max_order`` at time(s) ``t``."""
    if formulation not in FORMULATIONS:
        raise ValueError(f"formulation must be one of {FORMULATIONS}")
    if not 0 <= max_order <= 3:
        raise ValueError("max_order must be in 0..3")
    if formulation == "baseline" and max_order > 2:
        raise ValueError("the baseline formulation provides derivatives up to order 2")
    scalar = np.ndim(t) == 0
    ctx = spline.locate(t)
    counts = {r: OpCounter() for r in range(1, max_order + 1)}
    x = evaluate(ctx)
    out = [None, None, None]
    if max_order >= 1:
        if formulation == "recursive":
            out[: max_order] = _recursion(ctx, max_order, counts)
        elif max_order == 1:
            out[0] = velocity_baseline(ctx, counts[1])
        else:
            out[0], out[1], _ = baseline_kinematics(ctx, counts[2], counts[1])
    if time_scaled:
        out = [None if v is None else v / spline.dt ** (r + 1) for r, v in enumerate(out)]
    if scalar:
        x = x[0]
        out = [None if v is None else v[0] for v in out]
    return DerivativeBundle(spline.group, x, out[0], out[1], out[2], time_scaled,
                            spline.dt, counts)


def reconstruct_group_derivative(bundle: DerivativeBundle, order: int | None = None):
    """Matrix-valued derivatives (Xdot, Xddot, Xdddot) up to ``order``."""
    order = max(bundle.orders(), default=0) if order is None else order
    have = bundle.orders()
    missing = [r for r in range(1, order + 1) if r not in have]
    if missing:
        raise ValueError(f"bundle lacks derivative order(s) {missing}")
    g = bundle.group
    x = g.matrix(bundle.value) if isinstance(g, RdGroup) else np.asarray(bundle.value)
    hw = g.hat_matrix(bundle.velocity) if order >= 1 else None
    out = []
    if order >= 1:
        out.append(x @ hw)
    if order >= 2:
        hwd = g.hat_matrix(bundle.acceleration)
        out.append(x @ (hw @ hw + hwd))
    if order >= 3:
        hwdd = g.hat_matrix(bundle.jerk)
        out.append(x @ (hw @ hw @ hw + 2 * hw @ hwd + hwd @ hw + hwdd))
    return tuple(out)


# --------------------------------------------------------------------------- generation

def random_knots(group, num: int, rng: np.random.Generator, step: float = 1.0,
                 start_radius: float = 1.0) -> np.ndarray:
    """Knots of a random walk: X_{m+1} = X_m Exp(delta), delta uniform in a ball."""
    if isinstance(group, RdGroup):
        x0 = random_tangent(rng, group.dim, start_radius)
        steps = random_tangent(rng, group.dim, step, size=num - 1)
        return np.vstack([x0, x0 + np.cumsum(steps, axis=0)])
    x = group.exp(random_tangent(rng, group.dim, start_radius)[None])[0]
    out = [x]
    steps = group.exp(random_tangent(rng, group.dim, step, size=num - 1))
    for s in steps:
        x = x @ s
        if group is SO3:
            x = orthonormalize(x)
        else:
            x[:3, :3] = orthonormalize(x[:3, :3])
        out.append(x)
    return np.array(out)


def random_contexts(group, k: int, n: int, rng: np.random.Generator, step: float = 1.0,
                    u=None) -> SegmentContext:
    """A batch of n independent random segments (one per row)."""
    knots = np.array([random_knots(group, k, rng, step) for _ in range(n)])
    if u is None:
        u = rng.random(n)
    return segment_context(group, [knots[:, j] for j in range(k)], u)


__all__ = [
    "FORMULATIONS", "OutOfRangeError", "OpCounter", "SegmentContext", "segment_context",
    "LieSpline", "evaluate", "velocity_recursive", "velocity_baseline",
    "acceleration_recursive", "acceleration_baseline", "jerk_recursive", "derivatives",
    "DerivativeBundle", "reconstruct_group_derivative", "random_knots", "random_contexts",
    "group_velocity_matrix", "group_acceleration_matrix", "baseline_kinematics",
    "recursive_kinematics",
]
