"""Levenberg-Marquardt over spline knots with band-structured normal equations.

A :class:`Problem` holds the trajectory (one SO(3) or SE(3) spline, or a split
SO(3) x R^3 pair sharing one knot grid), optional extra parameters (biases,
gravity, camera extrinsics) and a list of :class:`ResidualBlock`.  Residuals of
the same kind are evaluated together in batches.

Parameter layout: knot m owns columns [m*b, (m+1)*b) with b = 3 (SO(3)) or 6
(SE(3) as (v, w), split as (rotation, position)); extras follow.  A residual on
segment i touches knots i..i+k-1, so the knot part of J^T W J is banded with
half-width k*b - 1.  Extras form a dense border eliminated by a Schur
complement.

Updates are left-multiplicative for group-valued parameters (X <- Exp(delta) X)
and additive for vectors.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded

from .jet import Jet, matvec, transpose, value
from .lie import SE3, SO3, Rd, so3_hat, so3_right_jacobian_inv
from .so3_jacobians import knot_jacobians, local_jacobians
from .spline import (
    FORMULATIONS, LieSpline, baseline_kinematics, evaluate, recursive_kinematics,
    segment_context, velocity_baseline,
)

KINDS = ("value", "velocity", "acceleration", "projection", "gyro", "accel")
TRAJECTORY_KINDS = ("value", "velocity", "acceleration")
SENSOR_KINDS = ("projection", "gyro", "accel")
JACOBIAN_MODES = ("analytic", "forward")
# floor on Marquardt scaling entries, relative to the largest diagonal entry
MIN_DIAGONAL = 1e-12


def _extras_for(kind: str, camera) -> list[str]:
    if kind == "gyro":
        return ["b_g"]
    if kind == "accel":
        return ["b_a", "g"]
    if kind == "projection":
        return [f"T_ic{camera}"]
    return []


def _extra_size(name: str) -> int:
    return 6 if name.startswith("T_ic") else 3


# --------------------------------------------------------------------------- data types

@dataclass
class ResidualBlock:
    """One measurement.

    ``measurement`` is a flattened group element for ``value`` residuals and a
    plain vector otherwise.  ``weight`` may be a scalar (isotropic) or an m x m
    symmetric positive semi-definite matrix.  Projection residuals carry the
    observing ``camera`` index and the world ``point``.
    """

    kind: str
    timestamp: float
    measurement: np.ndarray
    weight: np.ndarray | float = 1.0
    camera: int | None = None
    point: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown residual kind {self.kind!r}")
        self.measurement = np.asarray(self.measurement, dtype=float).reshape(-1)
        w = np.asarray(self.weight, dtype=float)
        if w.ndim == 2:
            if not np.allclose(w, w.T, atol=1e-12, rtol=0):
                raise ValueError("weight matrix must be symmetric")
            if np.linalg.eigvalsh(w).min() < -1e-12:
                raise ValueError("weight matrix must be positive semi-definite")
        elif w.ndim != 0 or w < 0:
            raise ValueError("weight must be a non-negative scalar or a square matrix")
        self.weight = w
        if self.kind == "projection":
            if self.camera is None or self.point is None:
                raise ValueError("projection residuals need a camera index and a point")
            self.point = np.asarray(self.point, dtype=float).reshape(3)

    def to_json(self) -> dict:
        out = {"kind": self.kind, "timestamp": float(self.timestamp),
               "measurement": [float(x) for x in self.measurement],
               "weight": self.weight.tolist()}
        if self.kind == "projection":
            out["camera"] = int(self.camera)
            out["point"] = [float(x) for x in self.point]
        return out

    @classmethod
    def from_json(cls, data: dict) -> "ResidualBlock":
        return cls(data["kind"], float(data["timestamp"]), data["measurement"],
                   data.get("weight", 1.0), data.get("camera"), data.get("point"))


@dataclass(frozen=True)
class Intrinsics:
    fx: float = 500.0
    fy: float = 500.0
    cx: float = 320.0
    cy: float = 320.0
    width: int = 640
    height: int = 480

    def project(self, xc):
        """Pinhole projection of camera-frame points (N, 3); jets allowed."""
        xy = xc[..., 0:2] / xc[..., 2:3]
        shape = value(xy).shape
        return (xy * np.broadcast_to([self.fx, self.fy], shape)
                + np.broadcast_to([self.cx, self.cy], shape))

    def projection_jacobian(self, xc: np.ndarray) -> np.ndarray:
        z = xc[:, 2]
        j = np.zeros((xc.shape[0], 2, 3))
        j[:, 0, 0] = self.fx / z
        j[:, 1, 1] = self.fy / z
        j[:, 0, 2] = -self.fx * xc[:, 0] / z ** 2
        j[:, 1, 2] = -self.fy * xc[:, 1] / z ** 2
        return j

    def visible(self, xc: np.ndarray) -> np.ndarray:
        z = xc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = self.project(xc)
        return ((z > 1e-6) & (uv[:, 0] >= 0) & (uv[:, 0] < self.width)
                & (uv[:, 1] >= 0) & (uv[:, 1] < self.height))

    def to_json(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


@dataclass(eq=False)
class _Batch:
    kind: str
    camera: int | None
    t: np.ndarray
    meas: np.ndarray
    sqrt_info: np.ndarray
    points: np.ndarray | None
    seg: np.ndarray
    u: np.ndarray
    extras: list

    @property
    def size(self) -> int:
        return self.t.shape[0]


def _sqrt_info(weights: np.ndarray, m: int) -> np.ndarray:
    """S with S^T S = W for a stack of weights (scalars or m x m)."""
    if weights.ndim == 1:
        return np.sqrt(weights)[:, None, None] * np.eye(m)
    ev, vecs = np.linalg.eigh(weights)
    return np.sqrt(np.clip(ev, 0, None))[..., None] * np.swapaxes(vecs, -1, -2)


# --------------------------------------------------------------------------- problem

class Problem:
    """Trajectory estimation problem.

    Args:
        splines: ``{"traj": LieSpline}`` for a single SO(3)/SE(3) spline, or
            ``{"rot": SO(3) spline, "pos": R^3 spline}`` for the split form.
        residuals: list of :class:`ResidualBlock`.
        extras: initial values of extra parameters, keyed ``b_g``, ``b_a``, ``g``
            (3-vectors) and ``T_ic<c>`` (4x4 camera-to-IMU transforms).
        intrinsics: pinhole model shared by all cameras.
    """

    def __init__(self, splines: dict, residuals: list, extras: dict | None = None,
                 intrinsics: Intrinsics | None = None):
        if set(splines) == {"traj"}:
            sp = splines["traj"]
            if sp.group is SO3:
                self.representation = "so3"
            elif sp.group is SE3:
                self.representation = "se3"
            else:
                raise ValueError("single-spline problems need an SO(3) or SE(3) spline")
            self.dB = sp.group.dim
        elif set(splines) == {"rot", "pos"}:
            r, p = splines["rot"], splines["pos"]
            if r.group is not SO3 or p.group != Rd(3):
                raise ValueError("split representation needs an SO(3) and an R^3 spline")
            if (r.k, r.num_knots, r.t0, r.dt) != (p.k, p.num_knots, p.t0, p.dt):
                raise ValueError("split splines must share order and knot grid")
            self.representation = "split"
            self.dB = 6
        else:
            raise ValueError("splines must be {'traj'} or {'rot', 'pos'}")
        ref = next(iter(splines.values()))
        self.k, self.t0, self.dt, self.n_knots = ref.k, ref.t0, ref.dt, ref.num_knots
        self.knots = {name: np.array(sp.knots, dtype=float) for name, sp in splines.items()}
        self.extras = {name: np.array(v, dtype=float) for name, v in (extras or {}).items()}
        for name, v in self.extras.items():
            want = (4, 4) if name.startswith("T_ic") else (3,)
            if v.shape != want:
                raise ValueError(f"extra parameter {name} must have shape {want}")
        self.intrinsics = intrinsics or Intrinsics()
        self.residuals = list(residuals)
        self._build_batches(ref)

    # ----------------------------------------------------------------- layout
    def _build_batches(self, ref: LieSpline) -> None:
        groups: dict = {}
        for rb in self.residuals:
            if self.representation == "split" and rb.kind in TRAJECTORY_KINDS:
                raise ValueError(f"{rb.kind} residuals need a single-spline problem")
            if self.representation == "so3" and rb.kind in SENSOR_KINDS:
                raise ValueError(f"{rb.kind} residuals need a split or SE(3) problem")
            groups.setdefault((rb.kind, rb.camera), []).append(rb)
        self.extra_names = sorted(self.extras)
        self.extra_offset = {}
        off = 0
        for name in self.extra_names:
            self.extra_offset[name] = off
            off += _extra_size(name)
        self.n_extra = off
        self.n_knot_params = self.n_knots * self.dB
        self.n_params = self.n_knot_params + self.n_extra
        self.batches = []
        for (kind, cam), blocks in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1] or 0)):
            blocks = sorted(blocks, key=lambda b: b.timestamp)
            names = _extras_for(kind, cam)
            missing = [n for n in names if n not in self.extras]
            if missing:
                raise ValueError(f"{kind} residuals need extra parameter(s) {missing}")
            t = np.array([b.timestamp for b in blocks])
            seg, u = ref.segment_of(t)
            meas = np.array([b.measurement for b in blocks])
            m = self._residual_dim(kind)
            if kind != "value" and meas.shape[1] != m:
                raise ValueError(f"{kind} measurement must have {m} entries")
            ws = [b.weight for b in blocks]
            if all(w.ndim == 0 for w in ws):
                w = np.array(ws, dtype=float)
            else:
                w = np.array([w * np.eye(m) if w.ndim == 0 else w for w in ws])
                if w.shape[1:] != (m, m):
                    raise ValueError(f"{kind} weight must be {m}x{m}")
            if kind == "value":
                s = 3 if self.representation == "so3" else 4
                meas = meas.reshape(-1, s, s)
            pts = np.array([b.point for b in blocks]) if kind == "projection" else None
            self.batches.append(_Batch(kind, cam, t, meas, _sqrt_info(w, m), pts, seg, u, names))

    def _residual_dim(self, kind: str) -> int:
        if kind in TRAJECTORY_KINDS:
            return 3 if self.representation == "so3" else 6
        return 2 if kind == "projection" else 3

    @property
    def num_residual_rows(self) -> int:
        return sum(b.size * self._residual_dim(b.kind) for b in self.batches)

    def splines(self) -> dict:
        if self.representation == "split":
            return {"rot": LieSpline(SO3, self.knots["rot"], self.t0, self.dt, self.k),
                    "pos": LieSpline(Rd(3), self.knots["pos"], self.t0, self.dt, self.k)}
        g = SO3 if self.representation == "so3" else SE3
        return {"traj": LieSpline(g, self.knots["traj"], self.t0, self.dt, self.k)}

    def _replace(self, knots: dict, extras: dict) -> "Problem":
        out = object.__new__(Problem)
        out.__dict__.update(self.__dict__)
        out.knots = knots
        out.extras = extras
        return out

    def parameter_norm(self) -> float:
        """Euclidean norm of all stored parameter entries (matrices flattened)."""
        sq = sum(float(np.sum(v * v)) for v in self.knots.values())
        sq += sum(float(np.sum(v * v)) for v in self.extras.values())
        return float(np.sqrt(sq))

    def copy(self) -> "Problem":
        return self._replace({n: v.copy() for n, v in self.knots.items()},
                             {n: v.copy() for n, v in self.extras.items()})

    def retract(self, delta: np.ndarray) -> "Problem":
        """New problem with the step ``delta`` applied to every parameter."""
        kd = delta[: self.n_knot_params].reshape(self.n_knots, self.dB)
        knots = {}
        if self.representation == "so3":
            knots["traj"] = SO3.retract(self.knots["traj"], kd)
        elif self.representation == "se3":
            knots["traj"] = SE3.retract(self.knots["traj"], kd)
        else:
            knots["rot"] = SO3.retract(self.knots["rot"], kd[:, :3])
            knots["pos"] = self.knots["pos"] + kd[:, 3:]
        extras = {}
        for name, v in self.extras.items():
            o = self.n_knot_params + self.extra_offset[name]
            step = delta[o:o + _extra_size(name)]
            if name.startswith("T_ic"):
                extras[name] = SE3.retract(v[None], step[None])[0]
            else:
                extras[name] = v + step
        return self._replace(knots, extras)

    # ----------------------------------------------------------------- serialization
    def to_json(self) -> dict:
        return {"representation": self.representation,
                "splines": {n: sp.to_json() for n, sp in self.splines().items()},
                "extras": {n: v.tolist() for n, v in self.extras.items()},
                "intrinsics": self.intrinsics.to_json(),
                "residuals": [r.to_json() for r in self.residuals]}

    @classmethod
    def from_json(cls, data: dict) -> "Problem":
        splines = {n: LieSpline.from_json(s) for n, s in data["splines"].items()}
        intr = Intrinsics(**data["intrinsics"]) if "intrinsics" in data else None
        return cls(splines, [ResidualBlock.from_json(r) for r in data.get("residuals", [])],
                   data.get("extras"), intr)

    # ----------------------------------------------------------------- local variables
    def _local(self, name: str, seg: np.ndarray) -> list:
        return [self.knots[name][seg + j] for j in range(self.k)]

    def _knot_jets(self, name: str, seg, n_dirs: int, offset: int):
        group = {"traj": SO3 if self.representation == "so3" else SE3,
                 "rot": SO3, "pos": Rd(3)}[name]
        out = []
        for j, x in enumerate(self._local(name, seg)):
            o = j * self.dB + offset
            if name == "pos":
                out.append(Jet.variable(x, n_dirs, o))
                continue
            der = np.zeros((x.shape[0], n_dirs) + x.shape[1:])
            der[:, o:o + group.dim] = group.left_generators(x)
            out.append(Jet(x, der))
        return out

    def _extra_jets(self, names, n: int, n_dirs: int, offset: int) -> dict:
        out = {}
        o = offset
        for name in names:
            v = np.broadcast_to(self.extras[name], (n,) + self.extras[name].shape).copy()
            if name.startswith("T_ic"):
                der = np.zeros((n, n_dirs, 4, 4))
                der[:, o:o + 6] = SE3.left_generators(v)
                out[name] = Jet(v, der)
            else:
                out[name] = Jet.variable(v, n_dirs, o)
            o += _extra_size(name)
        return out

    # ----------------------------------------------------------------- residual model
    def _trajectory(self, b: _Batch, sl: slice, jet: bool, n_dirs: int = 0) -> dict:
        seg, u = b.seg[sl], b.u[sl]
        out = {}
        if self.representation == "split":
            rot = self._knot_jets("rot", seg, n_dirs, 0) if jet else self._local("rot", seg)
            pos = self._knot_jets("pos", seg, n_dirs, 3) if jet else self._local("pos", seg)
            out["ctx"] = segment_context(SO3, rot, u)
            out["rot_local"] = rot
            out["pos_local"] = pos
        else:
            g = SO3 if self.representation == "so3" else SE3
            loc = self._knot_jets("traj", seg, n_dirs, 0) if jet else self._local("traj", seg)
            out["ctx"] = segment_context(g, loc, u)
        return out

    def _model(self, b: _Batch, sl: slice, formulation: str, traj: dict, extras: dict):
        """Residual vectors for rows ``sl`` of batch ``b`` (Jets when inputs are Jets)."""
        ctx = traj["ctx"]
        kind = b.kind
        dt = self.dt
        meas = b.meas[sl]
        if kind == "value":
            g = ctx.group
            return g.log(g.compose(g.inverse(meas), evaluate(ctx)), check=False)
        if kind in ("velocity", "gyro"):
            if formulation == "recursive":
                w = recursive_kinematics(ctx, 1)[0]
            else:
                w = velocity_baseline(ctx)
            if self.representation == "se3" and kind == "gyro":
                w = w[..., 3:6]
            r = w * (1.0 / dt) - meas
            return r + extras["b_g"] if kind == "gyro" else r
        if kind == "acceleration":
            if formulation == "recursive":
                wd = recursive_kinematics(ctx, 2)[1]
            else:
                wd = baseline_kinematics(ctx)[1]
            return wd * (1.0 / dt ** 2) - meas
        rot, pos, acc = self._pose_terms(ctx, traj, formulation, need_acc=(kind == "accel"))
        rt = transpose(rot)
        if kind == "accel":
            ab = matvec(rt, acc * (1.0 / dt ** 2) + extras["g"])
            return ab - meas + extras["b_a"]
        t_ic = extras[f"T_ic{b.camera}"]
        xi = matvec(rt, b.points[sl] - pos)
        xc = matvec(transpose(t_ic[..., 0:3, 0:3]), xi - t_ic[..., 0:3, 3])
        return self.intrinsics.project(xc) - meas

    def _pose_terms(self, ctx, traj, formulation, need_acc):
        if self.representation == "split":
            x = evaluate(ctx)
            cw = _position_weights(ctx.lam)
            pos = _weighted_sum(cw[0], traj["pos_local"])
            acc = _weighted_sum(cw[2], traj["pos_local"]) if need_acc else None
            return x, pos, acc
        x = evaluate(ctx)
        acc = None
        if need_acc:
            if formulation == "recursive":
                xdd = recursive_kinematics(ctx, 2, need_matrix=True)[2]
            else:
                xdd = baseline_kinematics(ctx)[2]
            acc = xdd[..., 0:3, 3]
        return x[..., 0:3, 0:3], x[..., 0:3, 3], acc

    def residuals_chunk(self, b: _Batch, sl: slice, formulation: str) -> np.ndarray:
        traj = self._trajectory(b, sl, jet=False)
        extras = {n: np.broadcast_to(self.extras[n], (sl.stop - sl.start,) + self.extras[n].shape)
                  for n in b.extras}
        return self._model(b, sl, formulation, traj, extras)

    def jacobian_chunk(self, b: _Batch, sl: slice, formulation: str, mode: str):
        """(r, J) for a chunk; J has shape (N, m, k*b + extras) in local columns."""
        n_loc = self.k * self.dB + sum(_extra_size(e) for e in b.extras)
        if mode == "forward":
            traj = self._trajectory(b, sl, jet=True, n_dirs=n_loc)
            extras = self._extra_jets(b.extras, sl.stop - sl.start, n_loc, self.k * self.dB)
            r = self._model(b, sl, formulation, traj, extras)
            if not isinstance(r, Jet):
                r = Jet.constant(r, n_loc)
            return r.val, r.jacobian()
        if mode != "analytic":
            raise ValueError(f"jacobian mode must be one of {JACOBIAN_MODES}")
        if self.representation == "se3":
            raise ValueError("analytic Jacobians need an SO(3) or split representation")
        r = self.residuals_chunk(b, sl, formulation)
        return r, self._analytic_jacobian(b, sl, r, n_loc)

    def _analytic_jacobian(self, b: _Batch, sl: slice, r: np.ndarray, n_loc: int) -> np.ndarray:
        name = "traj" if self.representation == "so3" else "rot"
        seg, u = b.seg[sl], b.u[sl]
        rot_local = self._local(name, seg)
        ctx = segment_context(SO3, rot_local, u)
        kj = knot_jacobians(ctx, local_jacobians(ctx, warn=False), local_knots=rot_local)
        n, k, dB, dt = ctx.size, self.k, self.dB, self.dt
        jac = np.zeros((n, r.shape[1], n_loc))
        ke = k * dB
        kind = b.kind
        if kind in TRAJECTORY_KINDS:
            for j in range(k):
                if kind == "value":
                    blk = so3_right_jacobian_inv(r) @ kj.d_rot_right[j]
                elif kind == "velocity":
                    blk = kj.d_omega[j] / dt
                else:
                    blk = kj.d_omegadot[j] / dt ** 2
                jac[:, :, j * dB:j * dB + 3] = blk
            return jac
        if kind == "gyro":
            for j in range(k):
                jac[:, :, j * dB:j * dB + 3] = kj.d_omega[j] / dt
            jac[:, :, ke:ke + 3] = np.eye(3)
            return jac
        rot = evaluate(ctx)
        rt = np.swapaxes(rot, -1, -2)
        cw = _position_weights(ctx.lam)
        pos_local = self._local("pos", seg)
        if kind == "accel":
            acc = _weighted_sum(cw[2], pos_local)
            ab = matvec(rt, acc / dt ** 2 + self.extras["g"])
            hab = so3_hat(ab)
            for j in range(k):
                jac[:, :, j * dB:j * dB + 3] = hab @ kj.d_rot_right[j]
                jac[:, :, j * dB + 3:j * dB + 6] = rt * (cw[2][:, j] / dt ** 2)[:, None, None]
            # extras order: b_a, g
            jac[:, :, ke:ke + 3] = np.eye(3)
            jac[:, :, ke + 3:ke + 6] = rt
            return jac
        t_ic = self.extras[f"T_ic{b.camera}"]
        ric_t = t_ic[:3, :3].T
        pos = _weighted_sum(cw[0], pos_local)
        xi = matvec(rt, b.points[sl] - pos)
        xc = (xi - t_ic[:3, 3]) @ ric_t.T
        jp = self.intrinsics.projection_jacobian(xc) @ ric_t
        jrot = jp @ so3_hat(xi)
        jpos = -(jp @ rt)
        for j in range(k):
            jac[:, :, j * dB:j * dB + 3] = jrot @ kj.d_rot_right[j]
            jac[:, :, j * dB + 3:j * dB + 6] = jpos * cw[0][:, j, None, None]
        jac[:, :, ke:ke + 3] = -jp
        jac[:, :, ke + 3:ke + 6] = jrot
        return jac


def _position_weights(lam: np.ndarray) -> np.ndarray:
    """Coefficients of p_{i+j} in p(u) and its u-derivatives: lambda_j - lambda_{j+1}."""
    nxt = np.concatenate([lam[..., 1:], np.zeros(lam.shape[:-1] + (1,))], axis=-1)
    return lam - nxt


def _weighted_sum(c: np.ndarray, pts: list):
    out = None
    for j, p in enumerate(pts):
        term = p * c[:, j:j + 1]
        out = term if out is None else out + term
    return out


# --------------------------------------------------------------------------- normal equations

@lru_cache(maxsize=None)
def _lower_tri(n: int):
    p, q = np.tril_indices(n)
    return p, q


class NormalEquations:
    """J^T W J and J^T W r split into a banded knot block, a border and a corner."""

    def __init__(self, problem: Problem):
        self.nk = problem.n_knot_params
        self.ne = problem.n_extra
        self.ke = problem.k * problem.dB
        self.ub = self.ke - 1
        self.band = np.zeros((self.ub + 1) * self.nk)
        self.border = np.zeros(self.nk * self.ne)
        self.corner = np.zeros((self.ne, self.ne))
        self.gradient = np.zeros(self.nk + self.ne)
        self.cost = 0.0

    def add(self, seg: np.ndarray, jw: np.ndarray, rw: np.ndarray, ext_cols: np.ndarray,
            db: int) -> None:
        h = np.swapaxes(jw, 1, 2) @ jw
        g = np.einsum("nmi,nm->ni", jw, rw)
        self.cost += float(np.sum(rw * rw))
        starts = np.flatnonzero(np.r_[True, seg[1:] != seg[:-1]])
        hs = np.add.reduceat(h, starts, axis=0)
        gs = np.add.reduceat(g, starts, axis=0)
        base = seg[starts] * db
        ke, nk = self.ke, self.nk
        p, q = _lower_tri(ke)
        idx = ((p - q) * nk)[None] + base[:, None] + q[None]
        self.band += np.bincount(idx.ravel(), hs[:, p, q].ravel(), minlength=self.band.size)
        self.gradient[:nk] += np.bincount((base[:, None] + np.arange(ke)).ravel(),
                                          gs[:, :ke].ravel(), minlength=nk)
        if ext_cols.size:
            rows = base[:, None, None] + np.arange(ke)[None, :, None]
            bidx = rows * self.ne + ext_cols[None, None, :]
            self.border += np.bincount(bidx.ravel(), hs[:, :ke, ke:].ravel(),
                                       minlength=self.border.size)
            self.corner[np.ix_(ext_cols, ext_cols)] += hs[:, ke:, ke:].sum(axis=0)
            self.gradient[nk + ext_cols] += gs[:, ke:].sum(axis=0)

    def band_matrix(self) -> np.ndarray:
        return self.band.reshape(self.ub + 1, self.nk)

    def border_matrix(self) -> np.ndarray:
        return self.border.reshape(self.nk, self.ne)

    def max_diagonal(self) -> float:
        d = self.band_matrix()[0]
        return float(max(d.max(initial=0.0), np.diag(self.corner).max(initial=0.0)))

    def dense(self) -> np.ndarray:
        """Full symmetric J^T W J (for tests and small problems)."""
        n = self.nk + self.ne
        h = np.zeros((n, n))
        ab = self.band_matrix()
        for off in range(self.ub + 1):
            cols = np.arange(self.nk - off)
            h[cols + off, cols] = ab[off, : self.nk - off]
            h[cols, cols + off] = ab[off, : self.nk - off]
        b = self.border_matrix()
        h[: self.nk, self.nk:] = b
        h[self.nk:, : self.nk] = b.T
        h[self.nk:, self.nk:] = self.corner
        return h

    def diagonal(self) -> np.ndarray:
        return np.concatenate([self.band_matrix()[0], np.diag(self.corner)])

    def solve(self, damping, scaling: np.ndarray | None = None) -> np.ndarray:
        """Solve (H + damping D) x = -g with D = diag(scaling) (identity if None).

        Raises LinAlgError if the damped matrix is not positive definite.
        """
        d = np.ones(self.nk + self.ne) if scaling is None else scaling
        ab = self.band_matrix().copy()
        ab[0] += damping * d[: self.nk]
        chol = cholesky_banded(ab, lower=True)
        gk, ge = self.gradient[: self.nk], self.gradient[self.nk:]
        if self.ne == 0:
            return cho_solve_banded((chol, True), -gk)
        b = self.border_matrix()
        sol = cho_solve_banded((chol, True), np.column_stack([-gk, b]))
        schur = self.corner + damping * np.diag(d[self.nk:]) - b.T @ sol[:, 1:]
        y = np.linalg.solve(schur, -ge - b.T @ sol[:, 0])
        if not np.all(np.isfinite(y)):
            raise LinAlgError("singular Schur complement")
        x = sol[:, 0] - sol[:, 1:] @ y
        return np.concatenate([x, y])


def _chunks(n: int, size: int):
    for s in range(0, n, size):
        yield slice(s, min(n, s + size))


def _ext_cols(problem: Problem, b: _Batch) -> np.ndarray:
    cols = []
    for name in b.extras:
        o = problem.extra_offset[name]
        cols.extend(range(o, o + _extra_size(name)))
    return np.array(cols, dtype=int)


def evaluate_residuals(problem: Problem, formulation: str = "recursive",
                       chunk_size: int = 2048) -> tuple[np.ndarray, float]:
    """Stacked unweighted residuals (batch order) and cost sum r^T W r."""
    if formulation not in FORMULATIONS:
        raise ValueError(f"formulation must be one of {FORMULATIONS}")
    parts, cost = [], 0.0
    for b in problem.batches:
        for sl in _chunks(b.size, chunk_size):
            r = problem.residuals_chunk(b, sl, formulation)
            rw = matvec(b.sqrt_info[sl], r)
            cost += float(np.sum(rw * rw))
            parts.append(r.reshape(-1))
    return (np.concatenate(parts) if parts else np.zeros(0)), cost


def cost(problem: Problem, formulation: str = "recursive", chunk_size: int = 2048) -> float:
    return evaluate_residuals(problem, formulation, chunk_size)[1]


def linearize(problem: Problem, formulation: str = "recursive", jacobian_mode: str = "forward",
              chunk_size: int = 1024) -> NormalEquations:
    ne = NormalEquations(problem)
    for b in problem.batches:
        cols = _ext_cols(problem, b)
        for sl in _chunks(b.size, chunk_size):
            r, jac = problem.jacobian_chunk(b, sl, formulation, jacobian_mode)
            s = b.sqrt_info[sl]
            ne.add(b.seg[sl], s @ jac, matvec(s, r), cols, problem.dB)
    return ne


def dense_jacobian(problem: Problem, formulation: str = "recursive",
                   jacobian_mode: str = "forward") -> tuple[np.ndarray, np.ndarray]:
    """Unweighted residual vector and full Jacobian (rows in batch order)."""
    rows_r, rows_j = [], []
    for b in problem.batches:
        cols = _ext_cols(problem, b) + problem.n_knot_params
        r, jac = problem.jacobian_chunk(b, slice(0, b.size), formulation, jacobian_mode)
        full = np.zeros(jac.shape[:2] + (problem.n_params,))
        ke = problem.k * problem.dB
        for n, base in enumerate(b.seg * problem.dB):
            full[n, :, base:base + ke] = jac[n, :, :ke]
            full[n, :, cols] = jac[n, :, ke:].T
        rows_r.append(r.reshape(-1))
        rows_j.append(full.reshape(-1, problem.n_params))
    return np.concatenate(rows_r), np.concatenate(rows_j)


def forward_mode_jacobian(problem: Problem, formulation: str = "recursive"):
    """Jacobian by dual-number propagation; see :func:`dense_jacobian`."""
    return dense_jacobian(problem, formulation, "forward")


# --------------------------------------------------------------------------- solver

@dataclass
class SolveOptions:
    """Levenberg-Marquardt settings.

    ``damping`` selects the regularizer: ``"marquardt"`` adds mu * diag(H) with
    mu starting at ``initial_damping_scale`` (default 3e-5); ``"identity"`` adds
    mu * I with mu starting at ``initial_damping_scale`` (default 1e-4) times the
    largest diagonal entry.
    """

    damping: str = "marquardt"
    max_iterations: int = 50
    max_damping_steps: int = 10
    initial_damping_scale: float | None = None
    damping_increase: float = 10.0
    damping_decrease: float = 1.0 / 3.0
    relative_tolerance: float = 1e-10
    gradient_tolerance: float = 1e-12
    # stop once ||step|| <= step_tolerance * (||x|| + step_tolerance)
    step_tolerance: float = 1e-8
    # cost at which exact-data fits stop instead of chasing roundoff
    cost_floor: float = 1e-20
    chunk_size: int = 1024


@dataclass(eq=False)
class SolveReport:
    iterations: int
    initial_cost: float
    final_cost: float
    iteration_seconds: list
    formulation: str
    jacobian_mode: str
    converged: bool
    message: str
    cost_history: list = field(default_factory=list)
    problem: Problem | None = None

    @property
    def total_seconds(self) -> float:
        return float(sum(self.iteration_seconds))

    def to_json(self) -> dict:
        return {"iterations": self.iterations, "initial_cost": self.initial_cost,
                "final_cost": self.final_cost, "iteration_seconds": self.iteration_seconds,
                "total_seconds": self.total_seconds, "formulation": self.formulation,
                "jacobian_mode": self.jacobian_mode, "converged": self.converged,
                "message": self.message, "cost_history": self.cost_history}

    def csv_row(self, group: str, k: int, config: str) -> list:
        return [group, k, config, self.formulation, f"{self.total_seconds:.6f}", self.iterations]


def solve(problem: Problem, formulation: str = "recursive", jacobian_mode: str = "forward",
          options: SolveOptions | None = None) -> SolveReport:
    """Levenberg-Marquardt; the input problem is left untouched.

    One iteration is one linearization followed by as many damped solves as it
    takes to find a cost decrease.  The optimized parameters are in
    ``report.problem``.
    """
    if formulation not in FORMULATIONS:
        raise ValueError(f"formulation must be one of {FORMULATIONS}")
    if jacobian_mode not in JACOBIAN_MODES:
        raise ValueError(f"jacobian mode must be one of {JACOBIAN_MODES}")
    if jacobian_mode == "analytic" and problem.representation == "se3":
        raise ValueError("analytic Jacobians need an SO(3) or split representation")
    opt = options or SolveOptions()
    if opt.damping not in ("marquardt", "identity"):
        raise ValueError("damping must be 'marquardt' or 'identity'")
    cur = problem.copy()
    cur_cost = cost(cur, formulation, opt.chunk_size)
    initial = cur_cost
    history = [cur_cost]
    times = []
    damping = None
    converged, message = False, "maximum iterations reached"
    iterations = 0
    while iterations < opt.max_iterations:
        if cur_cost <= opt.cost_floor:
            converged, message = True, "cost below floor"
            break
        t_start = time.perf_counter()
        ne = linearize(cur, formulation, jacobian_mode, opt.chunk_size)
        if np.abs(ne.gradient).max(initial=0.0) < opt.gradient_tolerance:
            times.append(time.perf_counter() - t_start)
            converged, message = True, "gradient below tolerance"
            break
        scaling = None
        if opt.damping == "marquardt":
            diag = ne.diagonal()
            scaling = np.clip(diag, MIN_DIAGONAL * max(diag.max(), 1e-300), None)
        if damping is None:
            damping = opt.initial_damping_scale
            if damping is None:
                damping = 3e-5 if scaling is not None else 1e-4
            if scaling is None:
                damping *= max(ne.max_diagonal(), 1e-300)
        accepted = None
        for _ in range(opt.max_damping_steps):
            try:
                step = ne.solve(damping, scaling)
            except (LinAlgError, ValueError):
                damping *= opt.damping_increase
                continue
            cand = cur.retract(step)
            cand_cost = cost(cand, formulation, opt.chunk_size)
            if np.isfinite(cand_cost) and cand_cost < cur_cost:
                accepted = (cand, cand_cost, np.linalg.norm(step))
                damping *= opt.damping_decrease
                break
            damping *= opt.damping_increase
        times.append(time.perf_counter() - t_start)
        if accepted is None:
            message = "no cost decrease after maximum damping escalation"
            converged = cur_cost <= opt.cost_floor
            break
        iterations += 1
        prev = cur_cost
        x_norm = cur.parameter_norm()
        cur, cur_cost, step_norm = accepted
        history.append(cur_cost)
        if (prev - cur_cost) < opt.relative_tolerance * prev:
            converged, message = True, "relative cost decrease below tolerance"
            break
        if step_norm <= opt.step_tolerance * (x_norm + opt.step_tolerance):
            converged, message = True, "step below tolerance"
            break
    return SolveReport(iterations, initial, cur_cost, times, formulation, jacobian_mode,
                       converged, message, history, cur)


__all__ = [
    "KINDS", "ResidualBlock", "Intrinsics", "Problem", "NormalEquations", "SolveOptions",
    "SolveReport", "evaluate_residuals", "cost", "linearize", "dense_jacobian",
    "forward_mode_jacobian", "solve",
]
