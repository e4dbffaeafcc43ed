"""Lie-group primitives for SO(3), SE(3) and R^d.

All array functions are batched over leading axes: a tangent batch has shape
``(..., d)`` and a group batch ``(..., n, n)``.  SE(3) tangents are ordered
``(v, w)``: translational part first, rotational part second, so that

    hat(v, w) = [[hat(w), v],
                 [0,      0]].

Derivatives with respect to a group element use the left-multiplicative
convention: ``df(X)/dX = d f(Exp(delta) X) / d delta`` at ``delta = 0``, and an
update step is ``X <- Exp(delta) X``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .jet import Jet, cross, matvec, stack_last, value

SMALL_ANGLE = 1e-6
# Coefficients of the SE(3) coupling block cancel badly well above SMALL_ANGLE.
SERIES_ANGLE = 0.1
LOG_BRANCH_EPS = 1e-9


class BranchError(ValueError):
    """Raised when Log is requested at (or numerically at) rotation angle pi."""


# --------------------------------------------------------------------------- SO(3)

def so3_hat(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def so3_vee(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def _angle(v):
    theta2 = np.einsum("...i,...i->...", v, v)
    return theta2, np.sqrt(theta2)


def _safe(theta, small):
    return np.where(small, 1.0, theta)


def so3_exp(v: np.ndarray) -> np.ndarray:
    """Rodrigues' formula."""
    v = np.asarray(v, dtype=float)
    theta2, theta = _angle(v)
    small = theta < SMALL_ANGLE
    th = _safe(theta, small)
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(th) / th)
    b = np.where(small, 0.5 - theta2 / 24.0, 2.0 * np.sin(0.5 * th) ** 2 / th**2)
    k = so3_hat(v)
    return np.eye(3) + a[..., None, None] * k + b[..., None, None] * (k @ k)


def so3_log(r: np.ndarray, check: bool = True) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    w = so3_vee(r - np.swapaxes(r, -1, -2))
    s = 0.5 * np.linalg.norm(w, axis=-1)
    c = 0.5 * (np.trace(r, axis1=-2, axis2=-1) - 1.0)
    if check and np.any(c <= -1.0 + LOG_BRANCH_EPS):
        raise BranchError("rotation angle is at pi; Log is not defined on the principal branch")
    theta = np.arctan2(s, c)
    small = theta < SMALL_ANGLE
    factor = np.where(small, 0.5 + theta**2 / 12.0, theta / (2.0 * np.where(small, 1.0, s)))
    return factor[..., None] * w


def so3_right_jacobian(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    theta2, theta = _angle(v)
    small = theta < SMALL_ANGLE
    th = _safe(theta, small)
    a = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(th)) / th**2)
    b = np.where(small, 1.0 / 6.0 - theta2 / 120.0, (th - np.sin(th)) / th**3)
    k = so3_hat(v)
    return np.eye(3) - a[..., None, None] * k + b[..., None, None] * (k @ k)


def so3_right_jacobian_inv(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    theta2, theta = _angle(v)
    small = theta < SMALL_ANGLE
    th = _safe(theta, small)
    c = np.where(small, 1.0 / 12.0 + theta2 / 720.0,
                 1.0 / th**2 - (1.0 + np.cos(th)) / (2.0 * th * np.sin(th)))
    k = so3_hat(v)
    return np.eye(3) + 0.5 * k + c[..., None, None] * (k @ k)


def so3_left_jacobian(v):
    return so3_right_jacobian(-np.asarray(v, dtype=float))


def so3_left_jacobian_inv(v):
    return so3_right_jacobian_inv(-np.asarray(v, dtype=float))


# --------------------------------------------------------------------------- SE(3)

def se3_hat(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (4, 4))
    out[..., :3, :3] = so3_hat(v[..., 3:])
    out[..., :3, 3] = v[..., :3]
    return out


def se3_vee(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return np.concatenate([m[..., :3, 3], so3_vee(m[..., :3, :3])], axis=-1)


def se3_exp(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (4, 4))
    out[..., :3, :3] = so3_exp(v[..., 3:])
    out[..., :3, 3] = (so3_left_jacobian(v[..., 3:]) @ v[..., :3, None])[..., 0]
    out[..., 3, 3] = 1.0
    return out


def se3_log(t: np.ndarray, check: bool = True) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    w = so3_log(t[..., :3, :3], check=check)
    v = (so3_left_jacobian_inv(w) @ t[..., :3, 3, None])[..., 0]
    return np.concatenate([v, w], axis=-1)


def se3_inverse(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    rt = np.swapaxes(t[..., :3, :3], -1, -2)
    out[..., :3, :3] = rt
    out[..., :3, 3] = -(rt @ t[..., :3, 3, None])[..., 0]
    out[..., 3, 3] = 1.0
    return out


def se3_adjoint(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    r = t[..., :3, :3]
    out = np.zeros(t.shape[:-2] + (6, 6))
    out[..., :3, :3] = r
    out[..., 3:, 3:] = r
    out[..., :3, 3:] = so3_hat(t[..., :3, 3]) @ r
    return out


def _q_coefficients(theta):
    small = theta < SERIES_ANGLE
    th = _safe(theta, small)
    t2 = theta**2
    c1 = np.where(small, 1 / 6 - t2 / 120 + t2**2 / 5040 - t2**3 / 362880,
                  (th - np.sin(th)) / th**3)
    c2 = np.where(small, 1 / 24 - t2 / 720 + t2**2 / 40320 - t2**3 / 3628800,
                  (th**2 + 2 * np.cos(th) - 2) / (2 * th**4))
    c3 = np.where(small, 1 / 120 - t2 / 2520 + t2**2 / 120960 - t2**3 / 9979200,
                  (2 * th - 3 * np.sin(th) + th * np.cos(th)) / (2 * th**5))
    return c1, c2, c3


def _se3_q(rho, phi):
    """Coupling block of the SE(3) left Jacobian."""
    _, theta = _angle(phi)
    c1, c2, c3 = (c[..., None, None] for c in _q_coefficients(theta))
    p = so3_hat(phi)
    r = so3_hat(rho)
    pr = p @ r
    rp = r @ p
    prp = pr @ p
    return (0.5 * r + c1 * (pr + rp + prp) + c2 * (p @ pr + rp @ p - 3 * prp)
            + c3 * (prp @ p + p @ prp))


def se3_right_jacobian(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    jr = so3_right_jacobian(v[..., 3:])
    out = np.zeros(v.shape[:-1] + (6, 6))
    out[..., :3, :3] = jr
    out[..., 3:, 3:] = jr
    out[..., :3, 3:] = _se3_q(-v[..., :3], -v[..., 3:])
    return out


def se3_right_jacobian_inv(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    ji = so3_right_jacobian_inv(v[..., 3:])
    out = np.zeros(v.shape[:-1] + (6, 6))
    out[..., :3, :3] = ji
    out[..., 3:, 3:] = ji
    out[..., :3, 3:] = -ji @ _se3_q(-v[..., :3], -v[..., 3:]) @ ji
    return out


def orthonormalize(r: np.ndarray) -> np.ndarray:
    """Project onto SO(3) by the polar decomposition."""
    u, _, vt = np.linalg.svd(r)
    d = np.sign(np.linalg.det(u @ vt))
    u = u.copy()
    u[..., :, 2] *= d[..., None]
    return u @ vt


# --------------------------------------------------------------------------- groups

class _MatrixGroup:
    """Shared batched behaviour of SO(3) and SE(3); elements are (N, n, n) matrices."""

    name: str
    dim: int
    size: int

    def identity(self, n: int) -> np.ndarray:
        return np.broadcast_to(np.eye(self.size), (n, self.size, self.size)).copy()

    def compose(self, a, b):
        return a @ b

    def matrix(self, x):
        return x

    def hat_matrix(self, v):
        return self.hat(v)

    def vee_matrix(self, m):
        return self.vee(m)

    def exp(self, v):
        if isinstance(v, Jet):
            x = self._exp(v.val)
            xi = matvec(self._jr(v.val)[:, None], v.der)
            return Jet(x, x[:, None] @ self._hat(xi))
        return self._exp(v)

    def log(self, x, check: bool = True):
        if isinstance(x, Jet):
            rho = self._log(x.val, check=check)
            xi = self._vee(self._inv(x.val)[:, None] @ x.der)
            return Jet(rho, matvec(self._jr_inv(rho)[:, None], xi))
        return self._log(x, check=check)

    def inverse(self, x):
        if isinstance(x, Jet):
            return self._inv_jet(x)
        return self._inv(x)

    def _inv_jet(self, x):
        xi = self._inv(x.val)
        return Jet(xi, -(xi[:, None] @ x.der @ xi[:, None]))

    def hat(self, v):
        if isinstance(v, Jet):
            return Jet(self._hat(v.val), self._hat(v.der))
        return self._hat(v)

    def vee(self, m):
        if isinstance(m, Jet):
            return Jet(self._vee(m.val), self._vee(m.der))
        return self._vee(m)

    def left_generators(self, x: np.ndarray) -> np.ndarray:
        """d(Exp(delta) x)/d delta_a for each axis a, shape (N, dim, n, n)."""
        gens = self._hat(np.eye(self.dim))
        return gens[None] @ x[:, None]

    def retract(self, x: np.ndarray, delta: np.ndarray) -> np.ndarray:
        return self._exp(delta) @ x

    def right_jacobian(self, v):
        return self._jr(v)

    def right_jacobian_inv(self, v):
        return self._jr_inv(v)


class SO3Group(_MatrixGroup):
    name = "SO3"
    dim = 3
    size = 3

    _exp = staticmethod(so3_exp)
    _log = staticmethod(so3_log)
    _hat = staticmethod(so3_hat)
    _vee = staticmethod(so3_vee)
    _jr = staticmethod(so3_right_jacobian)
    _jr_inv = staticmethod(so3_right_jacobian_inv)

    @staticmethod
    def _inv(x):
        return np.swapaxes(x, -1, -2)

    def _inv_jet(self, x):
        return x.mT

    def adjoint(self, x):
        return value(x)

    def adjoint_inv_apply(self, a, v):
        """Adj(A^-1) v, which for rotations is A^T v."""
        return matvec(_transpose(a), v)

    def bracket(self, a, b):
        """vee([hat(a), hat(b)]), the cross product for so(3)."""
        return cross(a, b)

    def retract(self, x, delta):
        return orthonormalize(self._exp(delta) @ x)


class SE3Group(_MatrixGroup):
    name = "SE3"
    dim = 6
    size = 4

    _exp = staticmethod(se3_exp)
    _log = staticmethod(se3_log)
    _hat = staticmethod(se3_hat)
    _vee = staticmethod(se3_vee)
    _inv = staticmethod(se3_inverse)
    _jr = staticmethod(se3_right_jacobian)
    _jr_inv = staticmethod(se3_right_jacobian_inv)

    def adjoint(self, x):
        return se3_adjoint(value(x))

    def _inv_jet(self, x):
        xi = self._inv(x.val)
        rt, t = xi[:, :3, :3], x.val[:, :3, 3]
        drt = np.swapaxes(x.der[..., :3, :3], -1, -2)
        dt = x.der[..., :3, 3]
        der = np.zeros_like(x.der)
        der[..., :3, :3] = drt
        der[..., :3, 3] = -((drt @ t[:, None, :, None]) + (rt[:, None] @ dt[..., None]))[..., 0]
        return Jet(xi, der)

    def adjoint_inv_apply(self, a, v):
        """Adj(A^-1) v = (R^T (nu - p x omega), R^T omega) for A = (R, p), v = (nu, omega)."""
        if isinstance(a, Jet) or isinstance(v, Jet):
            rt = _transpose(a[..., :3, :3])
            p = a[..., :3, 3]
            nu, om = v[..., :3], v[..., 3:]
            return stack_last([matvec(rt, nu - cross(p, om)), matvec(rt, om)])
        return matvec(se3_adjoint(se3_inverse(a)), v)

    def bracket(self, a, b):
        """vee([hat(a), hat(b)]) = (wa x nb - wb x na, wa x wb) for a = (na, wa)."""
        na, wa, nb, wb = a[..., :3], a[..., 3:], b[..., :3], b[..., 3:]
        return stack_last([cross(wa, nb) - cross(wb, na), cross(wa, wb)])

    def retract(self, x, delta):
        out = self._exp(delta) @ x
        out[..., :3, :3] = orthonormalize(out[..., :3, :3])
        return out


class RdGroup:
    """The vector space R^d viewed as a Lie group under addition.

    ``matrix``/``hat_matrix`` give the homogeneous embedding used by the
    product-rule derivative code, which is written for matrix groups.
    """

    def __init__(self, d: int):
        if d < 1:
            raise ValueError("dimension must be positive")
        self.dim = d
        self.size = d + 1
        self.name = "Rd"

    def __repr__(self):
        return f"RdGroup({self.dim})"

    def __eq__(self, other):
        return isinstance(other, RdGroup) and other.dim == self.dim

    def __hash__(self):
        return hash(("Rd", self.dim))

    def identity(self, n):
        return np.zeros((n, self.dim))

    def compose(self, a, b):
        return a + b

    def inverse(self, x):
        return -x

    def exp(self, v):
        return v

    def log(self, x, check=True):
        return x

    def hat(self, v):
        return v

    def vee(self, m):
        return m

    def adjoint(self, x):
        return np.eye(self.dim)

    def adjoint_inv_apply(self, a, v):
        return v

    def bracket(self, a, b):
        return 0.0 * a

    def matrix(self, x):
        x = value(x)
        out = np.broadcast_to(np.eye(self.size), x.shape[:-1] + (self.size, self.size)).copy()
        out[..., : self.dim, self.dim] = x
        return out

    def hat_matrix(self, v):
        v = value(v)
        out = np.zeros(v.shape[:-1] + (self.size, self.size))
        out[..., : self.dim, self.dim] = v
        return out

    def vee_matrix(self, m):
        return m[..., : self.dim, self.dim]

    def left_generators(self, x):
        return np.broadcast_to(np.eye(self.dim), (x.shape[0], self.dim, self.dim))

    def retract(self, x, delta):
        return x + delta

    def right_jacobian(self, v):
        return np.broadcast_to(np.eye(self.dim), v.shape[:-1] + (self.dim, self.dim))

    right_jacobian_inv = right_jacobian


SO3 = SO3Group()
SE3 = SE3Group()


def Rd(d: int) -> RdGroup:
    return RdGroup(d)


def _transpose(a):
    if isinstance(a, Jet):
        return a.mT
    return np.swapaxes(a, -1, -2)


def group_from_tag(tag: str, d: int | None = None):
    tag = tag.upper()
    if tag == "SO3":
        return SO3
    if tag == "SE3":
        return SE3
    if tag == "RD":
        if d is None:
            raise ValueError("Rd group needs a dimension")
        return RdGroup(int(d))
    raise ValueError(f"unknown group tag {tag!r}")


# --------------------------------------------------------------------------- value types

def _check_rotation(m: np.ndarray, tol: float = 1e-9) -> None:
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        raise ValueError("rotation must be a finite 3x3 matrix")
    if np.linalg.norm(m.T @ m - np.eye(3)) > tol or abs(np.linalg.det(m) - 1.0) > tol:
        raise ValueError("matrix is not a proper rotation")


@dataclass(frozen=True, eq=False)
class Rotation3:
    """An element of SO(3) stored as its 3x3 matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        _check_rotation(m)
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Rotation3":
        return cls(np.eye(3))

    def __matmul__(self, other: "Rotation3") -> "Rotation3":
        return Rotation3(self.matrix @ other.matrix)

    def inverse(self) -> "Rotation3":
        return Rotation3(self.matrix.T)

    def to_json(self) -> list:
        return [float(x) for x in self.matrix.reshape(-1)]

    @classmethod
    def from_json(cls, data) -> "Rotation3":
        return cls(np.asarray(data, dtype=float).reshape(3, 3))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """An element of SE(3) stored blockwise as (rotation, translation)."""

    rotation: Rotation3
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(3)
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)
        if not isinstance(self.rotation, Rotation3):
            object.__setattr__(self, "rotation", Rotation3(self.rotation))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(Rotation3.identity(), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        return cls(Rotation3(m[:3, :3]), m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation.matrix
        out[:3, 3] = self.translation
        return out

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        r = self.rotation.matrix
        return RigidTransform(Rotation3(r @ other.rotation.matrix),
                              r @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.matrix.T
        return RigidTransform(Rotation3(rt), -rt @ self.translation)

    def to_json(self) -> dict:
        return {"R": self.rotation.to_json(), "t": [float(x) for x in self.translation]}

    @classmethod
    def from_json(cls, data) -> "RigidTransform":
        return cls(Rotation3.from_json(data["R"]), np.asarray(data["t"], dtype=float))


# --------------------------------------------------------------------------- free functions

def _as_matrix(x) -> np.ndarray:
    if isinstance(x, Rotation3):
        return x.matrix
    if isinstance(x, RigidTransform):
        return x.as_matrix()
    return np.asarray(x, dtype=float)


def _wrap(m: np.ndarray):
    if m.shape == (3, 3):
        return Rotation3(m)
    return RigidTransform.from_matrix(m)


def exp_map(v):
    """Exp of a 3-vector (SO(3)) or 6-vector (SE(3), ordered (v, w))."""
    v = np.asarray(v, dtype=float)
    if v.shape == (3,):
        return Rotation3(so3_exp(v))
    if v.shape == (6,):
        return RigidTransform.from_matrix(se3_exp(v))
    raise ValueError(f"expected a 3- or 6-vector, got shape {v.shape}")


def log_map(x) -> np.ndarray:
    """Log on the principal branch; raises :class:`BranchError` at angle pi."""
    m = _as_matrix(x)
    if m.shape == (3, 3):
        return so3_log(m)
    if m.shape == (4, 4):
        return se3_log(m)
    raise ValueError(f"expected a 3x3 or 4x4 element, got shape {m.shape}")


def hat(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-1] == 3:
        return so3_hat(v)
    if v.shape[-1] == 6:
        return se3_hat(v)
    raise ValueError("hat expects 3- or 6-vectors")


def vee(m, tol: float = 1e-9) -> np.ndarray:
    """Inverse of :func:`hat`; rejects matrices outside the algebra."""
    m = np.asarray(m, dtype=float)
    if m.shape[-2:] == (3, 3):
        if np.max(np.abs(m + np.swapaxes(m, -1, -2)), initial=0.0) > tol:
            raise ValueError("matrix is not skew-symmetric")
        return so3_vee(m)
    if m.shape[-2:] == (4, 4):
        rot = m[..., :3, :3]
        if (np.max(np.abs(rot + np.swapaxes(rot, -1, -2)), initial=0.0) > tol
                or np.max(np.abs(m[..., 3, :]), initial=0.0) > tol):
            raise ValueError("matrix is not in se(3)")
        return se3_vee(m)
    raise ValueError("vee expects 3x3 or 4x4 matrices")


def adjoint(x) -> np.ndarray:
    m = _as_matrix(x)
    if m.shape == (3, 3):
        return m.copy()
    return se3_adjoint(m)


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Lie bracket [A, B] = AB - BA of two algebra matrices."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a @ b - b @ a


def right_jacobian(v) -> np.ndarray:
    return so3_right_jacobian(np.asarray(v, dtype=float))


def right_jacobian_inv(v) -> np.ndarray:
    return so3_right_jacobian_inv(np.asarray(v, dtype=float))


def perturb(x, delta):
    """Left-multiplicative update Exp(delta) * x."""
    m = _as_matrix(x)
    delta = np.asarray(delta, dtype=float)
    if m.shape == (3, 3):
        return Rotation3(orthonormalize(so3_exp(delta) @ m))
    return RigidTransform.from_matrix(se3_exp(delta) @ m)


def random_tangent(rng: np.random.Generator, dim: int, radius: float = 2.0,
                   size=None) -> np.ndarray:
    """Tangent vectors drawn uniformly from a ball of the given radius."""
    shape = (dim,) if size is None else (size, dim)
    g = rng.standard_normal(shape)
    g /= np.linalg.norm(g, axis=-1, keepdims=True)
    r = radius * rng.random(shape[:-1] + (1,)) ** (1.0 / dim)
    return g * r
