"""Batched dual numbers for forward-mode differentiation.

A :class:`Jet` carries a value array of shape ``(N, *shape)`` and a derivative
array of shape ``(N, n, *shape)``, where ``N`` is the batch size and ``n`` the
number of infinitesimal directions.  Keeping the direction axis right after the
batch axis lets numpy's ``matmul`` broadcast over it without copies.

Nonlinear Lie-group primitives (Exp, Log) are lifted in :mod:`liespline.lie`
using their closed-form derivatives, the same way jet libraries implement
``sin`` or ``sqrt``.
"""

from __future__ import annotations

import numpy as np


def _lift(x):
    """Insert the direction axis into a plain array so it broadcasts against ``der``."""
    x = np.asarray(x)
    if x.ndim == 0:
        return x
    return x[:, None]


class Jet:
    __slots__ = ("val", "der")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, val: np.ndarray, der: np.ndarray):
        self.val = val
        self.der = der

    @classmethod
    def constant(cls, val: np.ndarray, n: int) -> "Jet":
        val = np.asarray(val, dtype=float)
        return cls(val, np.zeros((val.shape[0], n) + val.shape[1:]))

    @classmethod
    def variable(cls, val: np.ndarray, n: int, offset: int) -> "Jet":
        """Vector-valued variable whose components own directions ``offset..offset+m``."""
        val = np.asarray(val, dtype=float)
        m = val.shape[-1]
        der = np.zeros((val.shape[0], n, m))
        der[:, offset:offset + m, :] = np.eye(m)
        return cls(val, der)

    @property
    def n(self) -> int:
        return self.der.shape[1]

    @property
    def shape(self):
        return self.val.shape

    def __repr__(self) -> str:
        return f"Jet(shape={self.val.shape}, n={self.n})"

    def __neg__(self):
        return Jet(-self.val, -self.der)

    def __add__(self, other):
        if isinstance(other, Jet):
            return Jet(self.val + other.val, self.der + other.der)
        return Jet(self.val + other, self.der + np.zeros_like(_lift(other)))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Jet):
            return Jet(self.val - other.val, self.der - other.der)
        return Jet(self.val - other, self.der + np.zeros_like(_lift(other)))

    def __rsub__(self, other):
        return Jet(other - self.val, -self.der + np.zeros_like(_lift(other)))

    def __mul__(self, other):
        if isinstance(other, Jet):
            return Jet(self.val * other.val,
                       self.der * _lift(other.val) + _lift(self.val) * other.der)
        return Jet(self.val * other, self.der * _lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            inv = 1.0 / other.val
            val = self.val * inv
            der = (self.der - _lift(val) * other.der) * _lift(inv)
            return Jet(val, der)
        return Jet(self.val / other, self.der / _lift(other))

    def __matmul__(self, other):
        if isinstance(other, Jet):
            return Jet(self.val @ other.val,
                       self.der @ other.val[:, None] + self.val[:, None] @ other.der)
        other = np.asarray(other)
        return Jet(self.val @ other, self.der @ _lift(other))

    def __rmatmul__(self, other):
        other = np.asarray(other)
        return Jet(other @ self.val, _lift(other) @ self.der)

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Jet(self.val[(slice(None),) + idx], self.der[(slice(None), slice(None)) + idx])

    @property
    def mT(self) -> "Jet":
        return Jet(np.swapaxes(self.val, -1, -2), np.swapaxes(self.der, -1, -2))

    def sum(self, axis: int) -> "Jet":
        """Sum over a trailing axis (negative index)."""
        if axis >= 0:
            raise ValueError("only trailing (negative) axes can be reduced")
        return Jet(self.val.sum(axis=axis), self.der.sum(axis=axis))

    def sqrt(self) -> "Jet":
        v = np.sqrt(self.val)
        return Jet(v, self.der * _lift(0.5 / v))

    def jacobian(self) -> np.ndarray:
        """Derivative of a vector-valued jet as ``(N, m, n)``."""
        if self.val.ndim != 2:
            raise ValueError("jacobian() expects a batch of vectors")
        return np.swapaxes(self.der, 1, 2)


def value(x):
    return x.val if isinstance(x, Jet) else x


def transpose(a):
    if isinstance(a, Jet):
        return a.mT
    return np.swapaxes(a, -1, -2)


def matvec(a, v):
    """Batched matrix-vector product; either operand may be a :class:`Jet`."""
    if isinstance(a, Jet) or isinstance(v, Jet):
        av, vv = value(a), value(v)
        val = (av @ vv[..., None])[..., 0]
        n = a.n if isinstance(a, Jet) else v.n
        der = np.zeros((val.shape[0], n) + val.shape[1:])
        if isinstance(v, Jet):
            der = der + (av[:, None] @ v.der[..., None])[..., 0]
        if isinstance(a, Jet):
            der = der + (a.der @ vv[:, None, :, None])[..., 0]
        return Jet(val, der)
    return (a @ v[..., None])[..., 0]


def cross(a, b):
    """Batched cross product of 3-vectors (jets allowed)."""
    if isinstance(a, Jet) or isinstance(b, Jet):
        av, bv = value(a), value(b)
        val = np.cross(av, bv)
        n = a.n if isinstance(a, Jet) else b.n
        der = np.zeros((val.shape[0], n, 3))
        if isinstance(a, Jet):
            der = der + np.cross(a.der, bv[:, None])
        if isinstance(b, Jet):
            der = der + np.cross(av[:, None], b.der)
        return Jet(val, der)
    return np.cross(a, b)


def scale(c, x):
    """Multiply a batch ``x`` by per-sample scalars ``c`` of shape ``(N,)``."""
    c = np.asarray(c, dtype=float)
    if c.ndim == 0:
        return x * c
    extra = value(x).ndim - 1
    return x * c.reshape(c.shape + (1,) * extra)


def stack_last(parts):
    """Stack batched vectors/jets along a new trailing axis then flatten it in."""
    if any(isinstance(p, Jet) for p in parts):
        n = next(p.n for p in parts if isinstance(p, Jet))
        parts = [p if isinstance(p, Jet) else Jet.constant(p, n) for p in parts]
        return Jet(np.concatenate([p.val for p in parts], axis=-1),
                   np.concatenate([p.der for p in parts], axis=-1))
    return np.concatenate(parts, axis=-1)
