"""Lie-group primitives: Exp/Log, hat/vee, adjoint, commutator, right Jacobian."""

import json

import numpy as np
import pytest
from conftest import rodrigues
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from liespline.jet import Jet
from liespline.lie import (
    SE3, SO3, BranchError, RigidTransform, Rotation3, adjoint, commutator, exp_map, hat,
    log_map, perturb, random_tangent, right_jacobian, right_jacobian_inv, se3_right_jacobian,
    so3_exp, so3_log, vee,
)

finite = st.floats(-2.0, 2.0, allow_nan=False, allow_infinity=False)
vec3 = arrays(np.float64, 3, elements=finite)
vec6 = arrays(np.float64, 6, elements=finite)


def _rot_ok(m, tol=1e-11):
    return np.linalg.norm(m.T @ m - np.eye(3)) <= tol and abs(np.linalg.det(m) - 1) <= tol


# --------------------------------------------------------------------------- exp / log

def test_exp_zero_is_identity():
    # [TRIVIAL]
    np.testing.assert_array_equal(exp_map(np.zeros(3)).matrix, np.eye(3))
    np.testing.assert_array_equal(exp_map(np.zeros(6)).as_matrix(), np.eye(4))


def test_exp_quarter_turn_about_x():
    # [DERIVED] Rodrigues by hand: Rx(90deg) maps e2 to e3.
    r = exp_map([np.pi / 2, 0.0, 0.0]).matrix
    np.testing.assert_allclose(r[:, 1], [0.0, 0.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(r, [[1, 0, 0], [0, 0, -1], [0, 1, 0]], atol=1e-15)


def test_exp_matches_independent_rodrigues(rng):
    # [DERIVED] axis-angle Rodrigues written separately in conftest.
    for v in random_tangent(rng, 3, 3.0, size=200):
        np.testing.assert_allclose(exp_map(v).matrix, rodrigues(v), atol=1e-14)


def test_exp_log_round_trip_1000(rng):
    # [DERIVED] property with identity oracle; angles below pi - 1e-3.
    v = random_tangent(rng, 3, np.pi - 1e-3, size=1000)
    r = so3_exp(v)
    assert np.abs(so3_exp(so3_log(r)) - r).max() <= 1e-12


def test_log_identity_is_zero():
    # [TRIVIAL]
    np.testing.assert_array_equal(log_map(Rotation3.identity()), np.zeros(3))
    np.testing.assert_array_equal(log_map(RigidTransform.identity()), np.zeros(6))


def test_log_quarter_turn_about_z():
    # [DERIVED] inverse of the hand Rodrigues case.
    rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    np.testing.assert_allclose(log_map(Rotation3(rz)), [0.0, 0.0, np.pi / 2], atol=1e-15)


@given(vec3)
def test_log_preserves_norm(v):
    # [TRIVIAL] principal branch norm preservation.
    n = np.linalg.norm(v)
    if n >= np.pi - 1e-3:
        v = v * (np.pi - 1e-3) / n
    assert abs(np.linalg.norm(log_map(exp_map(v))) - np.linalg.norm(v)) <= 1e-12


def test_log_at_pi_is_branch_error():
    # [TRIVIAL] trace(R) = -1 for a half turn.
    with pytest.raises(BranchError):
        log_map(Rotation3(np.diag([1.0, -1.0, -1.0])))


def test_small_angle_paths_are_continuous():
    # [DERIVED] values on both sides of the small-angle switch agree to series accuracy.
    d = np.array([0.3, -0.5, 0.8]) / np.linalg.norm([0.3, -0.5, 0.8])
    for t in (1e-7, 1e-6, 1.0000001e-6, 1e-5):
        np.testing.assert_allclose(so3_exp(t * d), rodrigues(t * d), atol=1e-16)
        np.testing.assert_allclose(so3_log(rodrigues(t * d)), t * d, rtol=1e-9, atol=1e-20)


def test_se3_round_trip(rng):
    # [DERIVED] identity oracle.
    for v in random_tangent(rng, 6, 2.0, size=200):
        np.testing.assert_allclose(log_map(exp_map(v)), v, atol=1e-12)


def test_se3_exp_rotation_block_is_so3_exp(rng):
    # [DERIVED] the rotation block of Exp on se(3) is Exp on so(3) of the angular part.
    for v in random_tangent(rng, 6, 2.0, size=50):
        np.testing.assert_allclose(exp_map(v).rotation.matrix, rodrigues(v[3:]), atol=1e-14)


def test_se3_exp_matches_matrix_exponential(rng):
    # [DERIVED] scipy expm of the 4x4 algebra matrix.
    from scipy.linalg import expm
    for v in random_tangent(rng, 6, 2.0, size=50):
        np.testing.assert_allclose(exp_map(v).as_matrix(), expm(hat(v)), atol=1e-12)


# --------------------------------------------------------------------------- hat / vee

def test_hat_of_123():
    # [TRIVIAL]
    np.testing.assert_array_equal(hat([1, 2, 3]), [[0, -3, 2], [3, 0, -1], [-2, 1, 0]])


@given(vec3, vec3)
def test_hat_vee_and_cross(v, w):
    # [TRIVIAL]
    np.testing.assert_array_equal(vee(hat(v)), v)
    np.testing.assert_allclose(hat(v) @ w, np.cross(v, w), atol=1e-14)


@given(vec6)
def test_se3_hat_vee(v):
    # [TRIVIAL]
    np.testing.assert_array_equal(vee(hat(v)), v)
    assert np.all(hat(v)[3] == 0)


def test_vee_rejects_non_algebra():
    with pytest.raises(ValueError):
        vee(np.eye(3))
    m = hat(np.arange(6.0))
    m[3, 0] = 1.0
    with pytest.raises(ValueError):
        vee(m)


# --------------------------------------------------------------------------- adjoint

def test_adjoint_identity():
    # [TRIVIAL]
    np.testing.assert_array_equal(adjoint(Rotation3.identity()), np.eye(3))
    np.testing.assert_array_equal(adjoint(RigidTransform.identity()), np.eye(6))


def test_so3_adjoint_is_rotation(rng):
    # [PAPER] for SO(3) the adjoint is the rotation matrix itself.
    for v in random_tangent(rng, 3, 2.0, size=20):
        x = exp_map(v)
        np.testing.assert_array_equal(adjoint(x), x.matrix)


@pytest.mark.parametrize("dim", [3, 6])
def test_adjoint_identities_1000(rng, dim):
    # [PAPER] X Exp(v) = Exp(Adj v) X and Adj v = (X v^ X^-1)v.
    errs = []
    for a, b in zip(random_tangent(rng, dim, 2.0, 1000), random_tangent(rng, dim, 2.0, 1000)):
        x = exp_map(a)
        m = x.matrix if dim == 3 else x.as_matrix()
        lhs = (x @ exp_map(b))
        rhs = exp_map(adjoint(x) @ b) @ x
        lm = lhs.matrix if dim == 3 else lhs.as_matrix()
        rm = rhs.matrix if dim == 3 else rhs.as_matrix()
        errs.append(np.abs(lm - rm).max())
        errs.append(np.abs(adjoint(x) @ b - vee(m @ hat(b) @ np.linalg.inv(m))).max())
    assert max(errs) <= 1e-12


@pytest.mark.parametrize("dim", [3, 6])
def test_adjoint_homomorphism(rng, dim):
    for a, b in zip(random_tangent(rng, dim, 2.0, 200), random_tangent(rng, dim, 2.0, 200)):
        x, y = exp_map(a), exp_map(b)
        np.testing.assert_allclose(adjoint(x @ y), adjoint(x) @ adjoint(y), atol=1e-11)


# --------------------------------------------------------------------------- commutator

def test_commutator_self_is_zero():
    # [TRIVIAL]
    m = hat([0.3, -1.0, 2.0])
    np.testing.assert_array_equal(commutator(m, m), np.zeros((3, 3)))


def test_commutator_basis():
    # [TRIVIAL] e1 x e2 = e3.
    e = np.eye(3)
    np.testing.assert_array_equal(vee(commutator(hat(e[0]), hat(e[1]))), e[2])


def test_commutator_is_cross_product_1000(rng):
    # [PAPER] [v^, w^]v = v x w.
    v = random_tangent(rng, 3, 2.0, 1000)
    w = random_tangent(rng, 3, 2.0, 1000)
    err = max(np.abs(vee(commutator(hat(a), hat(b))) - np.cross(a, b)).max() for a, b in zip(v, w))
    assert err <= 1e-12


# --------------------------------------------------------------------------- right Jacobian

def test_right_jacobian_at_zero():
    # [TRIVIAL]
    np.testing.assert_array_equal(right_jacobian(np.zeros(3)), np.eye(3))
    np.testing.assert_array_equal(right_jacobian_inv(np.zeros(3)), np.eye(3))


def _log_uniform_vectors(rng, n, lo, hi):
    d = random_tangent(rng, 3, 1.0, n)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * np.exp(rng.uniform(np.log(lo), np.log(hi), n))[:, None]


def test_right_jacobian_inverse_pair(rng):
    # [TRIVIAL] Jr Jr^-1 = I; [DERIVED] Jr^-1 vs numpy matrix inverse.
    for v in _log_uniform_vectors(rng, 1000, 1e-8, 3.0):
        np.testing.assert_allclose(right_jacobian(v) @ right_jacobian_inv(v), np.eye(3),
                                   atol=1e-10)
    for v in _log_uniform_vectors(rng, 500, 1e-6, 3.0):
        np.testing.assert_allclose(right_jacobian_inv(v), np.linalg.inv(right_jacobian(v)),
                                   atol=1e-9)


def test_right_jacobian_defining_limit(rng):
    # [DERIVED] FD of Log(Exp(v)^-1 Exp(v + eps w)) / eps.
    eps = 1e-6
    for v in random_tangent(rng, 3, 2.5, 200):
        w = rng.standard_normal(3)
        w /= np.linalg.norm(w)
        lhs = so3_log(rodrigues(v).T @ rodrigues(v + eps * w)) / eps
        assert np.linalg.norm(lhs - right_jacobian(v) @ w) <= 1e-5


def test_se3_right_jacobian_defining_limit(rng):
    # [DERIVED] same FD oracle on SE(3).
    eps = 1e-6
    for v in random_tangent(rng, 6, 2.0, 100):
        w = rng.standard_normal(6)
        x0 = SE3.exp(v[None])[0]
        x1 = SE3.exp((v + eps * w)[None])[0]
        lhs = SE3.log((np.linalg.inv(x0) @ x1)[None])[0] / eps
        assert np.linalg.norm(lhs - se3_right_jacobian(v) @ w) <= 1e-5 * max(1, np.linalg.norm(w))


# --------------------------------------------------------------------------- perturb

def test_perturb(rng):
    # [TRIVIAL]
    x = exp_map(random_tangent(rng, 3))
    np.testing.assert_allclose(perturb(x, np.zeros(3)).matrix, x.matrix, atol=1e-15)
    v = random_tangent(rng, 3)
    np.testing.assert_allclose(perturb(Rotation3.identity(), v).matrix, exp_map(v).matrix,
                               atol=1e-15)
    delta = 1e-3 * random_tangent(rng, 3)
    np.testing.assert_allclose(log_map(perturb(x, delta) @ x.inverse()), delta, atol=1e-14)
    t = exp_map(random_tangent(rng, 6))
    d6 = 1e-3 * random_tangent(rng, 6)
    np.testing.assert_allclose(log_map(perturb(t, d6) @ t.inverse()), d6, atol=1e-14)


# --------------------------------------------------------------------------- closure, types

@given(vec3, vec3)
def test_group_closure(a, b):
    x, y = exp_map(a), exp_map(b)
    assert _rot_ok((x @ y).matrix)
    assert _rot_ok(x.inverse().matrix)


def test_rotation_rejects_non_orthonormal():
    with pytest.raises(ValueError):
        Rotation3(2 * np.eye(3))
    with pytest.raises(ValueError):
        Rotation3(np.diag([1.0, 1.0, -1.0]))


def test_json_round_trip(rng):
    r = exp_map(random_tangent(rng, 3))
    assert len(r.to_json()) == 9
    np.testing.assert_array_equal(Rotation3.from_json(json.loads(json.dumps(r.to_json()))).matrix,
                                  r.matrix)
    t = exp_map(random_tangent(rng, 6))
    back = RigidTransform.from_json(json.loads(json.dumps(t.to_json())))
    np.testing.assert_array_equal(back.as_matrix(), t.as_matrix())
    assert set(t.to_json()) == {"R", "t"}


# --------------------------------------------------------------------------- jets

@pytest.mark.parametrize("group,dim", [(SO3, 3), (SE3, 6)])
def test_lifted_exp_log_match_fd(rng, group, dim):
    # [DERIVED] jet derivative vs central differences of the plain map.
    v = random_tangent(rng, dim, 1.5, 4)
    jet = group.log(group.exp(Jet.variable(v, dim, 0)))
    np.testing.assert_allclose(jet.val, v, atol=1e-12)
    np.testing.assert_allclose(jet.jacobian(), np.broadcast_to(np.eye(dim), (4, dim, dim)),
                               atol=1e-9)
    ex = group.exp(Jet.variable(v, dim, 0))
    h = 1e-6
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = h
        fd = (group.exp(v + e) - group.exp(v - e)) / (2 * h)
        np.testing.assert_allclose(ex.der[:, i], fd, atol=1e-8)
