"""Self-check suites run by ``liespline check``.

Each suite compares library output against an independent oracle (closed-form
operation counts, finite differences, or the other derivative formulation) and
returns :class:`CheckResult` records.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blending import blending_matrix, lambda_arrays
from .lie import (
    SE3, SO3, adjoint, commutator, exp_map, hat, log_map, random_tangent, right_jacobian,
    right_jacobian_inv, so3_exp, so3_log, vee,
)
from .so3_jacobians import knot_jacobians, local_jacobians, omegadot_jacobians_direct
from .spline import (
    LieSpline, OpCounter, _recursion, acceleration_baseline, acceleration_recursive, evaluate,
    random_knots, segment_context, velocity_baseline, velocity_recursive,
)

GROUPS = {"SO3": SO3, "SE3": SE3}


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"{status} {self.name}: {self.value:.3e} <= {self.tolerance:.1e}{extra}"

    def to_json(self) -> dict:
        return {"name": self.name, "passed": self.passed, "value": self.value,
                "tolerance": self.tolerance, "detail": self.detail}


def _result(name, value, tol, detail="") -> CheckResult:
    value = float(value)
    return CheckResult(name, bool(np.isfinite(value) and value <= tol), value, tol, detail)


def _rel(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    axes = tuple(range(1, a.ndim))
    num = np.sqrt(np.sum((a - b) ** 2, axis=axes))
    den = np.maximum(1.0, np.sqrt(np.sum(b ** 2, axis=axes)))
    return float(np.max(num / den))


def _batch_knots(group, k, n, rng, step=1.0):
    knots = np.array([random_knots(group, k, rng, step) for _ in range(n)])
    return [knots[:, j] for j in range(k)]


# --------------------------------------------------------------------------- op counts

def expected_opcounts(k: int) -> dict:
    """Closed-form operation counts of the reference complexity table."""
    return {
        "velocity_baseline": {"mm_mults": (k - 1) ** 2 + 1, "mv_mults": 0, "adds": k - 2},
        "velocity_recursive": {"mm_mults": 1, "mv_mults": k - 1, "adds": k - 1},
        "acceleration_baseline": {"mm_mults": k * k * (k - 1) // 2, "mv_mults": 0,
                                  "adds": k * k * (k - 1) // 2},
        "acceleration_recursive_any": {"mm_mults": 2 * k, "mv_mults": k - 1, "adds": 3 * k - 2},
        "acceleration_recursive_so3": {"mm_mults": 2, "mv_mults": 2 * (k - 1),
                                       "adds": 2 * k - 1},
    }


def measured_opcounts(k: int) -> dict:
    rng = np.random.default_rng(k)
    out = {}
    for key, group in (("so3", SO3), ("se3", SE3)):
        ctx = segment_context(group, _batch_knots(group, k, 1, rng), [0.4])
        c = {name: OpCounter() for name in ("vb", "vr", "ab", "ar")}
        velocity_baseline(ctx, c["vb"], group_derivative=True)
        velocity_recursive(ctx, c["vr"], group_derivative=True)
        acceleration_baseline(ctx, c["ab"], group_derivative=True)
        acceleration_recursive(ctx, c["ar"], group_derivative=True)
        out[key] = {n: v.as_dict() for n, v in c.items()}
    return {
        "velocity_baseline": out["se3"]["vb"],
        "velocity_recursive": out["so3"]["vr"],
        "acceleration_baseline": out["se3"]["ab"],
        "acceleration_recursive_any": out["se3"]["ar"],
        "acceleration_recursive_so3": out["so3"]["ar"],
    }


def check_opcounts(ks=range(2, 7)) -> list:
    results = []
    for k in ks:
        exp, got = expected_opcounts(k), measured_opcounts(k)
        bad = [n for n in exp if exp[n] != got[n]]
        results.append(CheckResult(f"opcounts k={k}", not bad, float(len(bad)), 0.0,
                                   "mismatch: " + ", ".join(bad) if bad else ""))
    return results


# --------------------------------------------------------------------------- derivatives

def check_equivalence(n: int = 1000, ks=range(2, 7), seed: int = 0, tol: float = 1e-11) -> list:
    results = []
    for gname, group in GROUPS.items():
        for k in ks:
            rng = np.random.default_rng([seed, k, len(gname)])
            ctx = segment_context(group, _batch_knots(group, k, n, rng), rng.random(n))
            wr, wdr = _recursion(ctx, 2, {})
            wb = velocity_baseline(ctx)
            wdb = acceleration_baseline(ctx)
            err = max(_rel(wb, wr), _rel(wdb, wdr))
            results.append(_result(f"equivalence {gname} k={k}", err, tol))
    return results


def check_derivative_ladder(n: int = 200, ks=range(2, 7), seed: int = 0, h: float = 1e-6,
                            tol: float = 1e-5) -> list:
    """omega vs FD of Log-local displacement; omegadot vs FD of omega; jerk vs FD of omegadot."""
    results = []
    for gname, group in GROUPS.items():
        for k in ks:
            rng = np.random.default_rng([seed, k, 7 + len(gname)])
            knots = _batch_knots(group, k, n, rng)
            u = 0.05 + 0.9 * rng.random(n)

            def at(uu):
                c = segment_context(group, knots, uu)
                return evaluate(c), _recursion(c, 3, {})

            x0, (w, wd, wdd) = at(u)
            xp, (wp, wdp, _) = at(u + h)
            xm, (wm, wdm, _) = at(u - h)
            inv = group.inverse(x0)
            fd_w = (group.log(inv @ xp, check=False) - group.log(inv @ xm, check=False)) / (2 * h)
            results.append(_result(f"ladder omega {gname} k={k}", _rel(w, fd_w), tol))
            results.append(_result(f"ladder omegadot {gname} k={k}",
                                   _rel(wd, (wp - wm) / (2 * h)), tol))
            results.append(_result(f"ladder jerk {gname} k={k}",
                                   _rel(wdd, (wdp - wdm) / (2 * h)), tol))
    return results


# --------------------------------------------------------------------------- jacobians

def fd_knot_jacobians(knots: list, u, eps: float = 1e-6) -> dict:
    """Central differences of (rho, omega, omegadot) under left perturbation of each knot."""
    k = len(knots)
    n = knots[0].shape[0]

    def f(kn):
        c = segment_context(SO3, kn, u)
        w, wd = _recursion(c, 2, {})
        return {"d_rho": so3_log(evaluate(c), check=False), "d_omega": w, "d_omegadot": wd}

    out = {name: [np.zeros((n, 3, 3)) for _ in range(k)] for name in ("d_rho", "d_omega",
                                                                     "d_omegadot")}
    for j in range(k):
        for a in range(3):
            e = np.zeros((n, 3))
            e[:, a] = eps
            kp, km = list(knots), list(knots)
            kp[j] = so3_exp(e) @ knots[j]
            km[j] = so3_exp(-e) @ knots[j]
            fp, fm = f(kp), f(km)
            for name in out:
                out[name][j][:, :, a] = (fp[name] - fm[name]) / (2 * eps)
    return out


def check_jacobians(n: int = 500, ks=range(3, 7), seed: int = 0, tol: float = 1e-5,
                    direct_tol: float = 1e-12, step: float = 0.5) -> list:
    """Max relative error per (f, j, k) against FD, and direct vs accumulator omegadot form."""
    results = []
    for k in ks:
        rng = np.random.default_rng([seed, k, 99])
        knots = _batch_knots(SO3, k, n, rng, step)
        u = rng.random(n)
        ctx = segment_context(SO3, knots, u)
        loc = local_jacobians(ctx, warn=False)
        keep = np.linalg.norm(loc.rho, axis=-1) < np.pi - 0.1
        kj = knot_jacobians(ctx, loc, local_knots=knots)
        fd = fd_knot_jacobians(knots, u)
        for name in ("d_rho", "d_omega", "d_omegadot"):
            for j in range(k):
                a, b = getattr(kj, name)[j], fd[name][j]
                sel = keep if name == "d_rho" else np.ones(n, bool)
                err = np.linalg.norm(a[sel] - b[sel], axis=(1, 2)) / np.maximum(
                    1.0, np.linalg.norm(b[sel], axis=(1, 2)))
                results.append(_result(f"jacobian {name[2:]} j={j} k={k}",
                                       err.max(initial=0.0), tol))
        direct = omegadot_jacobians_direct(ctx)
        err = max(np.abs(a - b).max() for a, b in zip(direct, loc.d_omegadot))
        results.append(_result(f"omegadot jacobian forms k={k}", err, direct_tol))
    return results


# --------------------------------------------------------------------------- lemmas

def check_lemmas(seed: int = 0) -> list:
    results = []
    err = max(np.abs(blending_matrix(k).m_cum[0] - np.eye(k)[0]).max() for k in range(2, 13))
    results.append(_result("cumulative first row is e0 (k=2..12)", err, 1e-12))
    grid = np.linspace(0.0, 1.0, 1000, endpoint=False)
    err = max(np.abs(lambda_arrays(k, grid)[0][:, 0] - 1.0).max() for k in range(2, 13))
    results.append(_result("lambda_0 == 1 on u-grid", err, 1e-12))
    rng = np.random.default_rng([seed, 2])
    for gname, group in GROUPS.items():
        sp = LieSpline(group, random_knots(group, 8, rng), 0.0, 0.5, 2)
        t = sp.t0 + sp.dt * np.arange(sp.num_segments)
        err = np.abs(sp.evaluate(t) - sp.knots[: sp.num_segments]).max()
        results.append(_result(f"k=2 interpolates knots {gname}", err, 1e-12))
    for gname, group in GROUPS.items():
        for k in (4, 5, 6):
            sp = LieSpline(group, random_knots(group, k + 6, rng), 0.0, 1.0, k)
            seg = np.arange(sp.num_segments - 1)
            left = sp.context_at(seg, np.ones(seg.size))
            right = sp.context_at(seg + 1, np.zeros(seg.size))
            err = max(np.abs(evaluate(left) - evaluate(right)).max(),
                      *(np.abs(a - b).max() for a, b in
                        zip(_recursion(left, 2, {}), _recursion(right, 2, {}))))
            results.append(_result(f"continuity {gname} k={k}", err, 1e-8))
    return results


# --------------------------------------------------------------------------- lie core

def check_lie(n: int = 1000, seed: int = 0) -> list:
    rng = np.random.default_rng([seed, 8])
    results = []
    v = random_tangent(rng, 3, 2.0, size=n)
    w = random_tangent(rng, 3, 2.0, size=n)
    r = so3_exp(v)
    results.append(_result("so3 exp/log round trip", np.abs(so3_exp(so3_log(r)) - r).max(), 1e-12))
    errs = []
    for a, b in zip(v[:n], w[:n]):
        x = exp_map(a)
        errs.append(np.abs((x @ exp_map(b)).matrix - (exp_map(adjoint(x) @ b) @ x).matrix).max())
        errs.append(np.abs(adjoint(x) @ b - vee(x.matrix @ hat(b) @ x.matrix.T)).max())
    results.append(_result("so3 adjoint identities", max(errs), 1e-12))
    v6 = random_tangent(rng, 6, 2.0, size=n)
    w6 = random_tangent(rng, 6, 2.0, size=n)
    errs = []
    for a, b in zip(v6, w6):
        x = exp_map(a)
        lhs = (x @ exp_map(b)).as_matrix()
        rhs = (exp_map(adjoint(x) @ b) @ x).as_matrix()
        errs.append(np.abs(lhs - rhs).max())
        errs.append(np.abs(log_map(exp_map(a)) - a).max() if np.linalg.norm(a[3:]) < 3 else 0.0)
    results.append(_result("se3 adjoint identity and round trip", max(errs), 1e-11))
    norms = np.exp(rng.uniform(np.log(1e-8), np.log(3.0), n))
    dirs = random_tangent(rng, 3, 1.0, size=n)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    vv = dirs * norms[:, None]
    err = max(np.abs(right_jacobian(a) @ right_jacobian_inv(a) - np.eye(3)).max() for a in vv)
    results.append(_result("Jr Jr^-1 = I", err, 1e-10))
    err = max(np.abs(vee(commutator(hat(a), hat(b))) - np.cross(a, b)).max() for a, b in zip(v, w))
    results.append(_result("commutator is cross product", err, 1e-12))
    return results


SUITES = {
    "opcounts": check_opcounts,
    "equivalence": check_equivalence,
    "derivatives": check_derivative_ladder,
    "jacobians": check_jacobians,
    "lemmas": check_lemmas,
    "lie": check_lie,
}


def run_suites(names, seed: int = 0) -> list:
    out = []
    for name in names:
        fn = SUITES[name]
        out.extend(fn() if name == "opcounts" else fn(seed=seed))
    return out


__all__ = ["CheckResult", "expected_opcounts", "measured_opcounts", "fd_knot_jacobians",
           "SUITES", "run_suites"] + [f"check_{n}" for n in ("opcounts", "equivalence",
                                                             "lemmas", "lie", "jacobians")]
