"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` to see the lines as they
are produced; they are also echoed in the terminal summary.  Criteria 5 and 6
take several minutes.
"""

import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES

from liespline.checks import (
    check_derivative_ladder, check_jacobians, check_lemmas, check_lie, measured_opcounts,
)
from liespline.experiments import CalibConfig, calibration_experiment, run_sim, table_configs
from liespline.lie import SE3, SO3
from liespline.spline import (
    acceleration_baseline, acceleration_recursive, random_contexts, velocity_baseline,
    velocity_recursive,
)

# synthetic calibration length; see the README for the runtime trade-off
CALIB_DURATION = 10.0


def _report(n: int, name: str, passed: bool, detail: str) -> None:
    line = f"criterion {n} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def _suite(results):
    worst = max(results, key=lambda r: r.value / r.tolerance if r.tolerance else r.value)
    failed = [r.name for r in results if not r.passed]
    return not failed, worst, failed


def test_criterion_1_opcounts():
    start = time.perf_counter()
    k4 = measured_opcounts(4)
    blue = {
        "velocity_baseline": {"mm_mults": 10, "mv_mults": 0, "adds": 2},
        "velocity_recursive": {"mm_mults": 1, "mv_mults": 3, "adds": 3},
        "acceleration_baseline": {"mm_mults": 24, "mv_mults": 0, "adds": 24},
        "acceleration_recursive_any": {"mm_mults": 8, "mv_mults": 3, "adds": 10},
        "acceleration_recursive_so3": {"mm_mults": 2, "mv_mults": 6, "adds": 7},
    }
    mismatches = [name for name in blue if k4[name] != blue[name]]
    for k in range(2, 7):
        formulas = {
            "velocity_baseline": {"mm_mults": (k - 1) ** 2 + 1, "mv_mults": 0, "adds": k - 2},
            "velocity_recursive": {"mm_mults": 1, "mv_mults": k - 1, "adds": k - 1},
            "acceleration_baseline": {"mm_mults": k * k * (k - 1) // 2, "mv_mults": 0,
                                      "adds": k * k * (k - 1) // 2},
            "acceleration_recursive_any": {"mm_mults": 2 * k, "mv_mults": k - 1,
                                           "adds": 3 * k - 2},
            "acceleration_recursive_so3": {"mm_mults": 2, "mv_mults": 2 * (k - 1),
                                           "adds": 2 * k - 1},
        }
        got = measured_opcounts(k)
        mismatches += [f"{name} k={k}" for name in formulas if got[name] != formulas[name]]
    elapsed = time.perf_counter() - start
    ok = not mismatches and elapsed < 1.0
    _report(1, "operation counts", ok,
            f"{len(mismatches)} mismatches over k=2..6, {elapsed:.2f} s")
    assert not mismatches, mismatches
    assert elapsed < 1.0


def test_criterion_2_formulation_equivalence():
    start = time.perf_counter()
    worst = 0.0
    for group in (SO3, SE3):
        for k in range(2, 7):
            ctx = random_contexts(group, k, 1000, np.random.default_rng([2, k, group.dim]))
            for rec, base in ((velocity_recursive, velocity_baseline),
                              (acceleration_recursive, acceleration_baseline)):
                a, b = rec(ctx), base(ctx)
                err = np.linalg.norm(a - b, axis=1) / np.maximum(1.0, np.linalg.norm(b, axis=1))
                worst = max(worst, float(err.max()))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-11 and elapsed < 30
    _report(2, "formulation equivalence", ok,
            f"max relative difference {worst:.2e} (tol 1e-11), {elapsed:.1f} s")
    assert worst <= 1e-11
    assert elapsed < 30


def test_criterion_3_derivative_ladder():
    start = time.perf_counter()
    ok, worst, failed = _suite(check_derivative_ladder(n=200, h=1e-6, tol=1e-5))
    elapsed = time.perf_counter() - start
    _report(3, "derivative ladder", ok and elapsed < 30,
            f"worst {worst.name} = {worst.value:.2e} (tol 1e-5), {elapsed:.1f} s")
    assert ok, failed
    assert elapsed < 30


def test_criterion_4_jacobians():
    start = time.perf_counter()
    ok, worst, failed = _suite(check_jacobians(n=500, tol=1e-5, direct_tol=1e-12))
    elapsed = time.perf_counter() - start
    _report(4, "SO(3) knot Jacobians", ok and elapsed < 60,
            f"worst {worst.name} = {worst.value:.2e} (tol {worst.tolerance:.0e}), {elapsed:.1f} s")
    assert ok, failed
    assert elapsed < 60


@pytest.mark.slow
def test_criterion_5_simulated_fits():
    results = [run_sim(cfg) for cfg in table_configs(repeats=5)]
    problems = []
    rows = {}
    for res in results:
        c = res.config
        its = [r.iterations for r in res.reports.values()]
        if not all(4 <= i <= 6 for i in its):
            problems.append(f"{c.tag}: iterations {its}")
        if not res.iterations_equal:
            problems.append(f"{c.tag}: iteration counts differ")
        if not all(r.converged for r in res.reports.values()):
            problems.append(f"{c.tag}: not converged")
        if res.formulation_knot_diff > 1e-8:
            problems.append(f"{c.tag}: knots differ by {res.formulation_knot_diff:.1e}")
        if res.speedup <= 1:
            problems.append(f"{c.tag}: speedup {res.speedup:.2f}")
        if c.group == "SO3" and c.deriv == "acceleration" and res.speedup < 2:
            problems.append(f"{c.tag}: speedup {res.speedup:.2f} < 2")
        rows.setdefault((c.group, c.deriv), []).append((c.k, res.speedup))
        print(f"  {c.tag}: iterations {its[0]}, speedup {res.speedup:.2f}")
    for (group, deriv), vals in rows.items():
        s = [v for _, v in sorted(vals)]
        if deriv == "acceleration" and any(b < a for a, b in zip(s, s[1:])):
            problems.append(f"{group} acceleration speedups not monotone: {s}")
    summary = "; ".join(f"{g} {d[:3]} " + "/".join(f"{v:.2f}" for _, v in sorted(vals))
                        for (g, d), vals in rows.items())
    _report(5, "simulated fits", not problems,
            f"speedups k=4/5/6: {summary}" + (f"; problems: {problems}" if problems else ""))
    assert not problems, problems


@pytest.mark.slow
def test_criterion_6_calibration():
    exp = calibration_experiment(CalibConfig(duration=CALIB_DURATION), check_noiseless=True)
    agreement = max(exp.agreement.values())
    noiseless = max(max(v.values()) for v in exp.noiseless_errors.values())
    secs = {(r.representation, r.formulation): r.seconds for r in exp.results}
    faster = secs[("se3", "recursive")] < secs[("se3", "baseline")]
    converged = all(r.report.converged for r in exp.results)
    ok = agreement <= 1e-4 and noiseless <= 1e-6 and faster and converged
    _report(6, "synthetic calibration", ok,
            f"split vs SE(3) {agreement:.1e} (tol 1e-4), noiseless error {noiseless:.1e} "
            f"(tol 1e-6), SE(3) recursive {secs[('se3', 'recursive')]:.1f} s vs baseline "
            f"{secs[('se3', 'baseline')]:.1f} s")
    assert converged
    assert agreement <= 1e-4, exp.agreement
    assert noiseless <= 1e-6, exp.noiseless_errors
    assert faster, secs


def test_criterion_7_structural_lemmas():
    ok, worst, failed = _suite(check_lemmas())
    _report(7, "structural lemmas", ok, f"worst {worst.name} = {worst.value:.2e}")
    assert ok, failed


def test_criterion_8_lie_core():
    start = time.perf_counter()
    ok, worst, failed = _suite(check_lie(n=1000))
    elapsed = time.perf_counter() - start
    _report(8, "Lie-core properties", ok and elapsed < 10,
            f"worst {worst.name} = {worst.value:.2e}, {elapsed:.1f} s")
    assert ok, failed
    assert elapsed < 10
