"""Experiment harnesses: simulated trajectory fitting and synthetic camera-IMU calibration."""

from __future__ import annotations

import os
import statistics
import time
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from .lie import SE3, SO3, Rd, random_tangent, so3_exp, so3_log
from .optimizer import (
    Intrinsics, Problem, ResidualBlock, SolveOptions, SolveReport, evaluate_residuals, solve,
)
from .spline import LieSpline, random_knots

SEED_ENV = "LIE_SPLINE_SEED"
DEFAULT_SEED = 0
GROUPS = {"SO3": SO3, "SE3": SE3}


def resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return int(seed)
    env = os.environ.get(SEED_ENV)
    return int(env) if env not in (None, "") else DEFAULT_SEED


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named purpose, derived from one root seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


def _timed_solves(problem, formulation, mode, repeats, options):
    times, report = [], None
    for _ in range(repeats):
        t = time.perf_counter()
        report = solve(problem, formulation, mode, options)
        times.append(time.perf_counter() - t)
    return report, statistics.median(times)


# --------------------------------------------------------------------------- simulated fit

@dataclass
class SimConfig:
    group: str = "SO3"
    k: int = 4
    deriv: str = "velocity"
    dt: float = 2.0
    n_value: int = 25
    n_deriv: int = 2020
    perturbation: float = 0.1
    knot_step: float = 0.5
    seed: int = DEFAULT_SEED
    repeats: int = 5
    jacobian_mode: str = "forward"
    n_knots: int | None = None
    noise: float = 0.0

    def __post_init__(self):
        self.group = self.group.upper()
        if self.group not in GROUPS:
            raise ValueError(f"group must be one of {sorted(GROUPS)}")
        if self.deriv not in ("velocity", "acceleration"):
            raise ValueError("deriv must be 'velocity' or 'acceleration'")
        if not 2 <= self.k <= 12:
            raise ValueError("k must be in [2, 12]")
        if self.n_knots is None:
            self.n_knots = 100 + self.k

    @property
    def tag(self) -> str:
        return f"{self.group}-k{self.k}-{self.deriv[:3]}"


@dataclass(eq=False)
class SimResult:
    config: SimConfig
    reports: dict
    seconds: dict
    speedup: float
    knot_error: float
    formulation_knot_diff: float

    @property
    def iterations_equal(self) -> bool:
        its = {r.iterations for r in self.reports.values()}
        return len(its) == 1

    def to_json(self, timing: bool = True) -> dict:
        secs = self.seconds if timing else {f: 0.0 for f in self.seconds}
        reps = {}
        for f, r in self.reports.items():
            d = r.to_json()
            if not timing:
                d["iteration_seconds"] = [0.0] * len(d["iteration_seconds"])
                d["total_seconds"] = 0.0
            reps[f] = d
        return {"config": asdict(self.config), "seconds": secs,
                "speedup": self.speedup if timing else 0.0, "knot_error": self.knot_error,
                "formulation_knot_diff": self.formulation_knot_diff,
                "iterations_equal": self.iterations_equal, "reports": reps}


def sim_problem(config: SimConfig):
    """Ground-truth spline plus a problem initialized at perturbed knots."""
    g = GROUPS[config.group]
    rng = substream(config.seed, f"sim/{config.tag}")
    truth = LieSpline(g, random_knots(g, config.n_knots, rng, config.knot_step), 0.0,
                      config.dt, config.k)
    lo, hi = truth.valid_interval()
    residuals = []
    tv = np.sort(rng.uniform(lo, hi, config.n_value))
    td = np.sort(rng.uniform(lo, hi, config.n_deriv))
    delta = rng.uniform(-config.perturbation, config.perturbation, (config.n_knots, g.dim))
    noise_rng = substream(config.seed, f"sim/{config.tag}/noise")
    xv = truth.evaluate(tv)
    if config.noise > 0:
        xv = g.retract(xv, config.noise * noise_rng.standard_normal((tv.size, g.dim)))
    for t, x in zip(tv, xv):
        residuals.append(ResidualBlock("value", t, x))
    order = 1 if config.deriv == "velocity" else 2
    b = truth.derivatives(td, order, time_scaled=True)
    meas = b.velocity if order == 1 else b.acceleration
    if config.noise > 0:
        meas = meas + config.noise * noise_rng.standard_normal(meas.shape)
    for t, m in zip(td, meas):
        residuals.append(ResidualBlock(config.deriv, t, m))
    init = LieSpline(g, g.retract(truth.knots, delta), 0.0, config.dt, config.k)
    return truth, Problem({"traj": init}, residuals)


def _knot_distance(group, a: np.ndarray, b: np.ndarray) -> float:
    inv = group.inverse(a)
    return float(np.linalg.norm(group.log(inv @ b, check=False), axis=-1).max())


def run_sim(config: SimConfig, options: SolveOptions | None = None) -> SimResult:
    """Fit with both formulations, time them and compare results."""
    truth, problem = sim_problem(config)
    g = GROUPS[config.group]
    reports, seconds = {}, {}
    for f in ("recursive", "baseline"):
        reports[f], seconds[f] = _timed_solves(problem, f, config.jacobian_mode,
                                               config.repeats, options)
    kr = reports["recursive"].problem.knots["traj"]
    kb = reports["baseline"].problem.knots["traj"]
    speedup = seconds["baseline"] / seconds["recursive"]
    return SimResult(config, reports, seconds, speedup, _knot_distance(g, kr, truth.knots),
                     float(np.abs(kr - kb).max()))


def table_configs(seed: int = DEFAULT_SEED, repeats: int = 5, ks=(4, 5, 6)) -> list:
    return [SimConfig(group=g, k=k, deriv=d, seed=seed, repeats=repeats)
            for g in ("SO3", "SE3") for d in ("velocity", "acceleration") for k in ks]


# --------------------------------------------------------------------------- calibration

@dataclass
class CalibConfig:
    duration: float = 20.0
    k: int = 5
    dt: float = 0.01
    imu_rate: float = 200.0
    camera_rate: float = 20.0
    n_cameras: int = 2
    grid: int = 6
    spacing: float = 0.1
    gyro_sigma: float = 1e-3
    accel_sigma: float = 1e-2
    pixel_sigma: float = 0.5
    noise: float = 1.0
    seed: int = DEFAULT_SEED
    init_rotation: float = 0.01
    init_translation: float = 0.01
    init_gravity: float = 0.1


@dataclass(eq=False)
class CalibScene:
    """Ground truth for a synthetic calibration run.

    The IMU follows smooth rotational and translational oscillations about a
    pose one meter in front of a planar corner grid (z = 0 plane); cameras look
    along the IMU's +z axis.
    """

    config: CalibConfig
    rot_knots: np.ndarray
    pos_knots: np.ndarray
    t_ic: list
    gravity: np.ndarray
    b_g: np.ndarray
    b_a: np.ndarray
    points: np.ndarray
    intrinsics: Intrinsics = field(default_factory=Intrinsics)

    @property
    def t0(self) -> float:
        return 0.0

    def splines(self, representation: str) -> dict:
        c = self.config
        if representation == "split":
            return {"rot": LieSpline(SO3, self.rot_knots, self.t0, c.dt, c.k),
                    "pos": LieSpline(Rd(3), self.pos_knots, self.t0, c.dt, c.k)}
        if representation == "se3":
            return {"traj": LieSpline(SE3, _se3_knots(self.rot_knots, self.pos_knots),
                                      self.t0, c.dt, c.k)}
        raise ValueError("representation must be 'split' or 'se3'")

    def extras(self) -> dict:
        out = {"b_g": self.b_g, "b_a": self.b_a, "g": self.gravity}
        for c, t in enumerate(self.t_ic):
            out[f"T_ic{c}"] = t
        return out

    def window(self) -> tuple[float, float]:
        c = self.config
        return self.t0, self.t0 + (self.rot_knots.shape[0] - c.k + 1) * c.dt


def _se3_knots(rot: np.ndarray, pos: np.ndarray) -> np.ndarray:
    out = np.zeros((rot.shape[0], 4, 4))
    out[:, :3, :3] = rot
    out[:, :3, 3] = pos
    out[:, 3, 3] = 1.0
    return out


def _pose(rotvec, trans) -> np.ndarray:
    return _se3_knots(so3_exp(np.asarray(rotvec, float)[None]), np.asarray(trans, float)[None])[0]


def make_scene(config: CalibConfig) -> CalibScene:
    rng = substream(config.seed, "calib/scene")
    n_knots = int(round(config.duration / config.dt)) + config.k
    t = config.dt * np.arange(n_knots)
    # a few incommensurate low frequencies per axis
    freqs = rng.uniform(0.2, 0.8, (3, 3))
    phases = rng.uniform(0, 2 * np.pi, (3, 3))
    amp_r = rng.uniform(0.05, 0.15, (3, 3))
    amp_p = rng.uniform(0.03, 0.08, (3, 3))
    arg = 2 * np.pi * freqs[None] * t[:, None, None] + phases[None]
    rotvec = (amp_r[None] * np.sin(arg)).sum(axis=-1)
    pos = (amp_p[None] * np.cos(arg)).sum(axis=-1) + np.array([0.25, 0.25, -1.0])
    rot = so3_exp(rotvec)
    t_ic = [_pose(random_tangent(rng, 3, 0.05), np.array([0.05 * (1 - 2 * (c % 2)), 0.02, 0.0])
                  + random_tangent(rng, 3, 0.01))
            for c in range(config.n_cameras)]
    g = np.array([0.0, 0.0, -9.81]) + random_tangent(rng, 3, 0.5)
    b_g = random_tangent(rng, 3, 0.01)
    b_a = random_tangent(rng, 3, 0.05)
    gx, gy = np.meshgrid(np.arange(config.grid), np.arange(config.grid), indexing="ij")
    points = np.stack([gx.ravel() * config.spacing, gy.ravel() * config.spacing,
                       np.zeros(config.grid ** 2)], axis=-1)
    return CalibScene(config, rot, pos, t_ic, g, b_g, b_a, points)


def _sample_times(scene: CalibScene, rate: float) -> np.ndarray:
    lo, hi = scene.window()
    n = int(np.floor((hi - lo) * rate - 1e-9)) + 1
    t = lo + np.arange(n) / rate
    return t[t < hi]


def synthesize_measurements(scene: CalibScene, representation: str = "split",
                            noise: float | None = None) -> list:
    """Residual blocks whose measurements are generated from the scene.

    The trajectory is interpreted in ``representation``; predictions come from
    the same residual model the optimizer uses (residual at truth with a zero
    measurement), and noise is added on top.  Only corners in front of the
    camera and inside the image are emitted.
    """
    c = scene.config
    noise = c.noise if noise is None else noise
    rng = substream(c.seed, f"calib/noise/{representation}")
    t_imu = _sample_times(scene, c.imu_rate)
    t_cam = _sample_times(scene, c.camera_rate)
    blocks = []
    w_g, w_a, w_p = c.gyro_sigma ** -2, c.accel_sigma ** -2, c.pixel_sigma ** -2
    for t in t_imu:
        blocks.append(ResidualBlock("gyro", t, np.zeros(3), w_g))
        blocks.append(ResidualBlock("accel", t, np.zeros(3), w_a))
    splines = scene.splines(representation)
    if representation == "split":
        rot_s, pos_s = splines["rot"], splines["pos"]
        r_cam, p_cam = rot_s.evaluate(t_cam), pos_s.evaluate(t_cam)
    else:
        x = splines["traj"].evaluate(t_cam)
        r_cam, p_cam = x[:, :3, :3], x[:, :3, 3]
    for cam, tic in enumerate(scene.t_ic):
        for t, r, p in zip(t_cam, r_cam, p_cam):
            xi = (scene.points - p) @ r
            xc = (xi - tic[:3, 3]) @ tic[:3, :3]
            vis = scene.intrinsics.visible(xc)
            for pt in scene.points[vis]:
                blocks.append(ResidualBlock("projection", t, np.zeros(2), w_p, cam, pt))
    if not any(b.kind == "projection" for b in blocks):
        raise ValueError("degenerate scene: no corner is visible from any camera")
    truth = Problem(splines, blocks, scene.extras(), scene.intrinsics)
    pred, _ = evaluate_residuals(truth)
    sigma = {"gyro": c.gyro_sigma, "accel": c.accel_sigma, "projection": c.pixel_sigma}
    out, pos = [], 0
    for b in truth.batches:
        m = 2 if b.kind == "projection" else 3
        vals = pred[pos:pos + b.size * m].reshape(b.size, m)
        pos += b.size * m
        vals = vals + noise * sigma[b.kind] * rng.standard_normal(vals.shape)
        w = {"gyro": w_g, "accel": w_a, "projection": w_p}[b.kind]
        for n in range(b.size):
            pt = b.points[n] if b.points is not None else None
            out.append(ResidualBlock(b.kind, b.t[n], vals[n], w, b.camera, pt))
    return out


def _smooth_offset(rng, n: int, dt: float, magnitude: float) -> np.ndarray:
    """Per-knot offsets: a constant part plus a slow oscillation, each up to ``magnitude``."""
    t = dt * np.arange(n)
    const = rng.uniform(-magnitude, magnitude, 3)
    amp = rng.uniform(-magnitude, magnitude, 3)
    freq = rng.uniform(0.05, 0.2, 3)
    phase = rng.uniform(0, 2 * np.pi, 3)
    return const + amp * np.sin(2 * np.pi * freq * t[:, None] + phase)


def initial_guess(scene: CalibScene, representation: str) -> tuple[dict, dict]:
    """Smoothly perturbed trajectory, perturbed extrinsics and gravity, zero biases."""
    c = scene.config
    rng = substream(c.seed, "calib/init")
    n = scene.rot_knots.shape[0]
    rot = SO3.retract(scene.rot_knots, _smooth_offset(rng, n, c.dt, c.init_rotation))
    pos = scene.pos_knots + _smooth_offset(rng, n, c.dt, c.init_translation)
    extras = {"b_g": np.zeros(3), "b_a": np.zeros(3),
              "g": scene.gravity + rng.uniform(-c.init_gravity, c.init_gravity, 3)}
    for cam, tic in enumerate(scene.t_ic):
        d = np.concatenate([rng.uniform(-c.init_translation, c.init_translation, 3),
                            rng.uniform(-c.init_rotation, c.init_rotation, 3)])
        extras[f"T_ic{cam}"] = SE3.retract(tic[None], d[None])[0]
    if representation == "split":
        splines = {"rot": LieSpline(SO3, rot, scene.t0, c.dt, c.k),
                   "pos": LieSpline(Rd(3), pos, scene.t0, c.dt, c.k)}
    else:
        splines = {"traj": LieSpline(SE3, _se3_knots(rot, pos), scene.t0, c.dt, c.k)}
    return splines, extras


def rotation_angle(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(so3_log((a.T @ b)[None], check=False)[0]))


def parameter_deviations(est: dict, ref: dict) -> dict:
    """Per-parameter distances: L2 for vectors and translations, angle for rotations."""
    out = {}
    for name in sorted(ref):
        a, b = np.asarray(est[name]), np.asarray(ref[name])
        if name.startswith("T_ic"):
            out[f"{name}.t"] = float(np.linalg.norm(a[:3, 3] - b[:3, 3]))
            out[f"{name}.R"] = rotation_angle(a[:3, :3], b[:3, :3])
        else:
            out[name] = float(np.linalg.norm(a - b))
    return out


@dataclass(eq=False)
class CalibResult:
    representation: str
    formulation: str
    estimates: dict
    errors: dict
    report: SolveReport
    seconds: float

    def to_json(self, timing: bool = True) -> dict:
        rep = self.report.to_json()
        if not timing:
            rep["iteration_seconds"] = [0.0] * len(rep["iteration_seconds"])
            rep["total_seconds"] = 0.0
        return {"representation": self.representation, "formulation": self.formulation,
                "estimates": {n: np.asarray(v).tolist() for n, v in self.estimates.items()},
                "errors": self.errors, "seconds": self.seconds if timing else 0.0,
                "report": rep}


def run_calib(scene: CalibScene, representation: str = "split",
              formulation: str = "recursive", jacobian_mode: str = "forward",
              measurements: list | None = None, options: SolveOptions | None = None,
              repeats: int = 1) -> CalibResult:
    """Estimate trajectory, biases, gravity and extrinsics from synthetic measurements.

    ``measurements`` defaults to data generated with the split interpretation
    of the ground-truth knots.
    """
    if measurements is None:
        measurements = synthesize_measurements(scene, "split")
    splines, extras = initial_guess(scene, representation)
    problem = Problem(splines, measurements, extras, scene.intrinsics)
    report, secs = _timed_solves(problem, formulation, jacobian_mode, repeats, options)
    est = {n: v.copy() for n, v in report.problem.extras.items()}
    errors = parameter_deviations(est, scene.extras())
    errors.update(trajectory_deviations(report.problem, scene))
    return CalibResult(representation, formulation, est, errors, report, secs)


def trajectory_deviations(problem: Problem, scene: CalibScene) -> dict:
    """Largest knot rotation angle and translation distance from the scene truth."""
    if problem.representation == "split":
        rot, pos = problem.knots["rot"], problem.knots["pos"]
    else:
        rot, pos = problem.knots["traj"][:, :3, :3], problem.knots["traj"][:, :3, 3]
    angles = np.linalg.norm(so3_log(np.swapaxes(rot, 1, 2) @ scene.rot_knots, check=False), axis=1)
    return {"knots.R": float(angles.max()),
            "knots.t": float(np.linalg.norm(pos - scene.pos_knots, axis=1).max())}


@dataclass(eq=False)
class CalibExperiment:
    results: list
    agreement: dict
    noiseless_errors: dict

    def to_json(self, timing: bool = True) -> dict:
        return {"results": [r.to_json(timing) for r in self.results],
                "split_vs_se3": self.agreement,
                "max_split_vs_se3": max(self.agreement.values()),
                "noiseless_max_error": {k: max(v.values())
                                        for k, v in self.noiseless_errors.items()}}


def calibration_experiment(config: CalibConfig, check_noiseless: bool = True,
                           options: SolveOptions | None = None) -> CalibExperiment:
    """Noisy split vs SE(3) comparison plus per-representation noiseless recovery."""
    scene = make_scene(config)
    data = synthesize_measurements(scene, "split")
    results = [run_calib(scene, rep, f, measurements=data, options=options)
               for rep in ("split", "se3") for f in ("recursive", "baseline")]
    split = next(r for r in results if r.representation == "split")
    se3 = next(r for r in results if r.representation == "se3")
    agreement = parameter_deviations(se3.estimates, split.estimates)
    noiseless = {}
    if check_noiseless:
        for rep in ("split", "se3"):
            clean = synthesize_measurements(scene, rep, noise=0.0)
            res = run_calib(scene, rep, "recursive", measurements=clean, options=options)
            noiseless[rep] = res.errors
    return CalibExperiment(results, agreement, noiseless)


__all__ = [
    "resolve_seed", "substream", "SimConfig", "SimResult", "sim_problem", "run_sim",
    "table_configs", "CalibConfig", "CalibScene", "make_scene", "synthesize_measurements",
    "initial_guess", "run_calib", "parameter_deviations", "trajectory_deviations", "CalibResult",
    "calibration_experiment", "CalibExperiment",
]
