"""Desk-scale simulation of the localization pipeline.

A vehicle follows a helical path inside the convex hull of eight beacons;
its four receivers ride the Frenet-Serret frame of the path.  Per timestep,
Gaussian-noise range measurements feed the calibrated estimators, and the
per-receiver estimates are projected onto the rigid body for the pose.

Determinism: every random draw comes from a named sub-stream keyed by
(seed, purpose, timestep, beacon, receiver), so a run is reproducible
bit-for-bit regardless of evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .calibration import (CalibrationDataset, CalibrationPolynomial,
                          CalibrationSample, fit_phi, identity_polynomial,
                          recalibrate)
from .orientation import (ReceiverLayout, corrected_positions, default_layout,
                          geodesic_distance, procrustes, rotation_to_quaternion)
from .position import (BallIntersection, Beacon, Infeasible, RangeMeasurement,
                       chebyshev_center, feasible_set, mve_center)
from .solvers import LinearProgram, solve_lp

MEASUREMENT_FLOOR = 1e-6

ESTIMATORS = ("chebyshev", "mve")
POLICIES = ("frozen", "online")


def substream(seed: int, *path) -> np.random.Generator:
    """Independent generator for one point of the simulation.

    Sub-streams are derived from (seed, *path) through SeedSequence, so
    per-(timestep, beacon, receiver) draws are stable under any execution
    order.  String path elements are folded to stable integers.
    """
    key = [int(seed)]
    for p in path:
        if isinstance(p, str):
            key.append(int.from_bytes(p.encode(), "big") % (2 ** 63))
        else:
            key.append(int(p))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


def helix_center(t: float) -> np.ndarray:
    return np.array([2.5 * (1.0 + math.cos(t)),
                     2.5 * math.sin(t),
                     5.0 * math.sin(t / 2.0)])


def trajectory_state(t: float):
    """Path point and Frenet-Serret frame (columns tangent/normal/binormal).

    Derivatives of the helix are analytic; the frame is orthonormal with
    positive determinant by construction.  Requires nonzero curvature,
    which holds along the default time grid.
    """
    c1 = np.array([-2.5 * math.sin(t), 2.5 * math.cos(t), 2.5 * math.cos(t / 2.0)])
    c2 = np.array([-2.5 * math.cos(t), -2.5 * math.sin(t), -1.25 * math.sin(t / 2.0)])
    speed = np.linalg.norm(c1)
    tangent = c1 / speed
    # T' = (c2 |c1|^2 - c1 (c1.c2)) / |c1|^3
    tprime = (c2 * speed ** 2 - c1 * float(c1 @ c2)) / speed ** 3
    tp_norm = np.linalg.norm(tprime)
    if tp_norm < 1e-12:
        raise ValueError(f"curvature vanishes at t={t}; frame undefined")
    normal = tprime / tp_norm
    binormal = np.cross(tangent, normal)
    frame = np.column_stack([tangent, normal, binormal])
    return helix_center(t), frame


def receiver_positions(center, frame, layout: ReceiverLayout) -> np.ndarray:
    return center + layout.coords @ frame.T


def simulate_measurements(center, frame, layout: ReceiverLayout, beacons,
                          noise_std: float, stream) -> list:
    """Noisy ranges for every (beacon, receiver) pair at one pose.

    ``stream`` is either a Generator (draws consumed in (beacon, receiver)
    order) or a callable (beacon_id, receiver_id) -> Generator providing
    one sub-stream per pair.
    """
    positions = receiver_positions(center, frame, layout)
    out = []
    for beacon in beacons:
        for j in range(len(layout)):
            true_d = float(np.linalg.norm(positions[j] - beacon.position))
            gen = stream(beacon.ident, j) if callable(stream) else stream
            noisy = true_d + float(gen.normal(0.0, noise_std)) if noise_std > 0 else true_d
            out.append(RangeMeasurement(beacon.ident, j, max(MEASUREMENT_FLOOR, noisy)))
    return out


def generate_calibration_dataset(true_range=(4.0, 18.0), n_true: int = 25,
                                 per_true: int = 100, eps: float = 0.25,
                                 rng=None) -> CalibrationDataset:
    """Interval calibration data: uniform true values, uniform-noise draws.

    Per true distance d, ``per_true`` measurements are drawn uniformly from
    [d - eps, d + eps] and collapsed to their empirical min/max bounds.
    """
    if rng is None:
        rng = np.random.default_rng()
    samples = []
    for d in rng.uniform(true_range[0], true_range[1], n_true):
        if eps > 0:
            meas = rng.uniform(d - eps, d + eps, per_true)
            lo, hi = float(meas.min()), float(meas.max())
        else:
            lo = hi = float(d)
        samples.append(CalibrationSample(float(d), lo, hi))
    return CalibrationDataset(samples)


def box_beacons(x=(-3.0, 8.0), y=(-6.0, 6.0), z=(-7.0, 7.0)) -> tuple:
    """Eight beacons on the corners of an axis-aligned box."""
    out = []
    ident = 0
    for xs in x:
        for ys in y:
            for zs in z:
                out.append(Beacon(ident, (xs, ys, zs)))
                ident += 1
    return tuple(out)


@dataclass(frozen=True)
class PhiConfig:
    """How the pipeline obtains its calibration function."""

    mode: str = "fit"                   # "fit" | "identity"
    degree: int = 4
    true_range: tuple = (4.0, 18.0)
    n_true: int = 25
    per_true: int = 100
    eps: float = 0.25

    def __post_init__(self):
        if self.mode not in ("fit", "identity"):
            raise ValueError("phi mode must be 'fit' or 'identity'")
        if self.mode == "fit" and self.degree < 1:
            raise ValueError("phi degree must be at least 1")


@dataclass(frozen=True)
class Scenario:
    beacons: tuple = field(default_factory=box_beacons)
    layout: ReceiverLayout = field(default_factory=default_layout)
    timesteps: int = 100
    t_span: tuple = (0.0, 4.0 * math.pi)
    noise_std: float = 0.5
    seed: int = 7
    phi: PhiConfig = field(default_factory=PhiConfig)
    estimator: str = "mve"
    policy: str = "frozen"
    tol: float = 1e-7

    def __post_init__(self):
        if self.timesteps < 1:
            raise ValueError("need at least one timestep")
        if self.noise_std < 0:
            raise ValueError("noise std must be nonnegative")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")
        object.__setattr__(self, "beacons", tuple(self.beacons))
        self._check_hull()

    def time_grid(self) -> np.ndarray:
        return np.linspace(self.t_span[0], self.t_span[1], self.timesteps)

    def _check_hull(self):
        """Every receiver position must stay inside the beacon hull."""
        positions = np.array([b.position for b in self.beacons])
        for t in self.time_grid():
            center, frame = trajectory_state(t)
            for p in receiver_positions(center, frame, self.layout):
                if not point_in_hull(p, positions):
                    raise ValueError(
                        f"trajectory leaves the beacon convex hull at t={t:.4f}")


def point_in_hull(point, vertices, tol: float = 1e-9) -> bool:
    """LP membership test: is the point a convex combination of vertices?"""
    vertices = np.asarray(vertices, dtype=float)
    point = np.asarray(point, dtype=float)
    n = vertices.shape[0]
    lp = LinearProgram(np.zeros(n))
    for row, rhs in zip(vertices.T, point):       # sum w_i v_i = p, per coord
        lp.add_constraint(row, rhs + tol)
        lp.add_constraint(-row, -rhs + tol)
    lp.add_constraint(np.ones(n), 1.0 + tol)
    lp.add_constraint(-np.ones(n), -1.0 + tol)
    for i in range(n):
        e = np.zeros(n)
        e[i] = -1.0
        lp.add_constraint(e, 0.0)
    status, _ = solve_lp(lp)
    return status.kind == "optimal"


@dataclass(frozen=True)
class TimestepRecord:
    index: int
    t: float
    status: str                         # "ok" | "infeasible"
    true_center: tuple
    est_center: tuple                   # NaN when infeasible
    percent_error: float
    max_range: float                    # denominator of the percent error
    cuts: int
    true_quat: tuple
    est_quat: tuple
    orientation_error_deg: float


@dataclass(frozen=True)
class RunSummary:
    mean_percent_error: float
    max_percent_error: float
    mean_orientation_error_deg: float
    mean_cuts: float
    infeasible_count: int
    timesteps: int
    recalibrations: int


@dataclass(frozen=True)
class RunReport:
    records: tuple
    summary: RunSummary


@dataclass
class PipelineTrace:
    """Optional raw pipeline artifacts for file export."""

    measurements: list = field(default_factory=list)   # (k, t, receiver, beacon, D)
    estimates: list = field(default_factory=list)      # estimate CSV rows
    poses: list = field(default_factory=list)          # pose CSV rows
    phi_initial: CalibrationPolynomial | None = None
    phi_final: CalibrationPolynomial | None = None


def _summarize(records, recalibrations) -> RunSummary:
    ok = [r for r in records if r.status == "ok"]
    pct = [r.percent_error for r in ok]
    orient = [r.orientation_error_deg for r in ok]
    cuts = [r.cuts for r in ok]
    return RunSummary(
        mean_percent_error=float(np.mean(pct)) if pct else float("nan"),
        max_percent_error=float(np.max(pct)) if pct else float("nan"),
        mean_orientation_error_deg=float(np.mean(orient)) if orient else float("nan"),
        mean_cuts=float(np.mean(cuts)) if cuts else float("nan"),
        infeasible_count=len(records) - len(ok),
        timesteps=len(records),
        recalibrations=recalibrations,
    )


def initial_phi(scenario: Scenario):
    """Calibration function and retained dataset per the scenario config."""
    if scenario.phi.mode == "identity":
        return identity_polynomial(), None
    rng = substream(scenario.seed, "calibration")
    dataset = generate_calibration_dataset(scenario.phi.true_range,
                                           scenario.phi.n_true,
                                           scenario.phi.per_true,
                                           scenario.phi.eps, rng)
    return fit_phi(dataset, scenario.phi.degree, scenario.tol), dataset


def run_pipeline(scenario: Scenario, trace: PipelineTrace | None = None) -> RunReport:
    """Execute the full simulation: measure, estimate, correct, record.

    Under the online policy the calibration refits whenever a timestep is
    infeasible or any measurement leaves the fitted domain; the fresh
    samples pair the current measurements with the best available rigid-body
    corrected positions (current ones if this step succeeded, otherwise the
    most recent successful step's).
    """
    phi, history = initial_phi(scenario)
    if trace is not None:
        trace.phi_initial = phi
    estimate = chebyshev_center if scenario.estimator == "chebyshev" else mve_center
    beacon_map = {b.ident: b for b in scenario.beacons}
    layout = scenario.layout
    records = []
    recal_count = 0
    last_corrected = None
    last_rotation = None

    for k, t in enumerate(scenario.time_grid()):
        center, frame = trajectory_state(t)
        meas = simulate_measurements(
            center, frame, layout, scenario.beacons, scenario.noise_std,
            lambda bid, rid, _k=k: substream(scenario.seed, "meas", _k, bid, rid))
        if trace is not None:
            trace.measurements.extend(
                (k, t, m.receiver_id, m.beacon_id, m.distance) for m in meas)
        max_range = max(m.distance for m in meas)
        by_receiver = {j: [m for m in meas if m.receiver_id == j]
                       for j in range(len(layout))}

        estimates = []
        out_of_domain = False
        failure = None
        for j in range(len(layout)):
            ball_set = feasible_set(by_receiver[j], phi, beacon_map)
            out_of_domain = out_of_domain or ball_set.out_of_domain
            try:
                est = estimate(ball_set, tol=scenario.tol)
            except Infeasible as exc:
                failure = (j, exc)
                if trace is not None:
                    trace.estimates.append(
                        (k, t, j, scenario.estimator, float("nan"), float("nan"),
                         float("nan"), float("nan"), 0, "infeasible"))
                break
            estimates.append(est)
            if trace is not None:
                metric = est.radius if scenario.estimator == "chebyshev" else est.log_volume
                cuts = est.cuts if scenario.estimator == "chebyshev" else 0
                trace.estimates.append(
                    (k, t, j, scenario.estimator, est.center[0], est.center[1],
                     est.center[2], float(metric), cuts, est.status))

        corrected = None
        if failure is None:
            points = np.array([e.center for e in estimates])
            fit = procrustes(layout, points, prior=last_rotation)
            corrected = corrected_positions(fit, layout)
            err = float(np.linalg.norm(points[0] - center))
            pct = 100.0 * err / max_range
            orient_deg = math.degrees(geodesic_distance(frame, fit.pose.rotation))
            cuts = int(np.mean([e.cuts for e in estimates])) \
                if scenario.estimator == "chebyshev" else 0
            records.append(TimestepRecord(
                k, float(t), "ok", tuple(center), tuple(points[0]), pct,
                float(max_range), cuts, tuple(rotation_to_quaternion(frame)),
                tuple(rotation_to_quaternion(fit.pose.rotation)), orient_deg))
            last_corrected = corrected
            last_rotation = fit.pose.rotation
            if trace is not None:
                q = rotation_to_quaternion(fit.pose.rotation)
                trace.poses.append((k, t, q[0], q[1], q[2], q[3],
                                    fit.pose.origin[0], fit.pose.origin[1],
                                    fit.pose.origin[2], fit.residual))
        else:
            nan3 = (float("nan"),) * 3
            nan4 = (float("nan"),) * 4
            records.append(TimestepRecord(
                k, float(t), "infeasible", tuple(center), nan3, float("nan"),
                float(max_range), 0, tuple(rotation_to_quaternion(frame)),
                nan4, float("nan")))

        if scenario.policy == "online" and (failure is not None or out_of_domain):
            reference = corrected if corrected is not None else last_corrected
            if reference is not None and scenario.phi.mode == "fit":
                fresh = _fresh_dataset(reference, meas, beacon_map)
                if len(fresh):
                    phi = recalibrate(phi, fresh, scenario.phi.degree,
                                      history=history, tol=scenario.tol)
                    history = history.merged(fresh) if history is not None else fresh
                    recal_count += 1

    if trace is not None:
        trace.phi_final = phi
    return RunReport(tuple(records), _summarize(records, recal_count))


def _fresh_dataset(reference_positions, measurements, beacon_map) -> CalibrationDataset:
    """Recalibration samples: reference-position distances vs raw ranges."""
    samples = []
    for m in measurements:
        d_ref = float(np.linalg.norm(
            reference_positions[m.receiver_id] - beacon_map[m.beacon_id].position))
        if d_ref > 0 and m.distance > 0:
            samples.append(CalibrationSample(d_ref, m.distance, m.distance))
    return CalibrationDataset(samples)


def paired_policy_runs(scenario: Scenario):
    """Same seed, frozen vs online recalibration; for policy comparisons."""
    frozen = run_pipeline(replace(scenario, policy="frozen"))
    online = run_pipeline(replace(scenario, policy="online"))
    return frozen, online
