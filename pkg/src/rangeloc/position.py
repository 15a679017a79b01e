"""Position estimation from calibrated range balls.

A receiver's feasible set is the intersection of balls centered at the
beacons with radii phi(D).  Two centers serve as position estimates: the
Chebyshev center (largest inscribed ball, computed by a cutting-plane LP)
and the center of the maximum-volume inscribed ellipsoid (computed from
the per-ball 7x7 LMI reduction of the ellipsoid-in-ball constraint).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calibration import CalibrationPolynomial, eval_phi
from .solvers import (AffineMatrixMap, LinearProgram, MaxDetProblem,
                      DEFAULT_SDP_GAP, solve_lp, solve_maxdet, sym_eig)

CUT_VIOLATION_TOL = 1e-7
MAX_CUTS = 500
INFEASIBLE_RADIUS_TOL = -1e-7

_AXES = np.vstack([np.eye(3), -np.eye(3)])
_SVEC3 = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


class Infeasible(Exception):
    """The ball intersection is empty (or has empty interior, for the MVE)."""


class UnknownBeacon(KeyError):
    """A measurement references a beacon id not in the registry."""


@dataclass(frozen=True)
class Beacon:
    ident: int
    position: np.ndarray

    def __init__(self, ident, position):
        position = np.asarray(position, dtype=float).reshape(3)
        if not np.all(np.isfinite(position)):
            raise ValueError("beacon position must be finite")
        object.__setattr__(self, "ident", int(ident))
        object.__setattr__(self, "position", position)


@dataclass(frozen=True)
class RangeMeasurement:
    beacon_id: int
    receiver_id: int
    distance: float

    def __post_init__(self):
        if not self.distance > 0:
            raise ValueError("measured distance must be positive")


@dataclass(frozen=True)
class BallIntersection:
    """Balls (center, radius) whose intersection is the feasible set.

    A well-posed set has positive radii; nonpositive radii (possible when
    phi is evaluated far outside its fitted domain) mark the set as
    degenerate and the estimators report it as infeasible.
    """

    centers: np.ndarray
    radii: np.ndarray
    out_of_domain: bool = False

    def __init__(self, centers, radii, out_of_domain=False):
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        radii = np.atleast_1d(np.asarray(radii, dtype=float))
        if centers.shape != (radii.size, 3) or radii.size == 0:
            raise ValueError("need one 3-d center per radius and at least one ball")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "out_of_domain", bool(out_of_domain))

    def __len__(self):
        return self.radii.size

    @property
    def degenerate(self) -> bool:
        return bool(np.any(self.radii <= 0.0))

    def slack(self, point) -> np.ndarray:
        """rho_i - |x - B_i| per ball; nonnegative inside the intersection."""
        point = np.asarray(point, dtype=float)
        return self.radii - np.linalg.norm(self.centers - point, axis=1)


def feasible_set(measurements, phi: CalibrationPolynomial, beacons) -> BallIntersection:
    """Build the feasible set of one receiver from its range measurements.

    ``beacons`` is a mapping id -> Beacon or an iterable of Beacons.  Any
    out-of-domain phi evaluation is flagged on the result so the pipeline's
    recalibration policy can react.
    """
    measurements = list(measurements)
    if not measurements:
        raise ValueError("at least one measurement required")
    if not isinstance(beacons, dict):
        beacons = {b.ident: b for b in beacons}
    centers = []
    radii = []
    out = False
    for meas in measurements:
        if meas.beacon_id not in beacons:
            raise UnknownBeacon(meas.beacon_id)
        value, ood = eval_phi(phi, meas.distance)
        centers.append(beacons[meas.beacon_id].position)
        radii.append(value)
        out = out or bool(ood)
    return BallIntersection(np.array(centers), np.array(radii), out)


@dataclass(frozen=True)
class CenterEstimate:
    center: np.ndarray
    radius: float
    cuts: int
    status: str = "optimal"


@dataclass(frozen=True)
class EllipsoidEstimate:
    center: np.ndarray
    shape: np.ndarray
    log_volume: float
    multipliers: np.ndarray = field(default=None)
    status: str = "optimal"


def separation_cut(ball_set: BallIntersection, center, radius: float,
                   tol: float = CUT_VIOLATION_TOL):
    """Most-violated supporting halfspace for a candidate inscribed ball.

    Returns ``(unit vector v, ball index)`` for the ball maximizing
    |r_c - B_i| + l - rho_i when that violation exceeds ``tol``, else None.
    The maximization over directions is exact (Cauchy-Schwarz).
    """
    center = np.asarray(center, dtype=float)
    diffs = center - ball_set.centers
    dists = np.linalg.norm(diffs, axis=1)
    violations = dists + max(radius, 0.0) - ball_set.radii
    idx = int(np.argmax(violations))
    if violations[idx] <= tol:
        return None
    if dists[idx] < 1e-15:
        return np.array([1.0, 0.0, 0.0]), idx
    return diffs[idx] / dists[idx], idx


def _initial_directions(ball_set: BallIntersection) -> np.ndarray:
    dirs = [_AXES]
    centroid = ball_set.centers.mean(axis=0)
    offsets = ball_set.centers - centroid
    norms = np.linalg.norm(offsets, axis=1)
    keep = norms > 1e-12
    if keep.any():
        dirs.append(offsets[keep] / norms[keep, None])
    return np.vstack(dirs)


def chebyshev_center(ball_set: BallIntersection, tol: float = CUT_VIOLATION_TOL,
                     max_cuts: int = MAX_CUTS) -> CenterEstimate:
    """Cutting-plane solution of the largest-inscribed-ball problem.

    Starts from a finite relaxation (six axis directions plus the
    centroid-to-beacon directions, each paired with its tightest ball) and
    adds the most-violated tangent halfspace until none is violated.
    Raises :class:`Infeasible` when the relaxed optimum certifies an empty
    intersection (l < -1e-7; the relaxation upper-bounds the true radius).
    """
    viol_tol = min(tol, CUT_VIOLATION_TOL)
    lp = LinearProgram([0.0, 0.0, 0.0, 1.0])
    # constraint for direction v against ball i: v.r + l <= v.B_i + rho_i;
    # only the tightest ball per direction matters, hence the min
    for v in _initial_directions(ball_set):
        rhs = ball_set.centers @ v + ball_set.radii
        lp.add_constraint(np.append(v, 1.0), rhs.min())
    cuts = 0
    while True:
        status, x = solve_lp(lp)
        if status.kind != "optimal":
            return CenterEstimate(x[:3], x[3], cuts, status.kind)
        center, radius = x[:3], float(x[3])
        if radius < INFEASIBLE_RADIUS_TOL:
            raise Infeasible(
                f"empty ball intersection (relaxed inscribed radius {radius:.3e})")
        cut = separation_cut(ball_set, center, radius, viol_tol)
        if cut is None:
            return CenterEstimate(center, radius, cuts)
        if cuts >= max_cuts:
            return CenterEstimate(center, radius, cuts, "iteration_limit")
        v, idx = cut
        lp.add_constraint(np.append(v, 1.0),
                          float(v @ ball_set.centers[idx] + ball_set.radii[idx]))
        cuts += 1


def _deep_interior_point(ball_set: BallIntersection):
    """Projected-gradient search for a point well inside the intersection.

    Минimizes the squared hinge violation against margin-shrunk radii; the
    margin schedule avoids the boundary points a plain feasibility search
    can return.  Returns (point, margin) or None.
    """
    centers, radii = ball_set.centers, ball_set.radii
    min_r = float(radii.min())
    point = centers.mean(axis=0)
    margin = 0.25 * min_r
    while margin > 1e-9 * min_r:
        target = radii - margin
        if np.all(target > 0):
            for _ in range(200):
                diffs = point - centers
                dists = np.linalg.norm(diffs, axis=1)
                viol = np.maximum(0.0, dists - target)
                if viol.max() <= 0.0:
                    return point, margin
                grads = 2.0 * viol[:, None] * diffs / np.maximum(dists, 1e-15)[:, None]
                grad = grads.sum(axis=0)
                gnorm = np.linalg.norm(grad)
                if gnorm < 1e-14:
                    break
                value = float((viol ** 2).sum())
                step = max(value / gnorm ** 2, 1e-3 / gnorm) * 2.0
                for _ in range(40):
                    trial = point - step * grad
                    tval = (np.maximum(0.0, np.linalg.norm(trial - centers, axis=1)
                                       - target) ** 2).sum()
                    if tval < value:
                        point = trial
                        break
                    step *= 0.5
                else:
                    break
        margin *= 0.5
    return None


def _prop1_block(center_b: np.ndarray, rho: float, nvars: int,
                 lam_index: int) -> AffineMatrixMap:
    """7x7 LMI equivalent to 'ellipsoid P u + r_c stays in the ball'.

    Variable layout: r_c in [0:3], svec(P) in [3:9], multipliers after.
    """
    const = np.zeros((7, 7))
    const[0, 0] = rho
    const[0, 1:4] = -center_b
    const[1:4, 0] = -center_b
    const[1:4, 1:4] = rho * np.eye(3)
    coeff = np.zeros((nvars, 7, 7))
    for k in range(3):
        coeff[k][0, 1 + k] = 1.0
        coeff[k][1 + k, 0] = 1.0
    for k, (i, j) in enumerate(_SVEC3):
        E = np.zeros((3, 3))
        E[i, j] = E[j, i] = 1.0
        coeff[3 + k][1:4, 4:7] = E
        coeff[3 + k][4:7, 1:4] = E
    coeff[lam_index][0, 0] = -1.0
    coeff[lam_index][4:7, 4:7] = np.eye(3)
    return AffineMatrixMap(const, coeff)


def _svec_to_matrix(values) -> np.ndarray:
    P = np.zeros((3, 3))
    for v, (i, j) in zip(values, _SVEC3):
        P[i, j] = P[j, i] = v
    return P


def mve_center(ball_set: BallIntersection, tol: float = DEFAULT_SDP_GAP) -> EllipsoidEstimate:
    """Maximum-volume inscribed ellipsoid of the ball intersection.

    Raises :class:`Infeasible` when the intersection is empty or has empty
    interior (degenerate sets have no inscribed ellipsoid of positive
    volume, so the problem has no strictly feasible point).
    """
    if ball_set.degenerate:
        raise Infeasible("ball with nonpositive radius")
    n_balls = len(ball_set)
    nvars = 9 + n_balls

    start = _deep_interior_point(ball_set)
    if start is None:
        # certify emptiness/degeneracy through the LP relaxation
        probe = chebyshev_center(ball_set, tol=1e-6)
        if probe.radius <= 1e-7:
            raise Infeasible("ball intersection has empty interior")
        start = probe.center, probe.radius

    point, depth = start
    slacks = ball_set.slack(point)
    depth = min(depth, float(slacks.min()))

    det_coeff = np.zeros((nvars, 3, 3))
    for k, (i, j) in enumerate(_SVEC3):
        det_coeff[3 + k][i, j] = det_coeff[3 + k][j, i] = 1.0
    det_block = AffineMatrixMap(np.zeros((3, 3)), det_coeff)
    blocks = [_prop1_block(ball_set.centers[i], float(ball_set.radii[i]), nvars, 9 + i)
              for i in range(n_balls)]
    problem = MaxDetProblem(nvars=nvars, det_block=det_block, lmi_blocks=blocks)

    x0 = np.zeros(nvars)
    x0[:3] = point
    x0[9:] = slacks / 2.0
    eps = min(1e-4 * float(ball_set.radii.min()), depth / 2.0)
    for _ in range(6):
        x0[3] = x0[6] = x0[8] = eps
        if all(np.linalg.eigvalsh(b(x0)).min() > 0 for b in blocks):
            break
        eps *= 0.1
    else:
        raise Infeasible("no strictly feasible starting ellipsoid found")

    status, x = solve_maxdet(problem, tol=tol, x0=x0)
    if status.kind == "infeasible":
        raise Infeasible("max-det solver reported infeasibility")
    P = _svec_to_matrix(x[3:9])
    logdet = float(np.linalg.slogdet(P)[1])
    return EllipsoidEstimate(x[:3], P, logdet, x[9:], status.kind)


def sup_norm_over_ball(P, v) -> float:
    """sup over |u| <= 1 of |P u + v| for symmetric P.

    The square is a convex quadratic maximized on the unit sphere; the
    stationarity condition (theta I - P^2) u = P v is solved through the
    eigendecomposition of P and a secular-equation bisection, with the
    usual hard case when P v has no component along the top eigenspace.
    """
    P = np.asarray(P, dtype=float)
    v = np.asarray(v, dtype=float).reshape(3)
    w, V = sym_eig(P)
    a = w ** 2                      # eigenvalues of P^2
    b = V.T @ (P @ v)               # P v in the eigenbasis
    vv = float(v @ v)
    a_max = float(a.max())

    def usq(theta):
        return float(np.sum((b / (theta - a)) ** 2))

    top = np.isclose(a, a_max, rtol=1e-12, atol=1e-300)
    b_top = float(np.sqrt(np.sum(b[top] ** 2)))
    if b_top < 1e-14 * max(1.0, np.abs(b).max(), 1.0):
        # hard case: top eigencomponent free
        rest = ~top
        n0_sq = float(np.sum((b[rest] / (a_max - a[rest])) ** 2)) if rest.any() else 0.0
        if n0_sq < 1.0:
            u = np.zeros(3)
            u[rest] = b[rest] / (a_max - a[rest])
            u[np.argmax(top)] = np.sqrt(1.0 - n0_sq)
            u = V @ u
            return float(np.linalg.norm(P @ u + v))
    lo = a_max + 1e-300
    hi = a_max + max(1.0, float(np.linalg.norm(b)))
    while usq(hi) > 1.0:
        hi = a_max + 2.0 * (hi - a_max)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if usq(mid) > 1.0:
            lo = mid
        else:
            hi = mid
    theta = 0.5 * (lo + hi)
    u = V @ (b / (theta - a))
    norm_u = np.linalg.norm(u)
    if norm_u > 0:
        u = u / norm_u
    return float(np.linalg.norm(P @ u + v))
