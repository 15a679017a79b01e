"""Rigid-body pose from per-receiver position estimates.

Independent per-receiver estimates ignore the rigid mounting of the
receivers; projecting them onto the rigid-body manifold recovers the
vehicle orientation and corrects the positions.  The optimal rotation is
the orthogonal Procrustes solution (SVD of the centered cross-covariance),
with the determinant-sign correction so the result is always a proper
rotation even when noise favors a reflection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .solvers import svd3

ROTATION_TOL = 1e-9
DEGENERATE_RANK_RTOL = 1e-10


@dataclass(frozen=True)
class ReceiverLayout:
    """Body-frame receiver coordinates.

    Needs at least three non-collinear receivers; a unique proper rotation
    additionally requires a full-rank (non-planar) layout of four or more.
    """

    coords: np.ndarray

    def __init__(self, coords):
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        if coords.shape[0] < 3 or coords.shape[1] != 3:
            raise ValueError("layout needs at least 3 receivers with 3-d coordinates")
        centered = coords - coords.mean(axis=0)
        if np.linalg.matrix_rank(centered, tol=1e-9) < 2:
            raise ValueError("layout receivers are collinear")
        object.__setattr__(self, "coords", coords)

    def __len__(self):
        return self.coords.shape[0]

    @property
    def rank(self) -> int:
        return int(np.linalg.matrix_rank(self.coords - self.coords.mean(axis=0),
                                         tol=1e-9))


def default_layout() -> ReceiverLayout:
    """Receiver 0 at the body origin, receivers 1-3 on the unit axes."""
    return ReceiverLayout(np.vstack([np.zeros(3), np.eye(3)]))


def _check_rotation(R):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ValueError("rotation must be 3x3")
    if np.abs(R.T @ R - np.eye(3)).max() > ROTATION_TOL:
        raise ValueError("matrix is not orthogonal within 1e-9")
    if abs(np.linalg.det(R) - 1.0) > ROTATION_TOL:
        raise ValueError("matrix is not a proper rotation within 1e-9")
    return R


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray
    origin: np.ndarray

    def __init__(self, rotation, origin):
        object.__setattr__(self, "rotation", _check_rotation(rotation))
        object.__setattr__(self, "origin", np.asarray(origin, dtype=float).reshape(3))


@dataclass(frozen=True)
class PoseFit:
    pose: Pose
    residual: float
    singular_values: np.ndarray
    degenerate: bool = False


def _axis_angle_rotation(axis, angle):
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def _closest_in_family(axis, base, prior):
    """Rotation R(alpha) = Rot(axis, alpha) @ base closest to ``prior``."""
    M = base @ prior.T
    a = axis
    # trace(Rot(a, alpha) M) = A cos(alpha) + B sin(alpha) + C
    C = float(a @ M @ a)
    A = float(np.trace(M)) - C
    w = np.array([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])
    B = float(a @ w)
    alpha = np.arctan2(B, A)
    return _axis_angle_rotation(a, alpha) @ base


def procrustes(layout: ReceiverLayout, estimates, prior=None) -> PoseFit:
    """Best-fit rigid pose mapping body coordinates onto position estimates.

    Minimizes the squared Frobenius norm of the per-receiver residuals over
    rotations and translations.  When the cross-covariance is rank
    deficient (rank <= 1) the rotation is ambiguous about one axis; the
    free angle is then chosen closest to ``prior`` (identity when absent)
    and the fit is flagged degenerate.
    """
    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    if estimates.shape != layout.coords.shape:
        raise ValueError("estimate count must match layout")
    w_bar = layout.coords.mean(axis=0)
    r_bar = estimates.mean(axis=0)
    w_t = layout.coords - w_bar
    r_t = estimates - r_bar
    W = w_t.T @ r_t                        # sum of w~_j r~_j^T ... (3x3)
    W = np.ascontiguousarray(W)
    U, sigma, V = svd3(W)
    degenerate = sigma[1] <= DEGENERATE_RANK_RTOL * max(sigma[0], 1e-300)
    if not degenerate:
        d = np.sign(np.linalg.det(V @ U.T))
        R = V @ np.diag([1.0, 1.0, d]) @ U.T
    else:
        prior_R = np.eye(3) if prior is None else _check_rotation(prior)
        if sigma[0] <= 1e-15:
            R = prior_R
        else:
            u1, v1 = U[:, 0], V[:, 0]
            # base rotation taking u1 to v1
            cross = np.cross(u1, v1)
            dot = float(u1 @ v1)
            if np.linalg.norm(cross) < 1e-12:
                if dot > 0:
                    base = np.eye(3)
                else:
                    perp = np.eye(3)[np.argmin(np.abs(u1))]
                    axis = np.cross(u1, perp)
                    base = _axis_angle_rotation(axis, np.pi)
            else:
                base = _axis_angle_rotation(cross, np.arctan2(np.linalg.norm(cross), dot))
            R = _closest_in_family(v1, base, prior_R)
        # re-orthonormalize against accumulated roundoff
        Ru, _, Rv = svd3(R)
        R = Ru @ Rv.T
        if np.linalg.det(R) < 0:
            R = Ru @ np.diag([1.0, 1.0, -1.0]) @ Rv.T
        R = _check_rotation(R)
    origin = r_bar - R @ w_bar
    residual = float(np.sum((r_t - w_t @ R.T) ** 2))
    return PoseFit(Pose(R, origin), residual, sigma, degenerate)


def corrected_positions(fit: PoseFit, layout: ReceiverLayout) -> np.ndarray:
    """Receiver positions restored onto the rigid body: r0 + R w_j."""
    return fit.pose.origin + layout.coords @ fit.pose.rotation.T


def geodesic_distance(R1, R2) -> float:
    """Rotation angle between two rotations, in radians.

    This is the geodesic metric on SO(3) up to normalization: the Frobenius
    norm of log(R1^T R2) equals sqrt(2) times the returned angle.  The
    angle arccos((trace(R1^T R2) - 1)/2) is evaluated through the relative
    quaternion, which stays accurate near 0 and pi where arccos degrades.
    """
    R1 = _check_rotation(R1)
    R2 = _check_rotation(R2)
    q = rotation_to_quaternion(R1.T @ R2)
    return float(2.0 * np.arctan2(np.linalg.norm(q[1:]), abs(q[0])))


def rotation_to_quaternion(R) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with nonnegative w; exact inverse of
    :func:`quaternion_to_rotation` to roundoff."""
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(R[i, i] - R[j, j] - R[k, k] + 1.0, 0.0)) * 2.0
        q = np.zeros(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def quaternion_to_rotation(q) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(4)
    q = q / np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
