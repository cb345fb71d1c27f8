"""Rotation and rigid-transform helpers shared by the whole toolkit.

Conventions used everywhere:

- angles are radians and are wrapped to the half-open interval (-pi, pi];
- an orientation given as (roll, pitch, yaw) means ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``,
  so a pure rotation about the world z axis only shifts yaw;
- homogeneous transforms are 4x4 float64 arrays.
"""

from __future__ import annotations

import warnings

import numpy as np

TWO_PI = 2.0 * np.pi


class GimbalLockWarning(UserWarning):
    """Pitch is within the singular band of the roll-pitch-yaw chart."""


def wrap_angle(angle):
    """Wrap an angle (scalar or array) to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(angle, dtype=float), TWO_PI)


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric 3x3 matrix such that ``hat(a) @ b == cross(a, b)``."""
    x, y, z = np.asarray(v, dtype=float).ravel()
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rpy_to_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rotation matrix for the (roll, pitch, yaw) convention above."""
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def matrix_to_rpy(R: np.ndarray) -> tuple[float, float, float]:
    """Extract (roll, pitch, yaw) from a rotation matrix.

    Near pitch = +-pi/2 the chart is singular; a ``GimbalLockWarning`` is
    emitted and the roll/yaw split is chosen with roll = 0.
    """
    R = np.asarray(R, dtype=float)
    sp = -R[2, 0]
    cp = float(np.hypot(R[0, 0], R[1, 0]))
    pitch = float(np.arctan2(sp, cp))
    if cp < 1e-9:
        warnings.warn("pitch within 1e-9 of +-pi/2; roll/yaw split is arbitrary",
                      GimbalLockWarning, stacklevel=2)
        # R[0,1] = sin(roll - yaw) * sign(sp) pattern; pick roll = 0.
        roll = 0.0
        yaw = float(np.arctan2(-R[0, 1], R[1, 1]))
    else:
        roll = float(np.arctan2(R[2, 1], R[2, 2]))
        yaw = float(np.arctan2(R[1, 0], R[0, 0]))
    return float(wrap_angle(roll)), float(wrap_angle(pitch)), float(wrap_angle(yaw))


def rotation_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues' formula: rotation matrix for an angle-axis vector."""
    w = np.asarray(w, dtype=float).ravel()
    theta = float(np.linalg.norm(w))
    if theta < 1e-12:
        return np.eye(3) + hat(w)
    k = hat(w / theta)
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def rotation_log(R: np.ndarray) -> np.ndarray:
    """Angle-axis vector of a rotation matrix (inverse of ``rotation_exp``)."""
    R = np.asarray(R, dtype=float)
    tr = float(np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0))
    theta = float(np.arccos(tr))
    if theta < 1e-10:
        # First-order: R ~ I + hat(w).
        return 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if np.pi - theta < 1e-6:
        # Axis from the dominant diagonal entry of (R + I) / 2.
        A = 0.5 * (R + np.eye(3))
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        i = int(np.argmax(axis))
        if axis[i] > 0.0:
            axis = A[:, i] / axis[i]
            axis = axis / np.linalg.norm(axis)
        else:  # pragma: no cover - R + I == 0 never happens for rotations
            axis = np.array([1.0, 0.0, 0.0])
        # Fix the sign using the skew part (may vanish exactly at pi).
        w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        if np.dot(w, axis) < 0.0:
            axis = -axis
        return theta * axis
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return w * (theta / (2.0 * np.sin(theta)))


def make_transform(R: np.ndarray, p: np.ndarray) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = np.asarray(p, dtype=float).ravel()
    return T


def invert_transform(T: np.ndarray) -> np.ndarray:
    R = T[:3, :3]
    p = T[:3, 3]
    return make_transform(R.T, -R.T @ p)


def transform_point(T: np.ndarray, p: np.ndarray) -> np.ndarray:
    return T[:3, :3] @ np.asarray(p, dtype=float).ravel() + T[:3, 3]


def rotation_angle_between(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Geodesic angle between two rotations."""
    return float(np.linalg.norm(rotation_log(Ra @ Rb.T)))
