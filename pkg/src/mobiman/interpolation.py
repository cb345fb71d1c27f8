"""Stability-aware joint interpolation across abrupt configuration changes.

A segment whose endpoint Jacobian Frobenius norms differ by more than a
threshold is densified: the EE pose is advanced uniformly (position lerp,
shortest-arc orientation), while the joint increment is pushed through the
null-space projector of the base sub-Jacobian so the interpolated motion
induces no base height / roll / pitch.  Each inserted waypoint's planar
base pose is recovered from the interpolated EE pose by inverting the
base-to-EE transform at the new joint configuration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import (
    ArmModel,
    BasePose,
    EePose,
    PathState,
    chain_pose,
    invert_transform,
    jacobian_base_fixed_ee,
    jacobian_ee_in_base,
)
from .transforms import matrix_to_rpy, rotation_exp, rotation_log

#: rows of the fixed-EE base Jacobian constrained to zero: v_z, w_x, w_y
BASE_LOCK_ROWS = (2, 3, 4)

_ORIGIN = BasePose(0.0, 0.0, 0.0)


class ProjectionError(RuntimeError):
    """Null-space projection degenerated inside a segment."""


@dataclass(frozen=True)
class InterpolationParams:
    jump_threshold: float = 3.0
    insert_count: int = 7

    def __post_init__(self):
        if self.jump_threshold <= 0.0:
            raise ValueError("jump threshold must be positive")
        if self.insert_count < 1:
            raise ValueError("insert count must be >= 1")


def jacobian_norm(arm: ArmModel, q: np.ndarray) -> float:
    return float(np.linalg.norm(jacobian_ee_in_base(arm, q)))


def config_jump_detected(q_i: np.ndarray, q_next: np.ndarray, arm: ArmModel,
                         threshold: float) -> bool:
    """True when the Jacobian Frobenius norms differ by more than the threshold."""
    return abs(jacobian_norm(arm, q_i) - jacobian_norm(arm, q_next)) > threshold


def base_lock_jacobian(arm: ArmModel, q: np.ndarray) -> np.ndarray:
    """3xk sub-Jacobian of the base z / roll / pitch rates under a pinned EE.

    The row span is invariant to the base yaw, so the projector built from
    it can be evaluated at the origin pose.
    """
    return jacobian_base_fixed_ee(arm, _ORIGIN, q)[list(BASE_LOCK_ROWS)]


def nullspace_projector(arm: ArmModel, q: np.ndarray,
                        rank_tol: float = 1e-8) -> np.ndarray:
    """Symmetric idempotent P with base_lock_jacobian @ P = 0.

    Uses the closed-form projector when the sub-Jacobian has full row rank
    and falls back to a truncated-SVD pseudoinverse near singularities.
    """
    sj = base_lock_jacobian(arm, q)
    if not np.all(np.isfinite(sj)):
        raise ProjectionError("non-finite sub-Jacobian")
    svals = np.linalg.svd(sj, compute_uv=False)
    k = arm.dof
    if svals.min() > rank_tol:
        return np.eye(k) - sj.T @ np.linalg.solve(sj @ sj.T, sj)
    return np.eye(k) - np.linalg.pinv(sj, rcond=rank_tol / max(svals.max(), rank_tol)) @ sj


def nullspace_project(arm: ArmModel, q: np.ndarray, dq: np.ndarray) -> np.ndarray:
    """Project a joint increment into the kernel of the base sub-Jacobian."""
    return nullspace_projector(arm, q) @ np.asarray(dq, dtype=float)


def recover_base_pose(arm: ArmModel, ee: EePose, q: np.ndarray) -> tuple[BasePose, np.ndarray]:
    """Planar base pose consistent with an EE pose and joint configuration.

    Returns the SE(2) projection plus the dropped (z, roll, pitch), which the
    projection step keeps small.
    """
    T_base = ee.matrix() @ invert_transform(chain_pose(arm, q))
    yaw = float(np.arctan2(T_base[1, 0], T_base[0, 0]))
    roll, pitch, _ = matrix_to_rpy(T_base[:3, :3])
    residual = np.array([T_base[2, 3], roll, pitch])
    return BasePose(T_base[0, 3], T_base[1, 3], yaw), residual


def interpolate_segment(x_i: PathState, x_next: PathState, q_i: np.ndarray,
                        q_next: np.ndarray, arm: ArmModel,
                        params: InterpolationParams) -> tuple[list[PathState], list[np.ndarray]]:
    """Insert ``insert_count + 1`` coordinated waypoints across one segment.

    Insertion ``a`` carries the EE pose at fraction ``a / n`` of the segment
    (so the first and last inserted poses coincide with the endpoints) and a
    joint configuration advanced by successive null-space-projected
    increments from ``q_i``.
    """
    n = params.insert_count
    q_i = np.asarray(q_i, dtype=float)
    dq_step = (np.asarray(q_next, dtype=float) - q_i) / n
    p0, p1 = x_i.ee.position, x_next.ee.position
    R0 = x_i.ee.rotation()
    w = rotation_log(x_next.ee.rotation() @ R0.T)

    states: list[PathState] = []
    configs: list[np.ndarray] = []
    q = q_i.copy()
    for a in range(n + 1):
        if a > 0:
            dq = nullspace_project(arm, q, dq_step)
            if not np.all(np.isfinite(dq)):
                raise ProjectionError(f"projection degenerated at insertion {a}")
            q = arm.clip_to_limits(q + dq)
        f = a / n
        ee = EePose((1.0 - f) * p0 + f * p1,
                    np.array(matrix_to_rpy(rotation_exp(f * w) @ R0)))
        base, _ = recover_base_pose(arm, ee, q)
        states.append(PathState(ee, base))
        configs.append(q.copy())
    return states, configs


def run_interpolation(states, joint_path, arm: ArmModel,
                      params: InterpolationParams):
    """Scan consecutive pairs of the input path and densify detected jumps.

    Original waypoints are preserved in order; each detected segment grows
    by ``insert_count + 1`` waypoints between its endpoints.
    """
    if len(states) != len(joint_path):
        raise ValueError("coordinated path and joint path must have equal length")
    out_states: list[PathState] = []
    out_joints: list[np.ndarray] = []
    for i in range(len(states) - 1):
        out_states.append(states[i])
        out_joints.append(np.asarray(joint_path[i], dtype=float))
        if config_jump_detected(joint_path[i], joint_path[i + 1], arm, params.jump_threshold):
            ins_states, ins_joints = interpolate_segment(
                states[i], states[i + 1], joint_path[i], joint_path[i + 1], arm, params)
            out_states.extend(ins_states)
            out_joints.extend(ins_joints)
    out_states.append(states[-1])
    out_joints.append(np.asarray(joint_path[-1], dtype=float))
    return out_states, out_joints
