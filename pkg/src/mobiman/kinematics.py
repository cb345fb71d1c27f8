"""Pose types, the parametric arm model, FK/Jacobians, IK branch enumeration
and manipulability measures.

The arm is a 6-DOF anthropomorphic chain with a spherical wrist, described in
its root frame (z up):

- joint 1 pans the whole arm about z at the shoulder;
- joints 2 and 3 tilt the upper arm (length ``l2``) and forearm (``l3``) in
  the vertical plane selected by joint 1, with angles measured from vertical
  so that the horizontal reach is ``l2*sin(q2) + l3*sin(q2+q3)``;
- joints 4-6 form a z-y-z spherical wrist at the forearm tip, followed by a
  tool offset ``d6`` along the final z axis.

The root frame sits on the mobile base at planar offset ``(mount_x, mount_y)``,
height ``h_b`` and yaw ``mount_yaw``.  All public operations are pure and all
pose types are immutable, so concurrent read-only use is safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .transforms import (
    hat,
    invert_transform,
    make_transform,
    matrix_to_rpy,
    rot_y,
    rot_z,
    rotation_log,
    rpy_to_matrix,
    transform_point,
    wrap_angle,
)


class JointLimitError(ValueError):
    """A joint configuration violates the arm's limits."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class BasePose:
    """Planar chassis pose (x, y, yaw); yaw is wrapped on construction."""

    x: float
    y: float
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "yaw", float(wrap_angle(self.yaw)))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def matrix(self) -> np.ndarray:
        """Lift to SE(3): z = 0, roll = pitch = 0."""
        return make_transform(rot_z(self.yaw), [self.x, self.y, 0.0])

    def compose(self, other: "BasePose") -> "BasePose":
        """Planar composition self * other."""
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        return BasePose(self.x + c * other.x - s * other.y,
                        self.y + s * other.x + c * other.y,
                        self.yaw + other.yaw)


@dataclass(frozen=True, eq=False)
class EePose:
    """End-effector pose: position plus (roll, pitch, yaw), angles wrapped."""

    position: np.ndarray
    rpy: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).ravel()
        ang = wrap_angle(np.asarray(self.rpy, dtype=float).ravel())
        if pos.shape != (3,) or ang.shape != (3,):
            raise ValueError("EePose needs a 3-vector position and 3-vector rpy")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(ang))):
            raise ValueError("EePose fields must be finite")
        object.__setattr__(self, "position", _readonly(pos))
        object.__setattr__(self, "rpy", _readonly(ang))

    @classmethod
    def from_parts(cls, x, y, z, roll, pitch, yaw) -> "EePose":
        return cls(np.array([x, y, z]), np.array([roll, pitch, yaw]))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "EePose":
        return cls(T[:3, 3], np.array(matrix_to_rpy(T[:3, :3])))

    @classmethod
    def canonical(cls, position, rpy) -> "EePose":
        """Pose with the rpy triple re-extracted from its rotation matrix.

        Roll-pitch-yaw charts a rotation twice; ingested poses are funneled
        through the |pitch| <= pi/2 branch so they mix with FK outputs
        without spurious coordinate jumps.
        """
        return cls.from_matrix(make_transform(rpy_to_matrix(*np.asarray(rpy, dtype=float)),
                                              position))

    @property
    def roll(self) -> float:
        return float(self.rpy[0])

    @property
    def pitch(self) -> float:
        return float(self.rpy[1])

    @property
    def yaw(self) -> float:
        return float(self.rpy[2])

    @property
    def xy(self) -> np.ndarray:
        return self.position[:2]

    def rotation(self) -> np.ndarray:
        return rpy_to_matrix(*self.rpy)

    def matrix(self) -> np.ndarray:
        return make_transform(self.rotation(), self.position)

    def allclose(self, other: "EePose", tol: float = 1e-9) -> bool:
        return (np.allclose(self.position, other.position, atol=tol)
                and np.allclose(wrap_angle(self.rpy - other.rpy), 0.0, atol=tol))


@dataclass(frozen=True, eq=False)
class PathState:
    """One coordinated waypoint: EE pose on SE(3) plus base pose on SE(2)."""

    ee: EePose
    base: BasePose

    def as_vector(self) -> np.ndarray:
        """Pack as [ee xyz, ee rpy, base x, base y, base yaw]."""
        return np.concatenate([self.ee.position, self.ee.rpy,
                               [self.base.x, self.base.y, self.base.yaw]])

    @classmethod
    def from_vector(cls, v: np.ndarray) -> "PathState":
        v = np.asarray(v, dtype=float).ravel()
        return cls(EePose(v[0:3], v[3:6]), BasePose(v[6], v[7], v[8]))


#: indices of angular coordinates inside the 9-vector packing of PathState
STATE_ANGLE_INDICES = (3, 4, 5, 8)
STATE_DIM = 9


def apply_planar_motion(g: BasePose, state: PathState) -> PathState:
    """Apply a planar rigid motion g to a whole coordinated waypoint."""
    pos = transform_point(g.matrix(), state.ee.position)
    rpy = np.array([state.ee.roll, state.ee.pitch, state.ee.yaw + g.yaw])
    return PathState(EePose(pos, rpy), g.compose(state.base))


@dataclass(frozen=True)
class ArmModel:
    """Geometry and limits of the arm: lengths, mount, wrist offset, limits."""

    l2: float
    l3: float
    h_b: float
    d6: float = 0.0
    mount_x: float = 0.0
    mount_y: float = 0.0
    mount_yaw: float = 0.0
    q_min: np.ndarray = field(default_factory=lambda: np.full(6, -np.pi))
    q_max: np.ndarray = field(default_factory=lambda: np.full(6, np.pi))
    qdot_max: np.ndarray = field(default_factory=lambda: np.full(6, 2.0))

    def __post_init__(self):
        if self.l2 <= 0.0 or self.l3 <= 0.0:
            raise ValueError("link lengths must be positive")
        if self.d6 < 0.0:
            raise ValueError("tool offset must be nonnegative")
        qmin = _readonly(self.q_min)
        qmax = _readonly(self.q_max)
        qd = _readonly(self.qdot_max)
        if qmin.shape != qmax.shape or qmin.ndim != 1:
            raise ValueError("joint limit arrays must be 1-d and equal length")
        if np.any(qmin > qmax):
            raise ValueError("empty joint limit interval")
        object.__setattr__(self, "q_min", qmin)
        object.__setattr__(self, "q_max", qmax)
        object.__setattr__(self, "qdot_max", qd)

    @property
    def dof(self) -> int:
        return self.q_min.shape[0]

    @property
    def reach(self) -> float:
        return self.l2 + self.l3 + self.d6

    def mount_matrix(self) -> np.ndarray:
        return make_transform(rot_z(self.mount_yaw),
                              [self.mount_x, self.mount_y, self.h_b])

    def within_limits(self, q: np.ndarray, tol: float = 1e-9) -> bool:
        q = np.asarray(q, dtype=float)
        return bool(np.all(q >= self.q_min - tol) and np.all(q <= self.q_max + tol))

    def require_within_limits(self, q: np.ndarray) -> None:
        if not self.within_limits(q):
            raise JointLimitError(f"joint configuration outside limits: {np.asarray(q)}")

    def clip_to_limits(self, q: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(q, dtype=float), self.q_min, self.q_max)


class ChainFrames(NamedTuple):
    """Joint positions / axes of the serial chain in the arm root frame."""

    p_elbow: np.ndarray
    p_wrist: np.ndarray
    p_ee: np.ndarray
    R_ee: np.ndarray
    origins: np.ndarray   # (6, 3) joint origins
    axes: np.ndarray      # (6, 3) joint axes


def chain_frames(arm: ArmModel, q: np.ndarray) -> ChainFrames:
    q = np.asarray(q, dtype=float).ravel()
    q1, q2, q3, q4, q5, q6 = q
    R1 = rot_z(q1)
    R2 = R1 @ rot_y(q2)
    R3 = R1 @ rot_y(q2 + q3)
    p_elbow = arm.l2 * R2[:, 2]
    p_wrist = p_elbow + arm.l3 * R3[:, 2]
    R4 = R3 @ rot_z(q4)
    R5 = R4 @ rot_y(q5)
    R_ee = R5 @ rot_z(q6)
    p_ee = p_wrist + arm.d6 * R_ee[:, 2]
    origins = np.vstack([np.zeros(3), np.zeros(3), p_elbow,
                         p_wrist, p_wrist, p_wrist])
    axes = np.vstack([np.array([0.0, 0.0, 1.0]), R1[:, 1], R2[:, 1],
                      R3[:, 2], R4[:, 1], R5[:, 2]])
    return ChainFrames(p_elbow, p_wrist, p_ee, R_ee, origins, axes)


def chain_pose(arm: ArmModel, q: np.ndarray) -> np.ndarray:
    """EE transform in the base frame (mount included)."""
    fr = chain_frames(arm, q)
    return arm.mount_matrix() @ make_transform(fr.R_ee, fr.p_ee)


def ee_pose_from_base_matrix(arm: ArmModel, T_base: np.ndarray, q: np.ndarray) -> EePose:
    """FK through an arbitrary SE(3) base transform (used by the simulator)."""
    return EePose.from_matrix(T_base @ chain_pose(arm, q))


def forward_kinematics(arm: ArmModel, base: BasePose, q: np.ndarray) -> EePose:
    """Global EE pose for a planar base pose and joint configuration."""
    arm.require_within_limits(q)
    return ee_pose_from_base_matrix(arm, base.matrix(), q)


def arm_points_global(arm: ArmModel, base: BasePose, q: np.ndarray):
    """(arm root, elbow, wrist, ee) positions in the global frame."""
    T = base.matrix() @ arm.mount_matrix()
    fr = chain_frames(arm, q)
    root = T[:3, 3]
    return (root,
            transform_point(T, fr.p_elbow),
            transform_point(T, fr.p_wrist),
            transform_point(T, fr.p_ee))


def _chain_jacobian_root(arm: ArmModel, q: np.ndarray) -> np.ndarray:
    """Geometric Jacobian of the chain in the arm root frame, rows [v; w]."""
    fr = chain_frames(arm, q)
    J = np.zeros((6, arm.dof))
    for j in range(arm.dof):
        z = fr.axes[j]
        J[:3, j] = np.cross(z, fr.p_ee - fr.origins[j])
        J[3:, j] = z
    return J


def jacobian_ee_in_base(arm: ArmModel, q: np.ndarray) -> np.ndarray:
    """Geometric Jacobian mapping joint rates to the EE twist in the base frame."""
    arm.require_within_limits(q)
    J = _chain_jacobian_root(arm, q)
    Rm = rot_z(arm.mount_yaw)
    out = np.empty_like(J)
    out[:3] = Rm @ J[:3]
    out[3:] = Rm @ J[3:]
    return out


def jacobian_base_fixed_ee(arm: ArmModel, base: BasePose, q: np.ndarray) -> np.ndarray:
    """Jacobian of the induced base twist when the global EE pose is pinned.

    With the EE welded to the world, moving the joints forces the rigidly
    attached base to move with twist ``[v_b; w_b] = Jgb(q) qdot``, expressed
    in global coordinates with rows ordered [vx, vy, vz, wx, wy, wz].
    """
    J = jacobian_ee_in_base(arm, q)
    T = arm.mount_matrix()
    fr = chain_frames(arm, q)
    p_f = transform_point(T, fr.p_ee)          # EE position in the base frame
    Rb = rot_z(base.yaw)
    Jl = Rb @ J[:3]
    Ja = Rb @ J[3:]
    out = np.empty_like(J)
    out[:3] = -Jl - hat(Rb @ p_f) @ Ja
    out[3:] = -Ja
    return out


def manipulability_exact(arm: ArmModel, q: np.ndarray) -> float:
    """sqrt(det(Jp Jp^T)) over the positional 3xk Jacobian block."""
    Jp = jacobian_ee_in_base(arm, q)[:3]
    return float(np.sqrt(max(np.linalg.det(Jp @ Jp.T), 0.0)))


def workspace_distance(arm: ArmModel, ee: EePose, base: BasePose) -> float:
    """Euclidean EE-to-shoulder distance used by the workspace constraint."""
    L = float(np.linalg.norm(ee.xy - base.xy))
    return float(np.hypot(L, ee.position[2] - arm.h_b))


class SimplifiedManip(NamedTuple):
    value: float
    clamped: bool


def manipulability_simplified(arm: ArmModel, ee: EePose, base: BasePose,
                              boundary_margin: float = 1e-6) -> SimplifiedManip:
    """Positional manipulability from EE/base states only (sine surrogate).

    Evaluates ``l2*l3*L*sin(pi*(D - l2 + l3) / (2*l3))`` with L the
    horizontal EE-base distance and D the EE-to-shoulder distance: the
    elbow angle is linearized in D between its folded and extended limits,
    so the surrogate vanishes at both annulus boundaries like the exact
    measure (for l2 == l3 the shift drops out).  D outside the reachable
    annulus (|l2-l3|, l2+l3) is clamped to the boundary +- margin and the
    result is flagged; any negative sine tail is floored at zero so the
    measure stays nonnegative.
    """
    L = float(np.linalg.norm(ee.xy - base.xy))
    D = float(np.hypot(L, ee.position[2] - arm.h_b))
    lo = abs(arm.l2 - arm.l3) + boundary_margin
    hi = arm.l2 + arm.l3 - boundary_margin
    Dc = min(max(D, lo), hi)
    value = arm.l2 * arm.l3 * L * np.sin(np.pi * (Dc - arm.l2 + arm.l3) / (2.0 * arm.l3))
    return SimplifiedManip(max(float(value), 0.0), Dc != D)


# --- inverse kinematics -----------------------------------------------------


def _wrist_seeds(Rw: np.ndarray) -> list[tuple[float, float, float]]:
    """Both z-y-z Euler factorizations of the wrist rotation."""
    beta = float(np.arctan2(np.hypot(Rw[0, 2], Rw[1, 2]), Rw[2, 2]))
    if np.sin(beta) > 1e-9:
        alpha = float(np.arctan2(Rw[1, 2], Rw[0, 2]))
        gamma = float(np.arctan2(Rw[2, 1], -Rw[2, 0]))
        return [(alpha, beta, gamma),
                (alpha + np.pi, -beta, gamma + np.pi)]
    if Rw[2, 2] > 0.0:  # beta ~ 0: only alpha + gamma is determined
        g = float(np.arctan2(Rw[1, 0], Rw[0, 0]))
    else:               # beta ~ pi: only alpha - gamma is determined
        g = float(np.arctan2(Rw[1, 0], -Rw[0, 0]))
        beta = np.pi
    return [(0.0, beta, g), (0.0, beta, g)]


def _ik_seeds(arm: ArmModel, p_t: np.ndarray, R_t: np.ndarray) -> list[np.ndarray]:
    """Geometric branch seeds: shoulder left/right x elbow up/down x wrist flip."""
    W = p_t - arm.d6 * R_t[:, 2]
    r_xy = float(np.hypot(W[0], W[1]))
    q1_front = float(np.arctan2(W[1], W[0])) if r_xy > 1e-12 else 0.0
    seeds = []
    for shoulder in (0, 1):
        q1 = wrap_angle(q1_front + shoulder * np.pi)
        rho = r_xy if shoulder == 0 else -r_xy
        c3 = (rho * rho + W[2] * W[2] - arm.l2 ** 2 - arm.l3 ** 2) / (2.0 * arm.l2 * arm.l3)
        c3 = float(np.clip(c3, -1.0, 1.0))
        for elbow in (1.0, -1.0):
            q3 = elbow * float(np.arccos(c3))
            q2 = float(np.arctan2(rho, W[2])
                       - np.arctan2(arm.l3 * np.sin(q3), arm.l2 + arm.l3 * np.cos(q3)))
            Rw = (rot_z(q1) @ rot_y(q2 + q3)).T @ R_t
            for (q4, q5, q6) in _wrist_seeds(Rw):
                seeds.append(wrap_angle(np.array([q1, q2, q3, q4, q5, q6])))
    return seeds


def _pose_error(arm: ArmModel, q: np.ndarray, p_t: np.ndarray, R_t: np.ndarray) -> np.ndarray:
    fr = chain_frames(arm, q)
    return np.concatenate([p_t - fr.p_ee, rotation_log(R_t @ fr.R_ee.T)])


def _refine_ik(arm: ArmModel, seed: np.ndarray, p_t: np.ndarray, R_t: np.ndarray,
               iters: int = 60, damping: float = 1e-4) -> np.ndarray:
    q = np.array(seed, dtype=float)
    lam2 = damping * damping
    for _ in range(iters):
        err = _pose_error(arm, q, p_t, R_t)
        if np.linalg.norm(err[:3]) < 1e-11 and np.linalg.norm(err[3:]) < 1e-11:
            break
        J = _chain_jacobian_root(arm, q)
        dq = np.linalg.solve(J.T @ J + lam2 * np.eye(arm.dof), J.T @ err)
        step = float(np.max(np.abs(dq)))
        if step > 0.5:  # keep refinement local to the seeded branch
            dq *= 0.5 / step
        q = wrap_angle(q + dq)
    return q


def ik_enumerate(arm: ArmModel, base: BasePose, target: EePose,
                 pos_tol: float = 1e-6, rot_tol: float = 1e-6,
                 dedup_tol: float = 1e-4) -> list[np.ndarray]:
    """All distinct joint configurations that reach ``target``.

    Seeds the eight analytic branches (shoulder left/right, elbow up/down,
    wrist flip) and refines each with damped least squares; solutions are
    verified against the pose tolerances, filtered by joint limits and
    deduplicated.  Unreachable targets yield an empty list.  The list order
    is the canonical branch order, which downstream tie-breaking relies on.
    """
    T_root = invert_transform(base.matrix() @ arm.mount_matrix()) @ target.matrix()
    p_t, R_t = T_root[:3, 3], T_root[:3, :3]
    if np.linalg.norm(p_t) > arm.reach + 1e-6:
        return []
    found: list[np.ndarray] = []
    for seed in _ik_seeds(arm, p_t, R_t):
        q = _refine_ik(arm, seed, p_t, R_t)
        err = _pose_error(arm, q, p_t, R_t)
        if np.linalg.norm(err[:3]) > pos_tol or np.linalg.norm(err[3:]) > rot_tol:
            continue
        if not arm.within_limits(q):
            continue
        if any(np.max(np.abs(wrap_angle(q - prev))) < dedup_tol for prev in found):
            continue
        found.append(_readonly(q))
    return found
