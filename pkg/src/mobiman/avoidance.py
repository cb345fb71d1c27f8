"""Whole-body obstacle checking and configuration reselection.

For every coordinated waypoint the IK branches are enumerated and screened
against the distance field: a branch is safe when every point sampled along
the body centerline (arm root -> elbow -> EE) clears the arm threshold and
the EE / base clearance points clear theirs.  Waypoints with no safe branch
are flagged for path optimization; partially blocked waypoints are switched
to the safe branch whose elbow direction best matches the local distance
gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .esdf import EsdfGrid, sdf_grad, sdf_query
from .kinematics import ArmModel, BasePose, PathState, arm_points_global, ik_enumerate, wrap_angle

ALL_SAFE = "all_safe"
RECONFIGURED = "reconfigured"
NEEDS_OPTIMIZATION = "needs_optimization"


@dataclass(frozen=True)
class ClearanceThresholds:
    """Minimum obstacle distances for arm samples, the base and the EE."""

    arm: float = 0.1
    base: float = 0.2
    ee: float = 0.05

    def __post_init__(self):
        if min(self.arm, self.base, self.ee) <= 0.0:
            raise ValueError("clearance thresholds must be positive")


@dataclass(frozen=True)
class WaypointStatus:
    index: int
    kind: str
    config: Optional[np.ndarray] = None


@dataclass
class AvoidanceOutcome:
    statuses: list[WaypointStatus]
    joint_path: list[np.ndarray]

    @property
    def marked_indices(self) -> list[int]:
        return [s.index for s in self.statuses if s.kind == NEEDS_OPTIMIZATION]

    @property
    def reconfigured_indices(self) -> list[int]:
        return [s.index for s in self.statuses if s.kind == RECONFIGURED]

    @property
    def clean(self) -> bool:
        return not self.marked_indices


def sample_centerline(arm: ArmModel, base: BasePose, q: np.ndarray,
                      m_per_segment: int = 6) -> np.ndarray:
    """Uniform samples along arm-root -> elbow -> EE, shared points once.

    Returns ``2 * m_per_segment + 1`` points; ``m_per_segment = 1`` gives
    exactly the root, elbow and EE positions.
    """
    if m_per_segment < 1:
        raise ValueError("m_per_segment must be >= 1")
    arm.require_within_limits(q)
    root, elbow, _, ee = arm_points_global(arm, base, q)
    f = np.linspace(0.0, 1.0, m_per_segment + 1)[:, None]
    seg1 = (1.0 - f) * root + f * elbow
    seg2 = (1.0 - f[1:]) * elbow + f[1:] * ee
    return np.vstack([seg1, seg2])


def _clear_at(esdf: EsdfGrid, p, threshold: float) -> bool:
    q = sdf_query(esdf, p)
    return q.in_bounds and q.value > threshold


def check_waypoint(state: PathState, arm: ArmModel, esdf: EsdfGrid,
                   thresholds: ClearanceThresholds, m_per_segment: int = 6,
                   base_height: float = 0.2,
                   skip_ee_clearance: bool = False) -> tuple[list[np.ndarray], int]:
    """IK solutions surviving the clearance conjunction, plus the branch count.

    Out-of-bounds distance queries count as unsafe (unknown space).  The EE
    clearance check can be waived for waypoints inside a declared fixed-pose
    window, where approaching the target is the point.
    """
    solutions = ik_enumerate(arm, state.base, state.ee)
    total = len(solutions)
    if total == 0:
        return [], 0
    if not skip_ee_clearance and not _clear_at(esdf, state.ee.position, thresholds.ee):
        return [], total
    if not _clear_at(esdf, [state.base.x, state.base.y, base_height], thresholds.base):
        return [], total
    safe = []
    for q in solutions:
        pts = sample_centerline(arm, state.base, q, m_per_segment)
        if all(_clear_at(esdf, p, thresholds.arm) for p in pts):
            safe.append(q)
    return safe, total


def select_best_config(safe_set: Sequence[np.ndarray], arm: ArmModel, base: BasePose,
                       esdf: EsdfGrid, state: PathState,
                       prefer: Optional[np.ndarray] = None,
                       prefer_tol: float = 0.0) -> np.ndarray:
    """Pick the safe branch whose elbow direction best follows the gradient.

    The reference direction is the distance-field gradient at the midpoint
    of the arm-root -> EE chord; the candidate direction points from that
    midpoint to the branch's elbow.  Ties keep the earliest branch.  When a
    ``prefer`` configuration is given, branches whose alignment angle is
    within ``prefer_tol`` of the optimum count as equivalent and the one
    closest to ``prefer`` wins, which stops near-symmetric scenes from
    flip-flopping between mirrored variants along a path.
    """
    if not safe_set:
        raise ValueError("select_best_config needs a non-empty safe set")
    root, _, _, ee = arm_points_global(arm, base, safe_set[0])
    mid = 0.5 * (root + ee)
    grad = sdf_grad(esdf, mid)
    if np.linalg.norm(grad) < 1e-9:
        return safe_set[0]
    angles = []
    for q in safe_set:
        _, elbow, _, _ = arm_points_global(arm, base, q)
        v = elbow - mid
        n = float(np.linalg.norm(v))
        angles.append(0.5 * np.pi if n < 1e-9
                      else float(np.arccos(np.clip(np.dot(v / n, grad), -1.0, 1.0))))
    best = int(np.argmin(angles))
    if prefer is not None and prefer_tol > 0.0:
        candidates = [i for i, a in enumerate(angles) if a <= angles[best] + prefer_tol]
        best = min(candidates,
                   key=lambda i: float(np.max(np.abs(safe_set[i] - np.asarray(prefer)))))
    return safe_set[best]


def verify_joint_path(states: Sequence[PathState], joint_path: Sequence[np.ndarray],
                      arm: ArmModel, esdf: EsdfGrid, thresholds: ClearanceThresholds,
                      m_per_segment: int = 6, base_height: float = 0.2,
                      ee_exempt: frozenset = frozenset()) -> list[int]:
    """Indices whose *current* configuration fails the clearance conjunction.

    Unlike the full avoidance pass this never reselects branches, so it is
    safe to run over an interpolated path without reintroducing jumps.
    """
    bad = []
    for i, (state, q) in enumerate(zip(states, joint_path)):
        ok = True
        if i not in ee_exempt and not _clear_at(esdf, state.ee.position, thresholds.ee):
            ok = False
        if ok and not _clear_at(esdf, [state.base.x, state.base.y, base_height],
                                thresholds.base):
            ok = False
        if ok:
            pts = sample_centerline(arm, state.base, q, m_per_segment)
            ok = all(_clear_at(esdf, p, thresholds.arm) for p in pts)
        if not ok:
            bad.append(i)
    return bad


def run_avoidance(states: Sequence[PathState], joint_path: Sequence[np.ndarray],
                  arm: ArmModel, esdf: EsdfGrid, thresholds: ClearanceThresholds,
                  m_per_segment: int = 6, base_height: float = 0.2,
                  stop_at_first_violation: bool = False,
                  ee_exempt: frozenset = frozenset(),
                  consistency_tol: float = 0.0) -> AvoidanceOutcome:
    """Scan every waypoint, reselecting branches and flagging dead ends.

    By default all violating waypoints are collected in one pass so a single
    optimizer call can repair them; ``stop_at_first_violation`` restores the
    literal early return (scanning stops at the first flagged waypoint).
    A partially blocked waypoint whose current configuration already equals
    the selected branch is reported safe, which makes repeated passes over
    an already-repaired path quiescent.
    """
    if len(states) != len(joint_path):
        raise ValueError("coordinated path and joint path must have equal length")
    new_joints = [np.asarray(q, dtype=float) for q in joint_path]
    statuses: list[WaypointStatus] = []
    for i, state in enumerate(states):
        safe, total = check_waypoint(state, arm, esdf, thresholds, m_per_segment,
                                     base_height, skip_ee_clearance=i in ee_exempt)
        if not safe:
            statuses.append(WaypointStatus(i, NEEDS_OPTIMIZATION))
            if stop_at_first_violation:
                break
            continue
        if len(safe) == total:
            statuses.append(WaypointStatus(i, ALL_SAFE))
            continue
        prefer = new_joints[i - 1] if (consistency_tol > 0.0 and i > 0) else None
        q_new = select_best_config(safe, arm, state.base, esdf, state,
                                   prefer=prefer, prefer_tol=consistency_tol)
        if np.max(np.abs(wrap_angle(q_new - new_joints[i]))) < 1e-6:
            statuses.append(WaypointStatus(i, ALL_SAFE))
            continue
        new_joints[i] = q_new
        statuses.append(WaypointStatus(i, RECONFIGURED, q_new))
    return AvoidanceOutcome(statuses, new_joints)
