"""Residuals and Jacobians for every term of the coordinated path objective.

Each term maps one to three consecutive waypoints to a small residual vector
e; the solver minimizes ``sum(e^T diag(weight) e)``.  Displacement-based
terms (curvature, heading, obstacle velocity-direction) normalize their
displacement vectors above a 1e-9 norm so they measure direction change
only; the raw inner-product variant is kept behind ``normalized=False``.
Stationary waypoints (zero displacement) contribute zero residual.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .esdf import EsdfGrid, sdf_grad, sdf_query
from .kinematics import ArmModel, PathState, manipulability_simplified, wrap_angle

RESIDUAL_CAP = 1e6
EPS_NORM = 1e-9
FD_STEP = 1e-6


class TermKind(str, Enum):
    MANIP = "manip"
    EE_ACCEL = "ee_accel"
    EE_CURV = "ee_curv"
    BASE_HEADING = "base_heading"
    WORKSPACE = "workspace"
    OBST_POS_VEL = "obstacle"


@dataclass(frozen=True)
class CostTerm:
    """One weighted residual attached to consecutive waypoint indices."""

    kind: TermKind
    indices: tuple[int, ...]
    weight: np.ndarray
    arm: Optional[ArmModel] = None
    esdf: Optional[EsdfGrid] = None
    timestep: float = 0.1
    workspace_radius: float = 0.85
    which: str = "ee"              # obstacle terms: "ee" or "base"
    base_height: float = 0.2       # z of the base clearance point
    normalized: bool = True

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weight, dtype=float))
        if np.any(w <= 0.0):
            raise ValueError("weights must be positive")
        w.flags.writeable = False
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))

    @property
    def dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class PenaltyState:
    """Active-set multiplier of one workspace term: 0 or 1e4."""

    lam: float = 0.0


PENALTY_ACTIVE = 1e4


@dataclass(frozen=True)
class CostWeights:
    """Default objective weights (ee accel/curvature, workspace, base heading,
    manipulability, obstacle position/velocity)."""

    ee_accel: float = 1e2
    ee_curv: float = 1e2
    workspace: float = 1e3
    base_heading: float = 1e2
    manip: float = 50.0
    obstacle_pos: float = 1e2
    obstacle_vel: float = 1e2


# --- residuals ----------------------------------------------------------------


def residual_manip(state: PathState, arm: ArmModel, cap: float = RESIDUAL_CAP) -> float:
    """Reciprocal of the simplified positional manipulability, capped."""
    m = manipulability_simplified(arm, state.ee, state.base).value
    if m <= 1.0 / cap:
        return cap
    return 1.0 / m


def residual_ee_accel(prev: PathState, cur: PathState, nxt: PathState, t: float) -> np.ndarray:
    """Second difference of the EE pose over three waypoints, scaled by 1/(2 t^2).

    Angle components are differenced with wrapping before the second
    difference so a crossing of +-pi does not masquerade as acceleration.
    """
    if t <= 0.0:
        raise ValueError("timestep must be positive")
    s = 1.0 / (2.0 * t * t)
    pos = (nxt.ee.position - 2.0 * cur.ee.position + prev.ee.position) * s
    ang = (wrap_angle(nxt.ee.rpy - cur.ee.rpy) - wrap_angle(cur.ee.rpy - prev.ee.rpy)) * s
    return np.concatenate([pos, ang])


def _unit(v: np.ndarray):
    n = float(np.linalg.norm(v))
    if n < EPS_NORM:
        return None, 0.0
    return v / n, n


def residual_ee_curv(prev: PathState, cur: PathState, nxt: PathState,
                     normalized: bool = True) -> float:
    """1 - dot(next displacement, previous displacement) of the EE position."""
    a = nxt.ee.position - cur.ee.position
    b = cur.ee.position - prev.ee.position
    if normalized:
        ua, na = _unit(a)
        ub, nb = _unit(b)
        if ua is None or ub is None:
            return 0.0
        return float(1.0 - np.dot(ua, ub))
    return float(1.0 - np.dot(a, b))


def residual_base_heading(prev: PathState, cur: PathState) -> float:
    """|yaw - direction of travel| for the base, via two-argument arctangent."""
    dx = cur.base.x - prev.base.x
    dy = cur.base.y - prev.base.y
    if np.hypot(dx, dy) < EPS_NORM:
        return 0.0
    return float(abs(wrap_angle(cur.base.yaw - np.arctan2(dy, dx))))


def residual_workspace(state: PathState, arm: ArmModel, lam: float,
                       radius: float) -> float:
    """Multiplier times the (squared) workspace-overrun of the EE.

    The multiplier is the two-level hinge evaluated at the state itself:
    whenever the constraint holds (overrun <= 0) the residual is exactly
    zero, so feasible states feel no pull toward the boundary.
    """
    d_xy2 = float(np.sum((state.ee.xy - state.base.xy) ** 2))
    dz = float(state.ee.position[2] - arm.h_b)
    v = d_xy2 + dz * dz - radius * radius
    if v <= 0.0:
        return 0.0
    return lam * v


def _clearance_point(state: PathState, which: str, base_height: float) -> np.ndarray:
    if which == "ee":
        return np.array(state.ee.position)
    return np.array([state.base.x, state.base.y, base_height])


def residual_obstacle(cur: PathState, nxt: PathState, esdf: EsdfGrid, which: str,
                      base_height: float = 0.2, cap: float = RESIDUAL_CAP,
                      normalized: bool = True) -> np.ndarray:
    """[reciprocal clearance, misalignment of motion with the distance gradient]."""
    p = _clearance_point(cur, which, base_height)
    p_next = _clearance_point(nxt, which, base_height)
    d = sdf_query(esdf, p).value
    pos = cap if d <= 1.0 / cap else min(cap, 1.0 / d)
    disp = p_next - p
    u, n = _unit(disp)
    if u is None:
        vel = 0.0
    else:
        g = sdf_grad(esdf, p)
        vel = float(1.0 - np.dot(u if normalized else disp, g))
    return np.array([pos, vel])


# --- evaluation / jacobians ---------------------------------------------------


def evaluate_term(term: CostTerm, states: Sequence[PathState], lam: float = 0.0) -> np.ndarray:
    """Residual vector of a term at the given states."""
    k = term.kind
    idx = term.indices
    if k is TermKind.MANIP:
        return np.atleast_1d(residual_manip(states[idx[0]], term.arm))
    if k is TermKind.EE_ACCEL:
        return residual_ee_accel(states[idx[0]], states[idx[1]], states[idx[2]], term.timestep)
    if k is TermKind.EE_CURV:
        return np.atleast_1d(residual_ee_curv(states[idx[0]], states[idx[1]], states[idx[2]],
                                              term.normalized))
    if k is TermKind.BASE_HEADING:
        return np.atleast_1d(residual_base_heading(states[idx[0]], states[idx[1]]))
    if k is TermKind.WORKSPACE:
        return np.atleast_1d(residual_workspace(states[idx[0]], term.arm, lam,
                                                term.workspace_radius))
    if k is TermKind.OBST_POS_VEL:
        return residual_obstacle(states[idx[0]], states[idx[1]], term.esdf, term.which,
                                 term.base_height, normalized=term.normalized)
    raise ValueError(f"unknown term kind {k}")


def term_cost(term: CostTerm, states: Sequence[PathState], lam: float = 0.0) -> float:
    e = evaluate_term(term, states, lam)
    return float(np.dot(e * term.weight, e))


def _fd_jacobian(term: CostTerm, states: Sequence[PathState], lam: float) -> list[np.ndarray]:
    """Central finite differences over the 9 coordinates of each touched waypoint."""
    work = list(states)
    blocks = []
    for idx in term.indices:
        block = np.zeros((term.dim, 9))
        base_vec = states[idx].as_vector()
        for c in range(9):
            v = base_vec.copy()
            v[c] += FD_STEP
            work[idx] = PathState.from_vector(v)
            hi = evaluate_term(term, work, lam)
            v[c] = base_vec[c] - FD_STEP
            work[idx] = PathState.from_vector(v)
            lo = evaluate_term(term, work, lam)
            block[:, c] = (hi - lo) / (2.0 * FD_STEP)
        work[idx] = states[idx]
        blocks.append(block)
    return blocks


def term_jacobian(term: CostTerm, states: Sequence[PathState], lam: float = 0.0) -> list[np.ndarray]:
    """Jacobian blocks (dim x 9) of the residual w.r.t. each touched waypoint.

    Analytic for the acceleration / curvature / heading / workspace terms;
    central finite differences (step 1e-6) for the manipulability and
    obstacle terms, whose residuals go through the sine surrogate and the
    interpolated distance field.  The FD paths perturb only the coordinates
    the residual actually reads (the rest are identically zero).
    """
    k = term.kind
    idx = term.indices
    if k is TermKind.MANIP:
        return _manip_fd_jacobian(term, states[idx[0]])
    if k is TermKind.OBST_POS_VEL:
        return _obstacle_fd_jacobian(term, states[idx[0]], states[idx[1]])
    if k is TermKind.EE_ACCEL:
        s = 1.0 / (2.0 * term.timestep ** 2)
        blk = np.zeros((6, 9))
        blk[:6, :6] = np.eye(6)
        return [blk * s, blk * (-2.0 * s), blk * s]
    if k is TermKind.EE_CURV:
        return _curvature_jacobian(term, states)
    if k is TermKind.BASE_HEADING:
        return _heading_jacobian(states[idx[0]], states[idx[1]])
    if k is TermKind.WORKSPACE:
        return _workspace_jacobian(term, states[idx[0]], lam)
    raise ValueError(f"unknown term kind {k}")


def _manip_resid_of_points(arm: ArmModel, ee_xyz: np.ndarray, base_xy: np.ndarray,
                           cap: float = RESIDUAL_CAP) -> float:
    L = float(np.hypot(ee_xyz[0] - base_xy[0], ee_xyz[1] - base_xy[1]))
    D = float(np.hypot(L, ee_xyz[2] - arm.h_b))
    lo = abs(arm.l2 - arm.l3) + 1e-6
    hi = arm.l2 + arm.l3 - 1e-6
    Dc = min(max(D, lo), hi)
    m = max(arm.l2 * arm.l3 * L * np.sin(np.pi * (Dc - arm.l2 + arm.l3) / (2.0 * arm.l3)), 0.0)
    return cap if m <= 1.0 / cap else 1.0 / m


def _manip_fd_jacobian(term: CostTerm, state: PathState) -> list[np.ndarray]:
    # residual reads ee x/y/z (cols 0..2) and base x/y (cols 6..7) only
    ee = np.array(state.ee.position)
    bxy = np.array([state.base.x, state.base.y])
    blk = np.zeros((1, 9))
    for c, (vec, j) in enumerate(((ee, 0), (ee, 1), (ee, 2), (bxy, 0), (bxy, 1))):
        col = (0, 1, 2, 6, 7)[c]
        vec[j] += FD_STEP
        hi = _manip_resid_of_points(term.arm, ee, bxy)
        vec[j] -= 2.0 * FD_STEP
        lo = _manip_resid_of_points(term.arm, ee, bxy)
        vec[j] += FD_STEP
        blk[0, col] = (hi - lo) / (2.0 * FD_STEP)
    return [blk]


def _obstacle_resid_of_points(esdf: EsdfGrid, p: np.ndarray, p_next: np.ndarray,
                              normalized: bool, cap: float = RESIDUAL_CAP) -> np.ndarray:
    d = sdf_query(esdf, p).value
    pos = cap if d <= 1.0 / cap else min(cap, 1.0 / d)
    u, n = _unit(p_next - p)
    if u is None:
        vel = 0.0
    else:
        g = sdf_grad(esdf, p)
        vel = float(1.0 - np.dot(u if normalized else (p_next - p), g))
    return np.array([pos, vel])


def _obstacle_fd_jacobian(term: CostTerm, cur: PathState, nxt: PathState) -> list[np.ndarray]:
    p = _clearance_point(cur, term.which, term.base_height)
    p_next = _clearance_point(nxt, term.which, term.base_height)
    cols = (0, 1, 2) if term.which == "ee" else (6, 7)
    blk_cur = np.zeros((2, 9))
    if term.indices[0] == term.indices[1]:
        # Degenerate self-pair: the velocity component is identically zero
        # (stationary rule); only the reciprocal-distance row has slope.
        for j, col in enumerate(cols):
            p[j] += FD_STEP
            hi = _obstacle_resid_of_points(term.esdf, p, p, term.normalized)[0]
            p[j] -= 2.0 * FD_STEP
            lo = _obstacle_resid_of_points(term.esdf, p, p, term.normalized)[0]
            p[j] += FD_STEP
            blk_cur[0, col] = (hi - lo) / (2.0 * FD_STEP)
        return [blk_cur]
    blk_next = np.zeros((2, 9))
    for j, col in enumerate(cols):
        p[j] += FD_STEP
        hi = _obstacle_resid_of_points(term.esdf, p, p_next, term.normalized)
        p[j] -= 2.0 * FD_STEP
        lo = _obstacle_resid_of_points(term.esdf, p, p_next, term.normalized)
        p[j] += FD_STEP
        blk_cur[:, col] = (hi - lo) / (2.0 * FD_STEP)
        p_next[j] += FD_STEP
        hi = _obstacle_resid_of_points(term.esdf, p, p_next, term.normalized)
        p_next[j] -= 2.0 * FD_STEP
        lo = _obstacle_resid_of_points(term.esdf, p, p_next, term.normalized)
        p_next[j] += FD_STEP
        blk_next[:, col] = (hi - lo) / (2.0 * FD_STEP)
    return [blk_cur, blk_next]


def _curvature_jacobian(term: CostTerm, states: Sequence[PathState]) -> list[np.ndarray]:
    i0, i1, i2 = term.indices
    a = states[i2].ee.position - states[i1].ee.position
    b = states[i1].ee.position - states[i0].ee.position
    d_prev = np.zeros((1, 9))
    d_cur = np.zeros((1, 9))
    d_next = np.zeros((1, 9))
    if term.normalized:
        ua, na = _unit(a)
        ub, nb = _unit(b)
        if ua is None or ub is None:
            return [d_prev, d_cur, d_next]
        dot = float(np.dot(ua, ub))
        ga = -(ub - dot * ua) / na   # d residual / d a
        gb = -(ua - dot * ub) / nb   # d residual / d b
    else:
        ga, gb = -b, -a
    d_next[0, :3] = ga
    d_cur[0, :3] = -ga + gb
    d_prev[0, :3] = -gb
    return [d_prev, d_cur, d_next]


def _heading_jacobian(prev: PathState, cur: PathState) -> list[np.ndarray]:
    dx = cur.base.x - prev.base.x
    dy = cur.base.y - prev.base.y
    L2 = dx * dx + dy * dy
    d_prev = np.zeros((1, 9))
    d_cur = np.zeros((1, 9))
    if np.sqrt(L2) < EPS_NORM:
        return [d_prev, d_cur]
    w = float(wrap_angle(cur.base.yaw - np.arctan2(dy, dx)))
    s = float(np.sign(w))
    d_cur[0, 8] = s
    d_cur[0, 6] = s * dy / L2
    d_cur[0, 7] = -s * dx / L2
    d_prev[0, 6] = -s * dy / L2
    d_prev[0, 7] = s * dx / L2
    return [d_prev, d_cur]


def _workspace_jacobian(term: CostTerm, state: PathState, lam: float) -> list[np.ndarray]:
    blk = np.zeros((1, 9))
    dxy = state.ee.xy - state.base.xy
    dz = state.ee.position[2] - term.arm.h_b
    v = float(np.dot(dxy, dxy)) + dz * dz - term.workspace_radius ** 2
    if lam != 0.0 and v > 0.0:
        blk[0, 0:2] = 2.0 * lam * dxy
        blk[0, 2] = 2.0 * lam * dz
        blk[0, 6:8] = -2.0 * lam * dxy
    return [blk]


# --- standard term sets ---------------------------------------------------------


def smoothness_and_constraint_terms(n: int, arm: ArmModel, weights: CostWeights,
                                    timestep: float, workspace_radius: float,
                                    normalized: bool = True) -> list[CostTerm]:
    """The always-on objective: manipulability, EE accel/curvature, base
    heading and the workspace penalty at every applicable waypoint."""
    terms: list[CostTerm] = []
    for i in range(n):
        terms.append(CostTerm(TermKind.MANIP, (i,), np.array([weights.manip]), arm=arm))
        terms.append(CostTerm(TermKind.WORKSPACE, (i,), np.array([weights.workspace]),
                              arm=arm, workspace_radius=workspace_radius))
    for i in range(1, n - 1):
        terms.append(CostTerm(TermKind.EE_ACCEL, (i - 1, i, i + 1),
                              np.full(6, weights.ee_accel), timestep=timestep))
        terms.append(CostTerm(TermKind.EE_CURV, (i - 1, i, i + 1),
                              np.array([weights.ee_curv]), normalized=normalized))
    for i in range(1, n):
        terms.append(CostTerm(TermKind.BASE_HEADING, (i - 1, i),
                              np.array([weights.base_heading])))
    return terms


def obstacle_terms(marked: Sequence[int], n: int, esdf: EsdfGrid, weights: CostWeights,
                   base_height: float, normalized: bool = True) -> list[CostTerm]:
    """Clearance terms for the EE and the base at flagged waypoints.

    The velocity-direction component needs a successor waypoint; the last
    waypoint pairs with itself, which the stationary rule maps to zero.
    """
    w = np.array([weights.obstacle_pos, weights.obstacle_vel])
    terms = []
    for i in sorted(set(int(i) for i in marked)):
        j = i + 1 if i + 1 < n else i
        for which in ("ee", "base"):
            terms.append(CostTerm(TermKind.OBST_POS_VEL, (i, j), w, esdf=esdf,
                                  which=which, base_height=base_height,
                                  normalized=normalized))
    return terms


def with_raw_displacements(terms: Sequence[CostTerm]) -> list[CostTerm]:
    """Switch curvature / obstacle-velocity terms to the raw inner product."""
    return [replace(t, normalized=False) if t.kind in (TermKind.EE_CURV, TermKind.OBST_POS_VEL)
            else t for t in terms]
