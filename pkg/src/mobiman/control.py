"""Isolated holistic control: base path tracking plus the arm's
feedforward-feedback loop.

The base runs a receding-horizon tracker over the unicycle model with a
quadratic stage cost on cross-track error, heading error and control effort
(measured against the reference control, which is zero past the path end).
The arm superposes a joint-space feedback regulator on a feedforward that
cancels the EE velocity induced by base motion, mapped to joint rates
through the inverse Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .kinematics import (
    ArmModel,
    BasePose,
    EePose,
    PathState,
    chain_pose,
    jacobian_ee_in_base,
    wrap_angle,
)
from .transforms import invert_transform, rotation_log


@dataclass(frozen=True)
class BaseCommand:
    v_x: float = 0.0
    omega_z: float = 0.0


@dataclass(frozen=True)
class ControlCommand:
    qdot: np.ndarray
    base: BaseCommand


# --- base path tracking -------------------------------------------------------


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 20
    dt: float = 0.05
    w_cross: float = 10.0
    w_heading: float = 1.0
    w_effort: float = 0.1
    v_ref: float = 0.25
    v_max: float = 0.3
    omega_max: float = 0.5
    sweeps: int = 5


class _RefPath:
    """Arc-length parameterized polyline with per-point headings."""

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if len(pts) == 0:
            raise ValueError("reference path is empty")
        # Collapse zero-length segments so headings are well defined.
        keep = [0]
        for i in range(1, len(pts)):
            if np.linalg.norm(pts[i] - pts[keep[-1]]) > 1e-12:
                keep.append(i)
        self.pts = pts[keep]
        segs = np.diff(self.pts, axis=0)
        seg_len = np.linalg.norm(segs, axis=1)
        self.s = np.concatenate([[0.0], np.cumsum(seg_len)])
        self.headings = np.arctan2(segs[:, 1], segs[:, 0]) if len(segs) else np.zeros(0)
        self.length = float(self.s[-1])

    def project(self, p: np.ndarray, s_hint: Optional[float] = None,
                back: float = 0.3, ahead: float = 1.0) -> float:
        """Arc length of the closest point on the polyline.

        With a hint, only the arc band [hint - back, hint + ahead] competes,
        so a self-overlapping path (interpolated base detours) cannot yank
        the progress estimate to a distant pass.
        """
        if len(self.pts) == 1:
            return 0.0
        lo = -np.inf if s_hint is None else s_hint - back
        hi = np.inf if s_hint is None else s_hint + ahead
        best_s, best_d = 0.0 if s_hint is None else s_hint, np.inf
        for i in range(len(self.pts) - 1):
            if self.s[i + 1] < lo or self.s[i] > hi:
                continue
            a, b = self.pts[i], self.pts[i + 1]
            ab = b - a
            t = float(np.clip(np.dot(p - a, ab) / max(np.dot(ab, ab), 1e-18), 0.0, 1.0))
            c = a + t * ab
            d = float(np.linalg.norm(p - c))
            if d < best_d:
                best_d = d
                best_s = self.s[i] + t * np.linalg.norm(ab)
        return best_s

    def sample(self, s: float) -> tuple[np.ndarray, float, bool]:
        """Point, heading and a past-the-end flag at arc length s."""
        if len(self.pts) == 1:
            return self.pts[0], 0.0, True
        past = s >= self.length
        s = float(np.clip(s, 0.0, self.length))
        i = int(np.searchsorted(self.s[1:], s, side="right"))
        i = min(i, len(self.headings) - 1)
        seg = self.s[i + 1] - self.s[i]
        t = 0.0 if seg <= 0 else (s - self.s[i]) / seg
        return (1 - t) * self.pts[i] + t * self.pts[i + 1], float(self.headings[i]), past


def _rollout(x0: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    X = np.empty((len(u) + 1, 3))
    X[0] = x0
    for k, (v, w) in enumerate(u):
        x, y, th = X[k]
        X[k + 1] = [x + v * np.cos(th) * dt, y + v * np.sin(th) * dt, th + w * dt]
    return X


def base_mpc_step(ref_points: np.ndarray, base_cur: BasePose, cfg: MpcConfig,
                  horizon: Optional[int] = None,
                  s_hint: Optional[float] = None) -> BaseCommand:
    """One receding-horizon step of the unicycle tracker.

    Iterative linearization: roll out the current control sequence, linearize
    the stage errors around it and solve the stacked least-squares update,
    a handful of sweeps.  Returns the first control, saturated.
    """
    path = _RefPath(ref_points)
    H = int(horizon or cfg.horizon)
    dt = cfg.dt
    s0 = path.project(np.array([base_cur.x, base_cur.y]), s_hint=s_hint)
    refs, u_ref = [], []
    for k in range(1, H + 1):
        p, heading, past = path.sample(s0 + cfg.v_ref * dt * k)
        refs.append((p, heading))
        u_ref.append([0.0, 0.0] if past else [cfg.v_ref, 0.0])
    u_ref = np.asarray(u_ref)
    u = u_ref.copy()
    x0 = np.array([base_cur.x, base_cur.y, base_cur.yaw])
    sw_c, sw_h, sw_e = np.sqrt(cfg.w_cross), np.sqrt(cfg.w_heading), np.sqrt(cfg.w_effort)

    for _ in range(cfg.sweeps):
        X = _rollout(x0, u, dt)
        # Forward sensitivities of each state w.r.t. the stacked controls.
        S = np.zeros((H + 1, 3, 2 * H))
        for k in range(H):
            v, th = u[k, 0], X[k, 2]
            A = np.array([[1.0, 0.0, -v * np.sin(th) * dt],
                          [0.0, 1.0, v * np.cos(th) * dt],
                          [0.0, 0.0, 1.0]])
            B = np.array([[np.cos(th) * dt, 0.0],
                          [np.sin(th) * dt, 0.0],
                          [0.0, dt]])
            S[k + 1] = A @ S[k]
            S[k + 1][:, 2 * k:2 * k + 2] += B
        rows, rhs = [], []
        for k in range(1, H + 1):
            (p_ref, h_ref) = refs[k - 1]
            n_lat = np.array([-np.sin(h_ref), np.cos(h_ref)])
            e_lat = float(np.dot(X[k, :2] - p_ref, n_lat))
            rows.append(sw_c * (n_lat @ S[k][:2]))
            rhs.append(sw_c * e_lat)
            e_head = float(wrap_angle(X[k, 2] - h_ref))
            rows.append(sw_h * S[k][2])
            rhs.append(sw_h * e_head)
        for k in range(H):
            for j in range(2):
                row = np.zeros(2 * H)
                row[2 * k + j] = sw_e
                rows.append(row)
                rhs.append(sw_e * (u[k, j] - u_ref[k, j]))
        A = np.vstack(rows)
        b = np.asarray(rhs)
        du, *_ = np.linalg.lstsq(A, -b, rcond=None)
        u = u + du.reshape(H, 2)
        u[:, 0] = np.clip(u[:, 0], -cfg.v_max, cfg.v_max)
        u[:, 1] = np.clip(u[:, 1], -cfg.omega_max, cfg.omega_max)
    return BaseCommand(float(u[0, 0]), float(u[0, 1]))


# --- arm feedforward / feedback -------------------------------------------------


def induced_ee_velocity(base_vel: BaseCommand, ee_in_base: EePose) -> np.ndarray:
    """EE twist (base frame) inherited from the planar base motion.

    Linear part ``v + w x p``, angular part ``w``, with ``v = (v_x, 0, 0)``
    and ``w = (0, 0, omega_z)``.
    """
    v = np.array([base_vel.v_x, 0.0, 0.0])
    w = np.array([0.0, 0.0, base_vel.omega_z])
    return np.concatenate([v + np.cross(w, ee_in_base.position), w])


class FeedforwardTerm(NamedTuple):
    qdot: np.ndarray
    damped: bool


def feedforward_term(arm: ArmModel, q_cur: np.ndarray, induced: np.ndarray,
                     singular_tol: float = 1e-6, damping: float = 1e-3) -> FeedforwardTerm:
    """Joint rates reproducing an induced EE twist: ``J^-1 v``.

    Near singularities the exact inverse is replaced by damped least squares
    and the result is flagged.
    """
    J = jacobian_ee_in_base(arm, q_cur)
    induced = np.asarray(induced, dtype=float)
    if J.shape[0] == J.shape[1]:
        smin = np.linalg.svd(J, compute_uv=False).min()
        if smin > singular_tol:
            return FeedforwardTerm(np.linalg.solve(J, induced), False)
    qdot = np.linalg.solve(J.T @ J + damping ** 2 * np.eye(arm.dof), J.T @ induced)
    return FeedforwardTerm(qdot, True)


@dataclass(frozen=True)
class F3BGains:
    """Feedback gains plus the derivative-stage coefficient.

    ``deriv_filter`` is, by default, the coefficient of the discrete filtered
    derivative (``d_k = c * d_{k-1} + (1 - c) * raw``).  Setting
    ``filter_mode = "dff"`` reinterprets it as a scaling on the first
    derivative of the feedforward signal instead.
    """

    kp: float = 3.0
    kd: float = 0.1
    deriv_filter: float = -0.3
    filter_mode: str = "filter"    # "filter" | "dff"
    ff_enabled: bool = True


@dataclass
class F3BState:
    """Gains plus the bounded history the discrete loop needs."""

    arm: ArmModel
    gains: F3BGains
    err_prev: Optional[np.ndarray] = None
    deriv_prev: Optional[np.ndarray] = None
    ff_prev: Optional[np.ndarray] = None
    ff_damped: bool = False


def f3b_step(state: F3BState, q_des: np.ndarray, q_cur: np.ndarray,
             induced: np.ndarray, dt: float) -> np.ndarray:
    """One arm-control tick: feedforward compensation plus error feedback.

    The feedforward cancels the base-induced EE motion (minus the Jacobian
    image of the induced twist); the feedback is a filtered-derivative PD on
    the joint error.  The sum is saturated to the joint rate limits.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    g = state.gains
    # Plain difference: joints are limit-bounded, so the error must drive
    # through the interior, never "the short way" across the +-pi seam.
    err = np.asarray(q_des, float) - np.asarray(q_cur, float)
    if state.err_prev is None:
        raw = np.zeros_like(err)
        d_prev = np.zeros_like(err)
        ff_prev = np.zeros(state.arm.dof)
    else:
        raw = (err - state.err_prev) / dt
        d_prev = state.deriv_prev
        ff_prev = state.ff_prev

    ff = np.zeros(state.arm.dof)
    state.ff_damped = False
    if g.ff_enabled:
        qdot_ind, state.ff_damped = feedforward_term(state.arm, q_cur, induced)
        if g.filter_mode == "dff":
            ff = -(qdot_ind + g.deriv_filter * (qdot_ind - ff_prev) / dt)
        else:
            ff = -qdot_ind
        state.ff_prev = qdot_ind
    else:
        state.ff_prev = np.zeros(state.arm.dof)

    if g.filter_mode == "dff":
        deriv = raw
    else:
        deriv = g.deriv_filter * d_prev + (1.0 - g.deriv_filter) * raw
    u = g.kp * err + g.kd * deriv + ff
    state.err_prev = err
    state.deriv_prev = deriv
    return np.clip(u, -state.arm.qdot_max, state.arm.qdot_max)


# --- isolated holistic controller ------------------------------------------------


class IkDivergence(RuntimeError):
    pass


def solve_ik_local(arm: ArmModel, T_base: np.ndarray, target: EePose, q_seed: np.ndarray,
                   max_iters: int = 100, tol: float = 1e-10,
                   damping: float = 1e-4) -> np.ndarray:
    """Damped least-squares IK toward a global EE pose, seeded locally."""
    T_target = invert_transform(T_base) @ target.matrix()
    p_t, R_t = T_target[:3, 3], T_target[:3, :3]
    q = np.asarray(q_seed, dtype=float).copy()
    lam2 = damping * damping
    for _ in range(max_iters):
        T = chain_pose(arm, q)
        err = np.concatenate([p_t - T[:3, 3], rotation_log(R_t @ T[:3, :3].T)])
        if np.linalg.norm(err) < tol:
            return arm.clip_to_limits(q)
        J = jacobian_ee_in_base(arm, arm.clip_to_limits(q))
        dq = np.linalg.solve(J.T @ J + lam2 * np.eye(arm.dof), J.T @ err)
        step = float(np.max(np.abs(dq)))
        if step > 0.3:
            dq *= 0.3 / step
        # No angle wrapping: tracking must stay on the seeded branch and
        # respect the joint limits rather than teleport across the seam.
        q = arm.clip_to_limits(q + dq)
    raise IkDivergence("local IK did not converge")


@dataclass
class IhcController:
    """Tracks a coordinated plan: base MPC at a slow rate, arm F3B at a fast one.

    The reference waypoint index follows the base's arc-length progress; the
    desired joint configuration re-solves IK each tick from the *current*
    (possibly disturbed) base transform, seeded at the planned configuration.

    ``drive_points`` / ``ref_arcs`` let the base track a unicycle-feasible
    polyline while the arm references walk a denser plan: interpolated
    transitions recover base poses that demand lateral motion a tracked
    chassis cannot execute, so those waypoints are parameterized by arc
    position on the drivable path instead of being driven to literally.
    """

    arm: ArmModel
    plan_states: Sequence[PathState]
    plan_joints: Sequence[np.ndarray]
    mpc: MpcConfig
    gains: F3BGains
    base_period: int = 5          # arm ticks per base update
    drive_points: Optional[np.ndarray] = None
    ref_arcs: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.plan_states:
            raise ValueError("empty plan")
        if self.drive_points is None:
            self._base_pts = np.array([[s.base.x, s.base.y] for s in self.plan_states])
        else:
            self._base_pts = np.asarray(self.drive_points, dtype=float)
        self._path = _RefPath(self._base_pts)
        # Arc position of every plan waypoint along the drivable path.
        if self.ref_arcs is None:
            self._wp_s = np.array([self._path.project(np.array([s.base.x, s.base.y]))
                                   for s in self.plan_states])
        else:
            self._wp_s = np.asarray(self.ref_arcs, dtype=float)
        self._f3b = F3BState(self.arm, self.gains)
        self._tick = 0
        self._last_base = BaseCommand()
        self._last_cmd: Optional[ControlCommand] = None
        self._progress: Optional[float] = None
        self.ik_failed = False
        self.last_ref_index = 0

    def reference_index(self, base_xy: np.ndarray) -> int:
        s = self._path.project(np.asarray(base_xy, dtype=float), s_hint=self._progress)
        if self._progress is not None:
            s = max(s, self._progress)   # progress along the plan is monotone
        self._progress = s
        return int(np.searchsorted(self._wp_s, s, side="left").clip(0, len(self.plan_states) - 1))

    def step(self, T_base: np.ndarray, base_pose: BasePose, q_cur: np.ndarray,
             base_twist: BaseCommand, dt: float) -> ControlCommand:
        """Compute one command from the current robot state.

        ``T_base`` is the full (possibly disturbed) base transform used for
        the IK retarget; ``base_pose`` its planar projection for the MPC;
        ``base_twist`` the current planar base twist for the feedforward.
        """
        r = self.reference_index(np.array([base_pose.x, base_pose.y]))
        self.last_ref_index = r
        ee_ref = self.plan_states[r].ee
        q_ref = self.plan_joints[r]
        if self._tick % self.base_period == 0:
            self._last_base = base_mpc_step(self._base_pts, base_pose, self.mpc,
                                            s_hint=self._progress)
        self._tick += 1
        try:
            q_des = solve_ik_local(self.arm, T_base, ee_ref, q_ref)
            self.ik_failed = False
        except IkDivergence:
            self.ik_failed = True
            if self._last_cmd is not None:
                return self._last_cmd
            q_des = np.asarray(q_ref, dtype=float)
        T = chain_pose(self.arm, q_cur)
        induced = induced_ee_velocity(base_twist, EePose.from_matrix(T))
        qdot = f3b_step(self._f3b, q_des, q_cur, induced, dt)
        cmd = ControlCommand(qdot, self._last_base)
        self._last_cmd = cmd
        return cmd
