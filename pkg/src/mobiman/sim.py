"""Deterministic kinematic simulator and trajectory metrics.

The chassis follows unicycle kinematics in the plane; its height, roll and
pitch are not integrated but *imposed* each step from the terrain under the
tracks plus low-pass-filtered seeded noise, clipped to declared bounds.
The arm integrates commanded joint rates with saturation.  Everything is a
pure function of (scenario, seed), so repeated runs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .kinematics import ArmModel, BasePose, EePose, ee_pose_from_base_matrix, wrap_angle
from .transforms import make_transform, rotation_angle_between, rpy_to_matrix


@dataclass(frozen=True)
class Terrain:
    """Analytic heightmap (sum of smooth bumps) plus filtered track noise."""

    bumps: tuple = ()              # rows of (cx, cy, amplitude, sigma)
    noise_z: float = 0.0
    noise_rot: float = 0.0
    noise_cutoff_hz: float = 2.0
    max_z: float = 0.05
    max_roll: float = 0.15
    max_pitch: float = 0.15

    def height(self, x: float, y: float) -> float:
        h = 0.0
        for cx, cy, amp, sigma in self.bumps:
            r2 = (x - cx) ** 2 + (y - cy) ** 2
            h += amp * np.exp(-0.5 * r2 / (sigma * sigma))
        return float(h)


FLAT = Terrain()


@dataclass(frozen=True)
class World:
    arm: ArmModel
    terrain: Terrain = FLAT
    track_width: float = 0.4
    track_length: float = 0.5
    v_max: float = 0.3
    omega_max: float = 0.5


@dataclass(frozen=True)
class RobotState:
    base: BasePose
    q: np.ndarray
    lift: np.ndarray = field(default_factory=lambda: np.zeros(3))  # z, roll, pitch
    v_x: float = 0.0
    omega_z: float = 0.0
    qdot: np.ndarray = None
    t: float = 0.0

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).copy()
        q.flags.writeable = False
        object.__setattr__(self, "q", q)
        lift = np.asarray(self.lift, dtype=float).copy()
        lift.flags.writeable = False
        object.__setattr__(self, "lift", lift)
        qd = np.zeros_like(q) if self.qdot is None else np.asarray(self.qdot, dtype=float)
        object.__setattr__(self, "qdot", qd)

    def base_matrix(self) -> np.ndarray:
        z, roll, pitch = self.lift
        return make_transform(rpy_to_matrix(roll, pitch, self.base.yaw),
                              [self.base.x, self.base.y, z])

    def ee_pose(self, arm: ArmModel) -> EePose:
        return ee_pose_from_base_matrix(arm, self.base_matrix(), self.q)


class DisturbanceFilter:
    """First-order low-pass on seeded white noise, one channel per axis."""

    def __init__(self, terrain: Terrain, dt: float, seed: int):
        self.rng = np.random.default_rng(seed)
        self.alpha = float(np.exp(-2.0 * np.pi * terrain.noise_cutoff_hz * dt))
        self.amps = np.array([terrain.noise_z, terrain.noise_rot, terrain.noise_rot])
        self.state = np.zeros(3)

    def sample(self) -> np.ndarray:
        white = self.rng.standard_normal(3)
        self.state = self.alpha * self.state + (1.0 - self.alpha) * white
        return self.state * self.amps


def terrain_lift(world: World, x: float, y: float, yaw: float,
                 noise: np.ndarray) -> np.ndarray:
    """(z, roll, pitch) of the chassis from track contact points plus noise."""
    tr = world.terrain
    c, s = np.cos(yaw), np.sin(yaw)
    half_w, half_l = 0.5 * world.track_width, 0.5 * world.track_length
    left = tr.height(x - s * half_w, y + c * half_w)
    right = tr.height(x + s * half_w, y - c * half_w)
    front = tr.height(x + c * half_l, y + s * half_l)
    rear = tr.height(x - c * half_l, y - s * half_l)
    z = 0.5 * (left + right) + noise[0]
    roll = np.arctan2(left - right, world.track_width) + noise[1]
    pitch = np.arctan2(rear - front, world.track_length) + noise[2]
    return np.array([
        float(np.clip(z, -tr.max_z, tr.max_z)),
        float(np.clip(roll, -tr.max_roll, tr.max_roll)),
        float(np.clip(pitch, -tr.max_pitch, tr.max_pitch)),
    ])


def step(world: World, state: RobotState, qdot_cmd: np.ndarray, v_x: float,
         omega_z: float, dt: float, noise: Optional[np.ndarray] = None) -> RobotState:
    """Advance the robot one tick under saturated commands."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    noise = np.zeros(3) if noise is None else noise
    v = float(np.clip(v_x, -world.v_max, world.v_max))
    w = float(np.clip(omega_z, -world.omega_max, world.omega_max))
    x = state.base.x + v * np.cos(state.base.yaw) * dt
    y = state.base.y + v * np.sin(state.base.yaw) * dt
    yaw = wrap_angle(state.base.yaw + w * dt)
    qdot = np.clip(np.asarray(qdot_cmd, dtype=float),
                   -world.arm.qdot_max, world.arm.qdot_max)
    q = world.arm.clip_to_limits(state.q + qdot * dt)
    lift = terrain_lift(world, x, y, yaw, noise)
    return RobotState(BasePose(x, y, yaw), q, lift, v, w, qdot, state.t + dt)


# --- metrics --------------------------------------------------------------------


@dataclass
class RunMetrics:
    sigma_lin_acc: float = 0.0
    sigma_ang_acc: float = 0.0
    kappa_max: float = 0.0
    p_max: float = 0.0
    v_mean: float = 0.0
    v_max: float = 0.0
    a_mean: float = 0.0
    a_max: float = 0.0
    success: bool = True
    reason: str = ""

    def as_dict(self) -> dict:
        return {
            "sigma_lin_acc": self.sigma_lin_acc,
            "sigma_ang_acc": self.sigma_ang_acc,
            "kappa_max": self.kappa_max,
            "p_max": self.p_max,
            "v_mean": self.v_mean,
            "v_max": self.v_max,
            "a_mean": self.a_mean,
            "a_max": self.a_max,
            "success": self.success,
            "reason": self.reason,
        }


def max_pairwise_distance(points: np.ndarray, chunk: int = 512) -> float:
    pts = np.asarray(points, dtype=float)
    best = 0.0
    for i in range(0, len(pts), chunk):
        blk = pts[i:i + chunk]
        d2 = np.sum((blk[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


def discrete_curvature(points: np.ndarray, min_seg: float = 1e-9) -> np.ndarray:
    """Three-point circumscribed-circle curvature at interior samples."""
    p = np.asarray(points, dtype=float)
    a, b, c = p[:-2], p[1:-1], p[2:]
    ab, bc, ca = b - a, c - b, a - c
    lab = np.linalg.norm(ab, axis=1)
    lbc = np.linalg.norm(bc, axis=1)
    lca = np.linalg.norm(ca, axis=1)
    cross = np.linalg.norm(np.cross(ab, bc), axis=1)
    denom = lab * lbc * lca
    ok = (lab > min_seg) & (lbc > min_seg) & (lca > min_seg)
    kappa = np.zeros(len(denom))
    kappa[ok] = 2.0 * cross[ok] / denom[ok]
    return kappa


def compute_metrics(ee_positions: np.ndarray, ee_rpy: np.ndarray, dt: float) -> RunMetrics:
    """Stability metrics of an EE trajectory sampled at a fixed rate.

    Velocities/accelerations by central differences; angular rates from
    wrapped roll-pitch-yaw differences; the spreads are population standard
    deviations of the acceleration norms.
    """
    pos = np.asarray(ee_positions, dtype=float)
    rpy = np.asarray(ee_rpy, dtype=float)
    if len(pos) < 3:
        raise ValueError("need at least 3 samples")
    v = (pos[2:] - pos[:-2]) / (2.0 * dt)
    a = (pos[2:] - 2.0 * pos[1:-1] + pos[:-2]) / (dt * dt)
    dang = wrap_angle(np.diff(rpy, axis=0))
    aa = (dang[1:] - dang[:-1]) / (dt * dt)
    v_norm = np.linalg.norm(v, axis=1)
    a_norm = np.linalg.norm(a, axis=1)
    aa_norm = np.linalg.norm(aa, axis=1)
    return RunMetrics(
        sigma_lin_acc=float(np.std(a_norm)),
        sigma_ang_acc=float(np.std(aa_norm)),
        kappa_max=float(discrete_curvature(pos).max(initial=0.0)),
        p_max=max_pairwise_distance(pos),
        v_mean=float(v_norm.mean()),
        v_max=float(v_norm.max(initial=0.0)),
        a_mean=float(a_norm.mean()),
        a_max=float(a_norm.max(initial=0.0)),
    )


# --- task evaluation -------------------------------------------------------------


@dataclass(frozen=True)
class PoseTarget:
    pose: EePose
    pos_tol: float = 0.02
    rot_tol: float = 0.05
    dwell: float = 0.3


@dataclass(frozen=True)
class TaskSpec:
    """Declared success criterion of a scenario run.

    kinds: ``grasp`` (hold one pose within the fixed window), ``inspect``
    (hold every viewpoint), ``transport`` (bounded orientation deviation
    throughout), ``hold`` (like grasp without a window restriction).
    """

    kind: str
    targets: tuple = ()            # PoseTarget rows for grasp/inspect
    max_rot_dev: float = 0.2       # transport bound, radians
    ref_rpy: Optional[tuple] = None


@dataclass
class SuccessReport:
    success: bool
    reason: str


def _dwell_satisfied(t: np.ndarray, ok: np.ndarray, dwell: float) -> bool:
    run_start = None
    for i, flag in enumerate(ok):
        if flag and run_start is None:
            run_start = i
        elif not flag and run_start is not None:
            if t[i - 1] - t[run_start] >= dwell:
                return True
            run_start = None
    return run_start is not None and t[len(ok) - 1] - t[run_start] >= dwell


def _target_mask(target: PoseTarget, pos: np.ndarray, rpy: np.ndarray) -> np.ndarray:
    ref_R = target.pose.rotation()
    ok = np.linalg.norm(pos - target.pose.position, axis=1) <= target.pos_tol
    for i in np.nonzero(ok)[0]:
        ang = rotation_angle_between(rpy_to_matrix(*rpy[i]), ref_R)
        if ang > target.rot_tol:
            ok[i] = False
    return ok


def evaluate_task(task: TaskSpec, t: np.ndarray, ee_pos: np.ndarray, ee_rpy: np.ndarray,
                  window_mask: Optional[np.ndarray] = None) -> SuccessReport:
    """Check the declared criterion against a logged EE trajectory."""
    t = np.asarray(t, dtype=float)
    pos = np.asarray(ee_pos, dtype=float)
    rpy = np.asarray(ee_rpy, dtype=float)
    if task.kind in ("grasp", "hold"):
        target = task.targets[0]
        ok = _target_mask(target, pos, rpy)
        if task.kind == "grasp" and window_mask is not None:
            ok &= np.asarray(window_mask, dtype=bool)
        if not ok.any():
            return SuccessReport(False, "pose never reached")
        if not _dwell_satisfied(t, ok, target.dwell):
            return SuccessReport(False, f"dwell shorter than {target.dwell} s")
        return SuccessReport(True, "pose held")
    if task.kind == "inspect":
        for vi, target in enumerate(task.targets):
            ok = _target_mask(target, pos, rpy)
            if not ok.any():
                return SuccessReport(False, f"viewpoint {vi} never reached")
            if not _dwell_satisfied(t, ok, target.dwell):
                return SuccessReport(False, f"viewpoint {vi} dwell too short")
        return SuccessReport(True, "all viewpoints held")
    if task.kind == "transport":
        ref = rpy_to_matrix(*(task.ref_rpy if task.ref_rpy is not None else rpy[0]))
        devs = np.array([rotation_angle_between(rpy_to_matrix(*r), ref) for r in rpy])
        worst = float(devs.max(initial=0.0))
        if worst > task.max_rot_dev:
            return SuccessReport(False, f"orientation deviated {worst:.3f} rad")
        return SuccessReport(True, "orientation held")
    raise ValueError(f"unknown task kind {task.kind!r}")
