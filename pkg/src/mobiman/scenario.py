"""Scenario files: a line-oriented structured-text format plus builders.

Grammar (documented in the README):

- ``# ...`` comments and blank lines are ignored;
- ``[section]`` opens one of the known sections;
- ``key = value`` assigns inside the current section; a value is a scalar
  (int / float / bool / string) or a whitespace-separated row of numbers;
- repeatable keys (``box``, ``cylinder``, ``point``, ``viewpoint``,
  ``bump``) may appear multiple times and accumulate rows.

Unknown sections or keys are rejected by name; missing optional keys take
the documented defaults.  A parsed scenario serializes back to text that
re-parses to an identical structure.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .avoidance import ClearanceThresholds
from .control import F3BGains, MpcConfig
from .costs import CostWeights
from .esdf import VoxelGrid, add_box, add_cylinder, build_esdf, load_voxels
from .interpolation import InterpolationParams
from .kinematics import ArmModel, BasePose, EePose, ik_enumerate, arm_points_global
from .optimizer import SolveOptions
from .sim import PoseTarget, TaskSpec, Terrain


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ArmSpec:
    l2: float
    l3: float
    h_b: float
    d6: float = 0.0
    mount_x: float = 0.0
    mount_y: float = 0.0
    mount_yaw: float = 0.0
    joint_limit: float = float(np.pi)
    qdot_max: float = 2.0


@dataclass(frozen=True)
class BasePathSpec:
    type: str = "line"
    start: tuple = (0.0, 0.0)
    end: tuple = (1.0, 0.0)
    center: tuple = (0.0, 0.0)
    radius: float = 1.0
    span: float = float(2.0 * np.pi)
    start_angle: float = 0.0
    points: tuple = ()
    step_size: float = 0.1


@dataclass(frozen=True)
class InitialConfigSpec:
    mode: str = "elbow-up"
    q: Optional[tuple] = None
    nominal_ee: Optional[tuple] = None


@dataclass(frozen=True)
class EsdfSpec:
    source: str = "procedural"
    file: str = ""
    resolution: float = 0.05
    origin: tuple = (-1.0, -1.0, 0.0)
    dims: tuple = (40, 40, 20)
    max_dist: float = 5.0
    boxes: tuple = ()
    cylinders: tuple = ()


@dataclass(frozen=True)
class ThresholdSpec:
    ee: float = 0.05
    base: float = 0.2
    arm: float = 0.1
    workspace_radius: float = 0.85
    jump_threshold: float = 3.0
    insert_count: int = 7
    m_per_segment: int = 6
    base_clearance_height: float = 0.2


@dataclass(frozen=True)
class SolverSpec:
    max_inner: int = 100
    max_outer: int = 10
    cost_tol: float = 1e-8
    grad_tol: float = 1e-8
    init_damping: float = 1e-3


@dataclass(frozen=True)
class ControlSpec:
    kp: float = 3.0
    kd: float = 0.1
    deriv_filter: float = -0.3
    filter_mode: str = "filter"
    ff: bool = True
    arm_rate: float = 100.0
    base_rate: float = 20.0
    mpc_horizon: int = 20
    mpc_dt: float = 0.05
    w_cross: float = 10.0
    w_heading: float = 1.0
    w_effort: float = 0.1


@dataclass(frozen=True)
class LimitSpec:
    v_max: float = 0.3
    omega_max: float = 0.5
    v_ref: float = 0.25


@dataclass(frozen=True)
class TaskSpecConfig:
    kind: str = "none"
    grasp_pose: Optional[tuple] = None
    window: Optional[tuple] = None
    pos_tol: float = 0.02
    rot_tol: float = 0.05
    dwell: float = 0.3
    viewpoints: tuple = ()
    max_rot_dev: float = 0.2


@dataclass(frozen=True)
class TerrainSpec:
    bumps: tuple = ()
    noise_z: float = 0.0
    noise_rot: float = 0.0
    cutoff: float = 2.0
    max_z: float = 0.05
    max_roll: float = 0.15
    max_pitch: float = 0.15


@dataclass(frozen=True)
class SimSpec:
    duration: float = 0.0          # 0 -> derived from path length and v_ref
    extra_time: float = 2.0
    track_width: float = 0.4
    track_length: float = 0.5


@dataclass(frozen=True)
class BaseMotionSpec:
    type: str = "path"
    amplitude: float = 0.2
    period: float = 10.0
    duration: float = 15.0


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    seed: int = 0
    arm: ArmSpec = ArmSpec(0.425, 0.392, 0.4)
    base_path: BasePathSpec = BasePathSpec()
    initial_config: InitialConfigSpec = InitialConfigSpec()
    esdf: EsdfSpec = EsdfSpec()
    weights: CostWeights = CostWeights()
    thresholds: ThresholdSpec = ThresholdSpec()
    solver: SolverSpec = SolverSpec()
    control: ControlSpec = ControlSpec()
    limits: LimitSpec = LimitSpec()
    task: TaskSpecConfig = TaskSpecConfig()
    terrain: TerrainSpec = TerrainSpec()
    sim: SimSpec = SimSpec()
    base_motion: BaseMotionSpec = BaseMotionSpec()


# --- schema -------------------------------------------------------------------

_ROW = "row"      # tuple of floats
_ROWS = "rows"    # repeatable rows
_SCHEMA = {
    "scenario": {"name": str, "seed": int},
    "arm": {"l2": float, "l3": float, "h_b": float, "d6": float, "mount_x": float,
            "mount_y": float, "mount_yaw": float, "joint_limit": float, "qdot_max": float},
    "base_path": {"type": str, "start": _ROW, "end": _ROW, "center": _ROW,
                  "radius": float, "span": float, "start_angle": float,
                  "point": _ROWS, "step_size": float},
    "initial_config": {"mode": str, "q": _ROW, "nominal_ee": _ROW},
    "esdf": {"source": str, "file": str, "resolution": float, "origin": _ROW,
             "dims": _ROW, "max_dist": float, "box": _ROWS, "cylinder": _ROWS},
    "weights": {"ee_accel": float, "ee_curv": float, "workspace": float,
                "base_heading": float, "manip": float, "obstacle_pos": float,
                "obstacle_vel": float},
    "thresholds": {"ee": float, "base": float, "arm": float, "workspace_radius": float,
                   "jump_threshold": float, "insert_count": int, "m_per_segment": int,
                   "base_clearance_height": float},
    "solver": {"max_inner": int, "max_outer": int, "cost_tol": float,
               "grad_tol": float, "init_damping": float},
    "control": {"kp": float, "kd": float, "deriv_filter": float, "filter_mode": str,
                "ff": bool, "arm_rate": float, "base_rate": float, "mpc_horizon": int,
                "mpc_dt": float, "w_cross": float, "w_heading": float, "w_effort": float},
    "limits": {"v_max": float, "omega_max": float, "v_ref": float},
    "task": {"kind": str, "grasp_pose": _ROW, "window": _ROW, "pos_tol": float,
             "rot_tol": float, "dwell": float, "viewpoint": _ROWS, "max_rot_dev": float},
    "terrain": {"bump": _ROWS, "noise_z": float, "noise_rot": float, "cutoff": float,
                "max_z": float, "max_roll": float, "max_pitch": float},
    "sim": {"duration": float, "extra_time": float, "track_width": float,
            "track_length": float},
    "base_motion": {"type": str, "amplitude": float, "period": float, "duration": float},
}

_REPEATABLE_TO_FIELD = {"point": "points", "box": "boxes", "cylinder": "cylinders",
                        "viewpoint": "viewpoints", "bump": "bumps"}


def _parse_scalar(raw: str, typ, where: str):
    raw = raw.strip()
    try:
        if typ is bool:
            if raw.lower() in ("true", "on", "yes", "1"):
                return True
            if raw.lower() in ("false", "off", "no", "0"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ScenarioError(f"{where}: cannot parse {raw!r} as {typ.__name__}") from exc


def _parse_row(raw: str, where: str) -> tuple:
    try:
        return tuple(float(v) for v in raw.split())
    except ValueError as exc:
        raise ScenarioError(f"{where}: expected a row of numbers, got {raw!r}") from exc


def parse_scenario_text(text: str, source: str = "<string>") -> Scenario:
    sections: dict[str, dict] = {}
    current: Optional[str] = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        where = f"{source}:{lineno}"
        if stripped.startswith("[") and stripped.endswith("]"):
            name = stripped[1:-1].strip()
            if name not in _SCHEMA:
                raise ScenarioError(f"{where}: unknown section [{name}]")
            current = name
            sections.setdefault(name, {})
            continue
        if "=" not in stripped:
            raise ScenarioError(f"{where}: expected 'key = value'")
        if current is None:
            raise ScenarioError(f"{where}: key before any [section]")
        key, raw = (p.strip() for p in stripped.split("=", 1))
        schema = _SCHEMA[current]
        if key not in schema:
            raise ScenarioError(f"{where}: unknown key '{key}' in [{current}]")
        typ = schema[key]
        if typ == _ROWS:
            sections[current].setdefault(key, []).append(_parse_row(raw, where))
        elif typ == _ROW:
            if key in sections[current]:
                raise ScenarioError(f"{where}: duplicate key '{key}'")
            sections[current][key] = _parse_row(raw, where)
        else:
            if key in sections[current]:
                raise ScenarioError(f"{where}: duplicate key '{key}'")
            sections[current][key] = _parse_scalar(raw, typ, where)
    return _assemble(sections, source)


def _pick(sections, section, key, default):
    return sections.get(section, {}).get(key, default)


def _assemble(sections: dict, source: str) -> Scenario:
    if "arm" not in sections:
        raise ScenarioError(f"{source}: missing required section [arm]")
    for req in ("l2", "l3", "h_b"):
        if req not in sections["arm"]:
            raise ScenarioError(f"{source}: [arm] is missing required key '{req}'")

    def build(cls, section: str, rename: dict = {}):
        kwargs = {}
        data = dict(sections.get(section, {}))
        for raw_key, field_name in rename.items():
            if raw_key in data:
                kwargs[field_name] = tuple(tuple(r) for r in data.pop(raw_key))
        for f in fields(cls):
            if f.name in kwargs:
                continue
            if f.name in data:
                v = data[f.name]
                kwargs[f.name] = tuple(v) if isinstance(v, (list, tuple)) and not isinstance(v, str) else v
        return cls(**kwargs)

    sc = Scenario(
        name=str(_pick(sections, "scenario", "name", "scenario")),
        seed=int(_pick(sections, "scenario", "seed", 0)),
        arm=build(ArmSpec, "arm"),
        base_path=build(BasePathSpec, "base_path", {"point": "points"}),
        initial_config=build(InitialConfigSpec, "initial_config"),
        esdf=build(EsdfSpec, "esdf", {"box": "boxes", "cylinder": "cylinders"}),
        weights=build(CostWeights, "weights"),
        thresholds=build(ThresholdSpec, "thresholds"),
        solver=build(SolverSpec, "solver"),
        control=build(ControlSpec, "control"),
        limits=build(LimitSpec, "limits"),
        task=build(TaskSpecConfig, "task", {"viewpoint": "viewpoints"}),
        terrain=build(TerrainSpec, "terrain", {"bump": "bumps"}),
        sim=build(SimSpec, "sim"),
        base_motion=build(BaseMotionSpec, "base_motion"),
    )
    _validate(sc, source)
    return sc


def _validate(sc: Scenario, source: str) -> None:
    def bad(msg):
        raise ScenarioError(f"{source}: {msg}")

    if sc.base_path.step_size <= 0.0:
        bad("step_size must be positive")
    if sc.arm.l2 <= 0 or sc.arm.l3 <= 0:
        bad("arm link lengths l2/l3 must be positive")
    if sc.base_path.type not in ("line", "circle", "points"):
        bad(f"base_path type {sc.base_path.type!r} not one of line/circle/points")
    if sc.base_path.type == "points" and len(sc.base_path.points) < 2:
        bad("base_path type 'points' needs at least two point rows")
    if sc.initial_config.mode not in ("elbow-up", "elbow-down", "explicit"):
        bad(f"initial_config mode {sc.initial_config.mode!r} unknown")
    if sc.initial_config.mode == "explicit" and sc.initial_config.q is None:
        bad("initial_config mode 'explicit' needs a q row")
    if sc.initial_config.mode != "explicit" and sc.initial_config.nominal_ee is None:
        bad("initial_config needs nominal_ee for elbow branch selection")
    if sc.esdf.source not in ("procedural", "file"):
        bad(f"esdf source {sc.esdf.source!r} not one of procedural/file")
    if sc.esdf.source == "file" and not sc.esdf.file:
        bad("esdf source 'file' needs a file path")
    if sc.task.kind not in ("none", "grasp", "hold", "inspect", "transport"):
        bad(f"task kind {sc.task.kind!r} unknown")
    if sc.task.kind in ("grasp", "hold") and sc.task.grasp_pose is None:
        bad(f"task kind {sc.task.kind!r} needs grasp_pose")
    if sc.task.kind == "grasp" and (sc.task.window is None or len(sc.task.window) != 2):
        bad("task kind 'grasp' needs window = s t")
    if sc.task.kind == "inspect" and not sc.task.viewpoints:
        bad("task kind 'inspect' needs viewpoint rows")
    if sc.base_motion.type not in ("path", "swing"):
        bad(f"base_motion type {sc.base_motion.type!r} not one of path/swing")
    if sc.control.filter_mode not in ("filter", "dff"):
        bad(f"control filter_mode {sc.control.filter_mode!r} not one of filter/dff")


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    sc = parse_scenario_text(text, str(path))
    if sc.esdf.source == "file":
        f = Path(sc.esdf.file)
        if not f.is_absolute():
            f = path.parent / f
        if not f.exists():
            raise ScenarioError(f"{path}: esdf file {f} does not exist")
    return sc


# --- serialization ---------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_scenario(sc: Scenario) -> str:
    """Canonical text form; parsing it reproduces an identical Scenario."""
    out = [f"[scenario]", f"name = {sc.name}", f"seed = {sc.seed}", ""]

    def emit(section: str, spec, rename: dict = {}):
        out.append(f"[{section}]")
        for f in fields(spec):
            v = getattr(spec, f.name)
            if v is None:
                continue
            key = rename.get(f.name, f.name)
            if f.name in rename and isinstance(v, tuple):
                for row in v:
                    out.append(f"{key} = " + " ".join(_fmt(x) for x in row))
            elif isinstance(v, tuple):
                out.append(f"{f.name} = " + " ".join(_fmt(x) for x in v))
            else:
                out.append(f"{f.name} = {_fmt(v)}")
        out.append("")

    emit("arm", sc.arm)
    emit("base_path", sc.base_path, {"points": "point"})
    emit("initial_config", sc.initial_config)
    emit("esdf", sc.esdf, {"boxes": "box", "cylinders": "cylinder"})
    emit("weights", sc.weights)
    emit("thresholds", sc.thresholds)
    emit("solver", sc.solver)
    emit("control", sc.control)
    emit("limits", sc.limits)
    emit("task", sc.task, {"viewpoints": "viewpoint"})
    emit("terrain", sc.terrain, {"bumps": "bump"})
    emit("sim", sc.sim)
    emit("base_motion", sc.base_motion)
    return "\n".join(out)


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(serialize_scenario(sc), encoding="utf-8")


# --- builders: scenario -> domain objects ----------------------------------------


def build_arm(sc: Scenario) -> ArmModel:
    a = sc.arm
    lim = abs(a.joint_limit)
    return ArmModel(l2=a.l2, l3=a.l3, h_b=a.h_b, d6=a.d6, mount_x=a.mount_x,
                    mount_y=a.mount_y, mount_yaw=a.mount_yaw,
                    q_min=np.full(6, -lim), q_max=np.full(6, lim),
                    qdot_max=np.full(6, a.qdot_max))


def build_base_path(sc: Scenario) -> list[BasePose]:
    """Resample the declared path at the step size, yaw along the tangent."""
    bp = sc.base_path
    if bp.type == "circle":
        n = max(int(np.ceil(abs(bp.span) * bp.radius / bp.step_size)), 2)
        angles = bp.start_angle + np.linspace(0.0, bp.span, n + 1)
        poses = []
        for ang in angles:
            x = bp.center[0] + bp.radius * np.cos(ang)
            y = bp.center[1] + bp.radius * np.sin(ang)
            poses.append(BasePose(x, y, ang + np.sign(bp.span) * np.pi / 2.0))
        return poses
    pts = np.asarray(bp.points if bp.type == "points" else [bp.start, bp.end], dtype=float)
    seg = np.diff(pts, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    total = float(seg_len.sum())
    if total <= 0.0:
        raise ScenarioError("base path has zero length")
    n = max(int(np.ceil(total / bp.step_size)), 1)
    s_samples = np.linspace(0.0, total, n + 1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    poses = []
    for s in s_samples:
        i = min(int(np.searchsorted(cum[1:], s, side="right")), len(seg) - 1)
        t = 0.0 if seg_len[i] == 0 else (s - cum[i]) / seg_len[i]
        p = pts[i] + t * seg[i]
        yaw = float(np.arctan2(seg[i][1], seg[i][0]))
        poses.append(BasePose(p[0], p[1], yaw))
    return poses


def initial_joint_config(sc: Scenario, arm: ArmModel) -> np.ndarray:
    """Posture for the uniform initial joint path, by elbow branch."""
    ic = sc.initial_config
    if ic.mode == "explicit":
        q = np.asarray(ic.q, dtype=float)
        arm.require_within_limits(q)
        return q
    origin = BasePose(0.0, 0.0, 0.0)
    target = EePose(np.array(ic.nominal_ee[:3]), np.array(ic.nominal_ee[3:]))
    sols = ik_enumerate(arm, origin, target)
    if not sols:
        raise ScenarioError("nominal_ee pose is unreachable; cannot derive initial posture")
    heights = [arm_points_global(arm, origin, q)[1][2] for q in sols]
    pick = max(heights) if ic.mode == "elbow-up" else min(heights)
    # first branch in canonical order among (near-)ties, so the posture is
    # stable and prefers the shoulder-forward variant
    for q, h in zip(sols, heights):
        if abs(h - pick) < 1e-9:
            return np.array(q)
    raise AssertionError("unreachable")


def build_voxel_grid(sc: Scenario, base_dir: Optional[Path] = None) -> VoxelGrid:
    e = sc.esdf
    if e.source == "file":
        f = Path(e.file)
        if base_dir is not None and not f.is_absolute():
            f = base_dir / f
        return load_voxels(f)
    grid = VoxelGrid.empty(np.array(e.origin), e.resolution,
                           tuple(int(d) for d in e.dims))
    for row in e.boxes:
        grid = add_box(grid, row[:3], row[3:6])
    for row in e.cylinders:
        grid = add_cylinder(grid, row[:2], row[2], row[3], row[4])
    return grid


def build_esdf_grid(sc: Scenario, base_dir: Optional[Path] = None):
    return build_esdf(build_voxel_grid(sc, base_dir), sc.esdf.max_dist)


def build_terrain(sc: Scenario) -> Terrain:
    t = sc.terrain
    return Terrain(bumps=tuple(tuple(b) for b in t.bumps), noise_z=t.noise_z,
                   noise_rot=t.noise_rot, noise_cutoff_hz=t.cutoff,
                   max_z=t.max_z, max_roll=t.max_roll, max_pitch=t.max_pitch)


def build_task(sc: Scenario) -> Optional[TaskSpec]:
    t = sc.task
    if t.kind == "none":
        return None
    if t.kind in ("grasp", "hold"):
        pose = EePose.canonical(np.array(t.grasp_pose[:3]), np.array(t.grasp_pose[3:]))
        return TaskSpec(t.kind, (PoseTarget(pose, t.pos_tol, t.rot_tol, t.dwell),))
    if t.kind == "inspect":
        targets = tuple(PoseTarget(EePose.canonical(np.array(v[:3]), np.array(v[3:6])),
                                   t.pos_tol, t.rot_tol, t.dwell)
                        for v in t.viewpoints)
        return TaskSpec("inspect", targets)
    return TaskSpec("transport", max_rot_dev=t.max_rot_dev)


def thresholds_of(sc: Scenario) -> ClearanceThresholds:
    th = sc.thresholds
    return ClearanceThresholds(arm=th.arm, base=th.base, ee=th.ee)


def interpolation_params_of(sc: Scenario) -> InterpolationParams:
    return InterpolationParams(sc.thresholds.jump_threshold, sc.thresholds.insert_count)


def solve_options_of(sc: Scenario) -> SolveOptions:
    s = sc.solver
    return SolveOptions(max_inner=s.max_inner, max_outer=s.max_outer,
                        cost_tol=s.cost_tol, grad_tol=s.grad_tol,
                        init_damping=s.init_damping)


def mpc_config_of(sc: Scenario) -> MpcConfig:
    c, lim = sc.control, sc.limits
    return MpcConfig(horizon=c.mpc_horizon, dt=c.mpc_dt, w_cross=c.w_cross,
                     w_heading=c.w_heading, w_effort=c.w_effort, v_ref=lim.v_ref,
                     v_max=lim.v_max, omega_max=lim.omega_max)


def gains_of(sc: Scenario, kp: Optional[float] = None,
             ff: Optional[bool] = None) -> F3BGains:
    c = sc.control
    return F3BGains(kp=c.kp if kp is None else kp, kd=c.kd,
                    deriv_filter=c.deriv_filter, filter_mode=c.filter_mode,
                    ff_enabled=c.ff if ff is None else ff)
