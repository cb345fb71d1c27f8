"""End-to-end orchestration: FK init, avoidance, optimization, interpolation
and the tracked simulation, with run-directory artifacts.

A run directory contains a manifest (config snapshot, seed, version), the
planned path, the executed trajectory CSV, a metrics report with an embedded
machine-readable block, and self-contained SVG plots.  Any stage failure
leaves partial outputs plus a FAILED marker naming the stage.
"""

from __future__ import annotations

import json
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .avoidance import AvoidanceOutcome, run_avoidance, verify_joint_path
from .control import BaseCommand, F3BState, IhcController, f3b_step, solve_ik_local, IkDivergence
from .costs import obstacle_terms, smoothness_and_constraint_terms, with_raw_displacements
from .esdf import save_esdf
from .interpolation import run_interpolation
from .kinematics import BasePose, EePose, PathState, forward_kinematics, ik_enumerate, wrap_angle
from .optimizer import SolveReport, fix_ee_window, make_problem, solve
from .scenario import (
    Scenario,
    build_arm,
    build_base_path,
    build_esdf_grid,
    build_task,
    build_terrain,
    gains_of,
    initial_joint_config,
    interpolation_params_of,
    mpc_config_of,
    serialize_scenario,
    solve_options_of,
    thresholds_of,
)
from .sim import (
    DisturbanceFilter,
    RobotState,
    World,
    compute_metrics,
    evaluate_task,
    step,
)
from .svgplot import line_plot, project_iso

TRAJECTORY_COLUMNS = ("t", "base_x", "base_y", "base_yaw", "base_z", "base_roll",
                      "base_pitch", "q1", "q2", "q3", "q4", "q5", "q6",
                      "ee_x", "ee_y", "ee_z", "ee_R", "ee_P", "ee_Y")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PlanResult:
    states: list[PathState]
    joints: list[np.ndarray]
    solve_report: Optional[SolveReport]
    avoidance_passes: list[AvoidanceOutcome] = field(default_factory=list)
    fixed_windows: list[tuple[int, int]] = field(default_factory=list)
    repair_rounds: int = 0
    # original waypoint index -> index in the (possibly densified) final path
    index_map: Optional[list[int]] = None
    post_interpolation_violations: list[int] = field(default_factory=list)

    def refined_window(self, s: int, t: int) -> tuple[int, int]:
        if self.index_map is None:
            return s, t
        return self.index_map[s], self.index_map[t]


@dataclass
class SimLog:
    t: np.ndarray
    base: np.ndarray          # (n, 6): x y yaw z roll pitch
    q: np.ndarray             # (n, k)
    ee_pos: np.ndarray        # (n, 3)
    ee_rpy: np.ndarray        # (n, 3)
    ref_index: np.ndarray     # (n,)
    dt: float


@dataclass
class RunResult:
    out_dir: Path
    success: bool
    failed_stage: str = ""
    plan: Optional[PlanResult] = None
    log: Optional[SimLog] = None
    metrics: Optional[dict] = None


# --- planning ---------------------------------------------------------------------


def _fixed_windows(sc: Scenario) -> list[tuple[int, int, EePose]]:
    wins = []
    t = sc.task
    if t.kind == "grasp" and t.window is not None:
        pose = EePose.canonical(np.array(t.grasp_pose[:3]), np.array(t.grasp_pose[3:]))
        wins.append((int(t.window[0]), int(t.window[1]), pose))
    if t.kind == "inspect":
        for row in t.viewpoints:
            pose = EePose.canonical(np.array(row[:3]), np.array(row[3:6]))
            wins.append((int(row[6]), int(row[7]), pose))
    return wins


def _rederive_joints(states: Sequence[PathState], joints: Sequence[np.ndarray], arm):
    """Nearest-branch IK after the optimizer moved the coordinated states.

    Staying closest to each waypoint's previous configuration preserves the
    branch assignments the avoidance pass chose.
    """
    out = []
    for st, q_old in zip(states, joints):
        q_old = np.asarray(q_old, dtype=float)
        sols = ik_enumerate(arm, st.base, st.ee)
        if sols:
            # plain difference: joint travel, not angular distance modulo 2*pi
            q = np.array(min(sols, key=lambda s: float(np.max(np.abs(s - q_old)))))
        else:
            try:
                q = solve_ik_local(arm, st.base.matrix(), st.ee, q_old)
            except IkDivergence:
                q = q_old
        out.append(q)
    return out


def plan_scenario(sc: Scenario, base_dir: Optional[Path] = None,
                  strict_alg1: bool = False, raw_displacement: bool = False,
                  max_repair_rounds: int = 3) -> PlanResult:
    """Avoidance, optimization and the repair loop, before interpolation."""
    arm = build_arm(sc)
    esdf = build_esdf_grid(sc, base_dir)
    base_path = build_base_path(sc)
    q0 = initial_joint_config(sc, arm)
    states = [PathState(forward_kinematics(arm, b, q0), b) for b in base_path]
    joints = [np.array(q0) for _ in base_path]
    n = len(states)
    th = thresholds_of(sc)
    windows = [(s, t) for s, t, _ in _fixed_windows(sc) if s < n]
    exempt = frozenset(i for s, t, _ in _fixed_windows(sc) for i in range(s, min(t, n - 1) + 1))

    result = PlanResult(states, joints, None, fixed_windows=windows)
    outcome = run_avoidance(states, joints, arm, esdf, th,
                            m_per_segment=sc.thresholds.m_per_segment,
                            base_height=sc.thresholds.base_clearance_height,
                            stop_at_first_violation=strict_alg1, ee_exempt=exempt,
                            consistency_tol=0.35)
    result.avoidance_passes.append(outcome)
    joints = outcome.joint_path
    marked = set(outcome.marked_indices)

    for round_idx in range(max_repair_rounds + 1):
        terms = smoothness_and_constraint_terms(n, arm, sc.weights, _plan_timestep(sc),
                                                sc.thresholds.workspace_radius)
        terms += obstacle_terms(sorted(marked), n, esdf, sc.weights,
                                sc.thresholds.base_clearance_height)
        if raw_displacement:
            terms = with_raw_displacements(terms)
        problem = make_problem(states, terms, timestep=_plan_timestep(sc))
        problem.fixed_base[0] = True
        for s, t, pose in _fixed_windows(sc):
            if s < n:
                t_c = min(t, n - 1)
                problem = fix_ee_window(problem, pose, (s, t_c))
                # Anchor the base through the window: the hold must span real
                # path length, otherwise the free base bunches at the most
                # comfortable stance and the "base keeps moving" semantics
                # (and the dwell time) collapse.
                problem.fixed_base[s:t_c + 1] = True
        states, report = solve(problem, solve_options_of(sc))
        result.solve_report = report
        joints = _rederive_joints(states, joints, arm)
        outcome = run_avoidance(states, joints, arm, esdf, th,
                                m_per_segment=sc.thresholds.m_per_segment,
                                base_height=sc.thresholds.base_clearance_height,
                                stop_at_first_violation=strict_alg1, ee_exempt=exempt,
                                consistency_tol=0.35)
        result.avoidance_passes.append(outcome)
        joints = outcome.joint_path
        new_marked = set(outcome.marked_indices)
        result.repair_rounds = round_idx
        if not new_marked or new_marked == marked:
            break
        marked |= new_marked

    result.states = list(states)
    result.joints = list(joints)
    return result


def _plan_timestep(sc: Scenario) -> float:
    return sc.base_path.step_size / max(sc.limits.v_ref, 1e-6)


def interpolate_plan(sc: Scenario, plan: PlanResult, base_dir: Optional[Path] = None,
                     strict_alg1: bool = False) -> PlanResult:
    """Densify configuration jumps, then re-check clearances once.

    The recheck verifies only: reselecting branches on the interpolated path
    would reintroduce the jumps that were just smoothed away.
    """
    arm = build_arm(sc)
    esdf = build_esdf_grid(sc, base_dir)
    params = interpolation_params_of(sc)
    states, joints = run_interpolation(plan.states, plan.joints, arm, params)
    # Original waypoints are reused by identity, so the index map is a scan.
    positions = {id(s): i for i, s in enumerate(states)}
    plan.index_map = [positions[id(s)] for s in plan.states]
    exempt = frozenset()
    if plan.fixed_windows and plan.index_map:
        exempt = frozenset(i for s, t in plan.fixed_windows
                           for i in range(plan.index_map[s],
                                          plan.index_map[min(t, len(plan.index_map) - 1)] + 1))
    plan.post_interpolation_violations = verify_joint_path(
        states, joints, arm, esdf, thresholds_of(sc),
        m_per_segment=sc.thresholds.m_per_segment,
        base_height=sc.thresholds.base_clearance_height, ee_exempt=exempt)
    plan.states = list(states)
    plan.joints = list(joints)
    return plan


# --- simulation -------------------------------------------------------------------


def _world_of(sc: Scenario, arm) -> World:
    return World(arm=arm, terrain=build_terrain(sc), track_width=sc.sim.track_width,
                 track_length=sc.sim.track_length, v_max=sc.limits.v_max,
                 omega_max=sc.limits.omega_max)


def _path_length(states: Sequence[PathState]) -> float:
    pts = np.array([[s.base.x, s.base.y] for s in states])
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def _drive_parameterization(plan: PlanResult):
    """Drivable base polyline plus each plan waypoint's arc position on it.

    Interpolated transitions recover base poses that would require lateral
    chassis motion; the MPC tracks the pre-interpolation polyline instead,
    with inserted waypoints spread uniformly (in arc length) across their
    host segment so the arm plays the transition while the base covers it.
    """
    if not plan.index_map:
        return None, None
    originals = plan.index_map
    pts = np.array([[plan.states[j].base.x, plan.states[j].base.y] for j in originals])
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    arcs_orig = np.concatenate([[0.0], np.cumsum(seg)])
    ref_arcs = np.empty(len(plan.states))
    for k in range(len(originals) - 1):
        a, b = originals[k], originals[k + 1]
        ref_arcs[a:b + 1] = np.linspace(arcs_orig[k], arcs_orig[k + 1], b - a + 1)
    ref_arcs[originals[-1]:] = arcs_orig[-1]
    return pts, ref_arcs


def simulate_plan(sc: Scenario, plan: PlanResult, seed: int) -> SimLog:
    """Track the plan with the isolated holistic controller."""
    arm = build_arm(sc)
    world = _world_of(sc, arm)
    dt = 1.0 / sc.control.arm_rate
    base_period = max(int(round(sc.control.arm_rate / sc.control.base_rate)), 1)
    drive_pts, ref_arcs = _drive_parameterization(plan)
    controller = IhcController(arm, plan.states, plan.joints, mpc_config_of(sc),
                               gains_of(sc), base_period=base_period,
                               drive_points=drive_pts, ref_arcs=ref_arcs)
    length = controller._path.length
    duration = sc.sim.duration or (length / max(sc.limits.v_ref, 1e-6) + sc.sim.extra_time)
    n_ticks = int(round(duration / dt))
    filt = DisturbanceFilter(world.terrain, dt, seed)
    state = RobotState(plan.states[0].base, plan.joints[0])
    return _run_loop(world, arm, state, n_ticks, dt, filt,
                     lambda st: controller.step(st.base_matrix(), st.base, st.q,
                                                BaseCommand(st.v_x, st.omega_z), dt),
                     lambda: controller.last_ref_index)


def simulate_swing(sc: Scenario, seed: int, kp: Optional[float] = None,
                   ff: Optional[bool] = None) -> SimLog:
    """Periodic base swing while the arm holds a fixed global EE pose.

    The base command is open loop (omega = A sin(2 pi t / T), v = 0); the
    arm runs the feedforward-feedback loop toward a per-tick IK retarget of
    the held pose.  Used by the control ablation.
    """
    arm = build_arm(sc)
    world = _world_of(sc, arm)
    dt = 1.0 / sc.control.arm_rate
    q0 = initial_joint_config(sc, arm)
    start = build_base_path(sc)[0]
    state = RobotState(start, q0)
    if sc.task.kind in ("grasp", "hold") and sc.task.grasp_pose is not None:
        hold = EePose.canonical(np.array(sc.task.grasp_pose[:3]), np.array(sc.task.grasp_pose[3:]))
    else:
        hold = state.ee_pose(arm)
    f3b = F3BState(arm, gains_of(sc, kp=kp, ff=ff))
    amp, period = sc.base_motion.amplitude, sc.base_motion.period
    n_ticks = int(round(sc.base_motion.duration / dt))
    filt = DisturbanceFilter(world.terrain, dt, seed)

    from .control import induced_ee_velocity
    from .kinematics import chain_pose

    def tick(st: RobotState):
        omega = amp * np.sin(2.0 * np.pi * st.t / period)
        try:
            q_des = solve_ik_local(arm, st.base_matrix(), hold, st.q)
        except IkDivergence:
            q_des = st.q
        induced = induced_ee_velocity(BaseCommand(st.v_x, st.omega_z),
                                      EePose.from_matrix(chain_pose(arm, st.q)))
        qdot = f3b_step(f3b, q_des, st.q, induced, dt)
        from .control import ControlCommand
        return ControlCommand(qdot, BaseCommand(0.0, omega))

    return _run_loop(world, arm, state, n_ticks, dt, filt, tick, lambda: 0)


def _run_loop(world, arm, state: RobotState, n_ticks: int, dt: float,
              filt: DisturbanceFilter, tick_fn, ref_fn) -> SimLog:
    rows_t, rows_base, rows_q, rows_pos, rows_rpy, rows_ref = [], [], [], [], [], []

    def log(st: RobotState):
        ee = st.ee_pose(arm)
        rows_t.append(st.t)
        rows_base.append([st.base.x, st.base.y, st.base.yaw,
                          st.lift[0], st.lift[1], st.lift[2]])
        rows_q.append(st.q.copy())
        rows_pos.append(ee.position.copy())
        rows_rpy.append(ee.rpy.copy())
        rows_ref.append(ref_fn())

    log(state)
    for _ in range(n_ticks):
        cmd = tick_fn(state)
        state = step(world, state, cmd.qdot, cmd.base.v_x, cmd.base.omega_z, dt,
                     filt.sample())
        log(state)
    return SimLog(np.array(rows_t), np.array(rows_base), np.array(rows_q),
                  np.array(rows_pos), np.array(rows_rpy), np.array(rows_ref), dt)


# --- artifacts ---------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def write_trajectory_csv(log: SimLog, path: Path) -> None:
    lines = [",".join(TRAJECTORY_COLUMNS)]
    for i in range(len(log.t)):
        row = [log.t[i], *log.base[i], *log.q[i], *log.ee_pos[i], *log.ee_rpy[i]]
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def write_planned_csv(plan: PlanResult, path: Path) -> None:
    cols = ["index", "ee_x", "ee_y", "ee_z", "ee_R", "ee_P", "ee_Y",
            "base_x", "base_y", "base_yaw"] + [f"q{i + 1}" for i in range(6)]
    lines = [",".join(cols)]
    for i, (st, q) in enumerate(zip(plan.states, plan.joints)):
        row = [*st.ee.position, *st.ee.rpy, st.base.x, st.base.y, st.base.yaw, *q]
        lines.append(str(i) + "," + ",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def write_metrics(path: Path, metrics: dict, solve_report: Optional[SolveReport]) -> None:
    lines = []
    for k, v in metrics.items():
        lines.append(f"{k} = {v}")
    if solve_report is not None:
        lines.append("")
        lines.append("[solve]")
        for k, v in solve_report.as_dict().items():
            lines.append(f"{k} = {v}")
    lines.append("")
    lines.append("[json]")
    payload = {"metrics": metrics}
    if solve_report is not None:
        payload["solve"] = solve_report.as_dict()
    lines.append(json.dumps(payload, sort_keys=True))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_plots(out: Path, plan: Optional[PlanResult], log: Optional[SimLog]) -> None:
    series_xy = {}
    if plan is not None:
        series_xy["planned base"] = np.array([[s.base.x, s.base.y] for s in plan.states])
        series_xy["planned ee"] = np.array([[s.ee.position[0], s.ee.position[1]]
                                            for s in plan.states])
    if log is not None:
        series_xy["executed base"] = log.base[:, :2]
        series_xy["executed ee"] = log.ee_pos[:, :2]
    if series_xy:
        (out / "base_path.svg").write_text(
            line_plot(series_xy, "top-down paths", "x [m]", "y [m]", equal_axes=True),
            encoding="ascii")
    if log is not None:
        (out / "ee_path.svg").write_text(
            line_plot({"ee (iso)": project_iso(log.ee_pos)},
                      "end-effector path, isometric projection", "u", "v"),
            encoding="ascii")
        v = np.linalg.norm(np.diff(log.ee_pos, axis=0), axis=1) / log.dt
        ts = np.column_stack([log.t[1:], v])
        (out / "metrics.svg").write_text(
            line_plot({"|ee velocity|": ts}, "end-effector speed", "t [s]", "m/s"),
            encoding="ascii")


def _write_manifest(out: Path, sc: Scenario, seed: int) -> None:
    (out / "manifest.txt").write_text(
        f"name = {sc.name}\nseed = {seed}\nversion = {__version__}\n"
        f"scenario = scenario.snapshot.scn\n", encoding="utf-8")
    (out / "scenario.snapshot.scn").write_text(serialize_scenario(sc), encoding="utf-8")


def run_pipeline(sc: Scenario, out_dir, seed: Optional[int] = None,
                 base_dir: Optional[Path] = None, strict_alg1: bool = False,
                 raw_displacement: bool = False, stop_after: str = "simulate") -> RunResult:
    """Execute the full pipeline and write artifacts; never raises for stage
    failures (the result and the FAILED marker carry the stage name)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = sc.seed if seed is None else int(seed)
    _write_manifest(out, sc, seed)
    result = RunResult(out, False)
    stage = "plan"
    try:
        plan = plan_scenario(sc, base_dir, strict_alg1, raw_displacement)
        result.plan = plan
        if stop_after != "optimize":
            stage = "interpolate"
            plan = interpolate_plan(sc, plan, base_dir, strict_alg1)
        write_planned_csv(plan, out / "planned_path.csv")
        if stop_after == "optimize":
            write_metrics(out / "metrics.txt", {"success": True, "stage": "plan-only"},
                          plan.solve_report)
            _write_plots(out, plan, None)
            result.success = True
            return result
        stage = "simulate"
        log = simulate_plan(sc, plan, seed)
        result.log = log
        write_trajectory_csv(log, out / "trajectory.csv")
        stage = "evaluate"
        metrics = compute_metrics(log.ee_pos, log.ee_rpy, log.dt)
        task = build_task(sc)
        if task is not None:
            mask = None
            if sc.task.kind == "grasp" and sc.task.window is not None and plan.fixed_windows:
                s, t = plan.refined_window(*plan.fixed_windows[0])
                mask = (log.ref_index >= s) & (log.ref_index <= t)
            rep = evaluate_task(task, log.t, log.ee_pos, log.ee_rpy, mask)
            metrics.success, metrics.reason = rep.success, rep.reason
        result.metrics = metrics.as_dict()
        write_metrics(out / "metrics.txt", result.metrics, plan.solve_report)
        _write_plots(out, plan, log)
        result.success = bool(metrics.success)
        if not result.success:
            (out / "FAILED").write_text(f"task failed: {metrics.reason}\n", encoding="utf-8")
        return result
    except Exception as exc:  # noqa: BLE001 - stage failures become markers
        result.failed_stage = stage
        (out / "FAILED").write_text(
            f"stage = {stage}\nerror = {exc}\n\n{traceback.format_exc()}", encoding="utf-8")
        _write_plots(out, result.plan, result.log)
        return result


# --- ablation ----------------------------------------------------------------------


@dataclass
class AblationCell:
    label: str
    ff: bool
    kp: float
    metrics: dict


def run_ablation(sc: Scenario, out_dir, kp_values: Sequence[float] = (3.0, 1.0),
                 seed: Optional[int] = None) -> list[AblationCell]:
    """{feedforward on/off} x {gain list} over the periodic-swing scenario.

    Emits a table of the displacement/velocity/acceleration metrics per cell
    plus ratio columns against the feedback-only cell at the same gain.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = sc.seed if seed is None else int(seed)
    _write_manifest(out, sc, seed)
    cells: list[AblationCell] = []
    for ff in (True, False):
        for kp in kp_values:
            log = simulate_swing(sc, seed, kp=kp, ff=ff)
            m = compute_metrics(log.ee_pos, log.ee_rpy, log.dt)
            label = f"{'F3B' if ff else 'FB'}-P{kp:g}"
            cells.append(AblationCell(label, ff, kp, m.as_dict()))
            write_trajectory_csv(log, out / f"trajectory_{label}.csv")
    keys = ("p_max", "v_mean", "v_max", "a_mean", "a_max")
    lines = ["cell," + ",".join(keys) + "," + ",".join(f"{k}_vs_fb" for k in keys)]
    for c in cells:
        fb = next(x for x in cells if not x.ff and x.kp == c.kp)
        vals = [c.metrics[k] for k in keys]
        ratios = [c.metrics[k] / fb.metrics[k] if fb.metrics[k] else float("nan")
                  for k in keys]
        lines.append(c.label + "," + ",".join(_fmt(v) for v in vals)
                     + "," + ",".join(_fmt(r) for r in ratios))
    (out / "ablation.csv").write_text("\n".join(lines) + "\n", encoding="ascii")
    width = max(len(ln.split(",")[0]) for ln in lines)
    pretty = ["  ".join([ln.split(",")[0].ljust(width)]
                        + [f"{float(v):10.4g}" if i else v
                           for i, v in enumerate(ln.split(",")[1:], start=1)])
              if ln != lines[0] else ln.replace(",", "  ")
              for ln in lines]
    (out / "ablation.txt").write_text("\n".join(pretty) + "\n", encoding="ascii")
    return cells


def build_esdf_file(input_path, output_path, max_dist: float = 5.0) -> None:
    """CLI verb backend: occupancy voxel list -> ESDF archive."""
    from .esdf import build_esdf as _build, load_voxels as _load
    esdf = _build(_load(input_path), max_dist)
    save_esdf(esdf, output_path)
