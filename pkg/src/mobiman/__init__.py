"""Planning and control toolkit for tracked mobile manipulators.

Subpackages by responsibility:

- :mod:`mobiman.kinematics` - pose types, arm model, FK/IK, manipulability
- :mod:`mobiman.esdf` - voxelized signed distance fields and queries
- :mod:`mobiman.costs` - residuals and Jacobians of the path objective
- :mod:`mobiman.optimizer` - sparse Levenberg-Marquardt over waypoints
- :mod:`mobiman.avoidance` - whole-body clearance checks and reselection
- :mod:`mobiman.interpolation` - null-space-projected joint interpolation
- :mod:`mobiman.control` - base MPC plus the arm feedforward-feedback loop
- :mod:`mobiman.sim` - deterministic kinematic simulation and metrics
- :mod:`mobiman.scenario` / :mod:`mobiman.pipeline` / :mod:`mobiman.cli` -
  scenario files, orchestration and the command-line surface
"""

__version__ = "0.1.0"

from .kinematics import (  # noqa: F401
    ArmModel,
    BasePose,
    EePose,
    JointLimitError,
    PathState,
    forward_kinematics,
    ik_enumerate,
    jacobian_base_fixed_ee,
    jacobian_ee_in_base,
    manipulability_exact,
    manipulability_simplified,
)
from .esdf import EsdfGrid, VoxelGrid, build_esdf, sdf_dist, sdf_grad  # noqa: F401
from .optimizer import Problem, SolveOptions, SolveReport, fix_ee_window, make_problem, solve, total_cost  # noqa: F401
from .avoidance import ClearanceThresholds, check_waypoint, run_avoidance, sample_centerline, select_best_config  # noqa: F401
from .interpolation import InterpolationParams, config_jump_detected, nullspace_project, run_interpolation  # noqa: F401
from .control import BaseCommand, ControlCommand, F3BGains, F3BState, IhcController, base_mpc_step, f3b_step, feedforward_term, induced_ee_velocity  # noqa: F401
from .sim import RobotState, RunMetrics, TaskSpec, Terrain, World, compute_metrics, evaluate_task, step  # noqa: F401
from .scenario import Scenario, ScenarioError, load_scenario, save_scenario  # noqa: F401
from .pipeline import run_ablation, run_pipeline  # noqa: F401
