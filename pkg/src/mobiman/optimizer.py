"""Sparse Levenberg-Marquardt over the stacked waypoint vector.

The decision variable is the concatenation of all 9-dim waypoints; fixed EE
or base blocks are eliminated from the variable vector (their coordinates
are never touched, so they survive a solve bit-identically).  Workspace
penalty multipliers follow a two-level schedule: before each outer
iteration a term's multiplier is 1e4 if its constraint is violated at
the current iterate and 0 otherwise.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from ._assembly import TermAssembly
from .costs import (
    PENALTY_ACTIVE,
    CostTerm,
    PenaltyState,
    TermKind,
    evaluate_term,
)
from .kinematics import BasePose, EePose, PathState, STATE_ANGLE_INDICES, STATE_DIM


class OptimizationError(RuntimeError):
    pass


@dataclass
class SolveOptions:
    max_inner: int = 100
    max_outer: int = 10
    cost_tol: float = 1e-8
    grad_tol: float = 1e-8
    init_damping: float = 1e-3
    max_damping: float = 1e12


@dataclass
class SolveReport:
    iterations: int = 0
    initial_cost: float = 0.0
    final_cost: float = 0.0
    per_term_cost: dict = field(default_factory=dict)
    converged: str = ""
    outer_iterations: int = 0
    wall_time: float = 0.0

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "outer_iterations": self.outer_iterations,
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "per_term_cost": dict(self.per_term_cost),
            "converged": self.converged,
            "wall_time": self.wall_time,
        }


@dataclass
class Problem:
    """States, terms, elimination masks and penalty multipliers."""

    states: list[PathState]
    terms: list[CostTerm]
    fixed_ee: np.ndarray
    fixed_base: np.ndarray
    penalties: dict[int, PenaltyState]
    timestep: float = 0.1

    @property
    def n(self) -> int:
        return len(self.states)


def make_problem(states: Sequence[PathState], terms: Sequence[CostTerm],
                 timestep: float = 0.1,
                 fixed_ee: Optional[np.ndarray] = None,
                 fixed_base: Optional[np.ndarray] = None) -> Problem:
    states = list(states)
    n = len(states)
    if n < 3:
        raise ValueError("need at least 3 waypoints")
    fixed_ee = np.zeros(n, dtype=bool) if fixed_ee is None else np.asarray(fixed_ee, bool).copy()
    fixed_base = np.zeros(n, dtype=bool) if fixed_base is None else np.asarray(fixed_base, bool).copy()
    if fixed_ee.shape != (n,) or fixed_base.shape != (n,):
        raise ValueError("fixed masks must have one entry per waypoint")
    if fixed_ee.all() and fixed_base.all():
        raise ValueError("every coordinate is fixed; nothing to optimize")
    for t in terms:
        if any(i < 0 or i >= n for i in t.indices):
            raise ValueError(f"term {t.kind} touches out-of-range waypoint {t.indices}")
    penalties = {i: PenaltyState() for i, t in enumerate(terms) if t.kind is TermKind.WORKSPACE}
    return Problem(states, list(terms), fixed_ee, fixed_base, penalties, timestep)


def fix_ee_window(problem: Problem, desired: EePose, window: tuple[int, int]) -> Problem:
    """Pin the EE blocks of waypoints s..t (inclusive) to a desired pose.

    The pinned poses share one EePose instance, so the equality with the
    desired pose is exact (bitwise) and survives any number of solves.
    """
    s, t = int(window[0]), int(window[1])
    if not (0 <= s <= t < problem.n):
        raise ValueError(f"window {window} out of range for {problem.n} waypoints")
    states = list(problem.states)
    for i in range(s, t + 1):
        states[i] = PathState(desired, states[i].base)
    fixed_ee = problem.fixed_ee.copy()
    fixed_ee[s:t + 1] = True
    return replace(problem, states=states, fixed_ee=fixed_ee)


def _lambdas(problem: Problem, states: Sequence[PathState]) -> dict[int, float]:
    """Two-level multiplier per workspace term, from the current iterate."""
    lams = {}
    for ti in problem.penalties:
        term = problem.terms[ti]
        st = states[term.indices[0]]
        d_xy2 = float(np.sum((st.ee.xy - st.base.xy) ** 2))
        dz = float(st.ee.position[2] - term.arm.h_b)
        violation = d_xy2 + dz * dz - term.workspace_radius ** 2
        lams[ti] = PENALTY_ACTIVE if violation > 0.0 else 0.0
    return lams


def total_cost(problem: Problem, states: Optional[Sequence[PathState]] = None,
               lams: Optional[dict[int, float]] = None) -> float:
    """sum(e^T diag(w) e) over all terms at the given (default: stored) states."""
    states = problem.states if states is None else states
    if lams is None:
        lams = {i: p.lam for i, p in problem.penalties.items()}
    c = 0.0
    for i, term in enumerate(problem.terms):
        e = evaluate_term(term, states, lams.get(i, 0.0))
        c += float(np.dot(e * term.weight, e))
    return c


def _per_term_cost(problem: Problem, states, lams) -> dict[str, float]:
    out: dict[str, float] = {}
    for i, term in enumerate(problem.terms):
        e = evaluate_term(term, states, lams.get(i, 0.0))
        out[term.kind.value] = out.get(term.kind.value, 0.0) + float(np.dot(e * term.weight, e))
    return out


class _Workspace:
    """Packing/masking helpers shared by the LM iterations."""

    def __init__(self, problem: Problem):
        self.problem = problem
        n = problem.n
        free = np.ones(n * STATE_DIM, dtype=bool)
        for i in range(n):
            if problem.fixed_ee[i]:
                free[i * STATE_DIM:i * STATE_DIM + 6] = False
            if problem.fixed_base[i]:
                free[i * STATE_DIM + 6:(i + 1) * STATE_DIM] = False
        self.free = free
        self.col_of = -np.ones(n * STATE_DIM, dtype=int)
        self.col_of[free] = np.arange(int(free.sum()))
        self.n_free = int(free.sum())
        self.angle_cols = np.zeros(n * STATE_DIM, dtype=bool)
        for i in range(n):
            for a in STATE_ANGLE_INDICES:
                self.angle_cols[i * STATE_DIM + a] = True
        self.assembly = TermAssembly(problem.terms, n, self.col_of)
        self.w_rows = np.concatenate([t.weight for t in problem.terms]) \
            if problem.terms else np.zeros(0)
        self.needs_states = bool(self.assembly.slow_ids)

    def pack(self, states: Sequence[PathState]) -> np.ndarray:
        return np.concatenate([s.as_vector() for s in states])

    def unpack(self, x: np.ndarray) -> list[PathState]:
        out = []
        for i in range(self.problem.n):
            v = x[i * STATE_DIM:(i + 1) * STATE_DIM]
            if self.problem.fixed_ee[i] or self.problem.fixed_base[i]:
                old = self.problem.states[i]
                ee = old.ee if self.problem.fixed_ee[i] else EePose(v[0:3], v[3:6])
                base = old.base if self.problem.fixed_base[i] else BasePose(v[6], v[7], v[8])
                out.append(PathState(ee, base))
            else:
                out.append(PathState.from_vector(v))
        return out

    def residual_and_jacobian(self, states, x, lams):
        """Whitened residual vector and sparse Jacobian over free columns."""
        X = x.reshape(self.problem.n, STATE_DIM)
        r, (rows, cols, vals) = self.assembly.assemble(states, X, lams)
        if not np.all(np.isfinite(r)):
            raise OptimizationError("non-finite residual")
        J = sparse.coo_matrix((vals, (rows, cols)),
                              shape=(self.assembly.n_rows, self.n_free)).tocsr()
        return r, J

    def cost_at(self, x: np.ndarray, lams, states=None) -> float:
        if states is None and self.needs_states:
            states = self.unpack(x)
        X = x.reshape(self.problem.n, STATE_DIM)
        e = self.assembly.residuals(states, X, lams)
        if not np.all(np.isfinite(e)):
            raise OptimizationError("non-finite residual")
        return float(np.dot(self.w_rows * e, e))

    def wrap(self, x: np.ndarray) -> np.ndarray:
        x = x.copy()
        mask = self.angle_cols
        x[mask] = np.pi - np.mod(np.pi - x[mask], 2.0 * np.pi)
        return x


def solve(problem: Problem, opts: Optional[SolveOptions] = None) -> tuple[list[PathState], SolveReport]:
    """Minimize the weighted residual sum with sparse LM.

    The outer loop refreshes the workspace multipliers from the current
    iterate; each inner run is plain Levenberg-Marquardt with Marquardt
    (diagonal) damping, doubling on rejected steps and halving on accepted
    ones.  Fixed coordinates are eliminated, not penalized.
    """
    opts = opts or SolveOptions()
    ws = _Workspace(problem)
    t0 = time.perf_counter()
    states = list(problem.states)
    report = SolveReport()

    lams = _lambdas(problem, states)
    report.initial_cost = total_cost(problem, states, lams)

    total_iters = 0
    reason = "max_outer"
    x = ws.pack(states)
    for outer in range(opts.max_outer):
        report.outer_iterations = outer + 1
        mu = opts.init_damping
        cost = ws.cost_at(x, lams, states)
        inner_reason = "max_iter"
        for _ in range(opts.max_inner):
            r, J = ws.residual_and_jacobian(states, x, lams)
            g = J.T @ r
            if np.max(np.abs(g), initial=0.0) < opts.grad_tol:
                inner_reason = "grad_tol"
                break
            JtJ = (J.T @ J).tocsc()
            diag = JtJ.diagonal()
            # Floor the Marquardt scaling so numerically dead columns cannot
            # blow the damped step up.
            diag = np.maximum(diag, 1e-8 * max(float(diag.max()), 1.0))
            accepted = False
            while mu <= opts.max_damping:
                total_iters += 1
                A = JtJ + sparse.diags(mu * diag + 1e-12)
                try:
                    dx_free = spsolve(A, -g)
                except RuntimeError as exc:  # singular factorization
                    raise OptimizationError(f"linear solve failed: {exc}") from exc
                x_new = x.copy()
                x_new[ws.free] += dx_free
                x_new = ws.wrap(x_new)
                cost_new = ws.cost_at(x_new, lams)
                predicted = float(-dx_free @ g - 0.5 * dx_free @ (JtJ @ dx_free))
                rho = (cost - cost_new) / max(predicted, 1e-300)
                if np.isfinite(cost_new) and cost_new < cost and rho > 0.0:
                    cost_prev = cost
                    x, cost = x_new, cost_new
                    states = ws.unpack(x)
                    mu = max(mu * 0.5, 1e-15)
                    accepted = True
                    break
                mu *= 2.0
            if not accepted:
                inner_reason = "damping_overflow"
                break
            if cost == 0.0 or (cost_prev - cost) < opts.cost_tol * max(cost_prev, 1e-300):
                inner_reason = "cost_tol"
                break
        new_lams = _lambdas(problem, states)
        if new_lams == lams and inner_reason in ("grad_tol", "cost_tol", "damping_overflow"):
            lams = new_lams
            reason = inner_reason
            break
        lams = new_lams
        reason = inner_reason

    problem.states[:] = states
    for ti in problem.penalties:
        problem.penalties[ti].lam = lams[ti]
    report.iterations = total_iters
    report.final_cost = total_cost(problem, states, lams)
    report.per_term_cost = _per_term_cost(problem, states, lams)
    report.converged = reason
    report.wall_time = time.perf_counter() - t0
    return states, report
