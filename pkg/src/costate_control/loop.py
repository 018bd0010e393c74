"""Closed-loop validation: network (or boundary-value re-solve) in the loop,
box-constrained input selection, plant integration, and disturbance jumps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import CostateNet
from .problems import OcpProblem, unconstrained_control
from .tpbvp import SolverConfig, continuation_solve, solve_tpbvp

Array = np.ndarray


class PlantDivergedError(FloatingPointError):
    """The simulated state left the finite range."""


@dataclass(frozen=True)
class DisturbanceSchedule:
    """Instantaneous state jumps at fixed times."""

    events: tuple[tuple[float, Array], ...] = ()

    def __post_init__(self):
        events = []
        prev = -np.inf
        for t, d in self.events:
            t = float(t)
            if t <= prev:
                raise ValueError("disturbance times must be strictly increasing")
            if t < 0:
                raise ValueError("disturbance times must be non-negative")
            prev = t
            events.append((t, np.atleast_1d(np.asarray(d, dtype=float))))
        object.__setattr__(self, "events", tuple(events))

    @classmethod
    def parse(cls, text: str) -> "DisturbanceSchedule":
        """Parse 't:mag,t:mag,...'; empty string means no disturbance."""
        events = []
        if text.strip():
            for item in text.split(","):
                t, mag = item.split(":")
                events.append((float(t), np.array([float(mag)])))
        return cls(tuple(events))

    def jump_in(self, t_lo: float, t_hi: float, p: int) -> Array:
        """Total jump scheduled in the half-open interval (t_lo, t_hi]."""
        total = np.zeros(p)
        for t, d in self.events:
            if t_lo < t <= t_hi:
                total += d
        return total


@dataclass
class ClosedLoopResult:
    """Time-aligned series from one closed-loop run on the problem's grid."""

    times: Array  # (N,)
    x_series: Array  # (N, p)
    u_series: Array  # (N-1, q)
    lambda0_series: Array  # (N-1, p)
    disturbance_series: Array  # (N, p)
    running_cost: float
    diverged: bool = False
    solver_failures: list[int] = field(default_factory=list)


def saturate(u: Array, u_min: Array, u_max: Array) -> Array:
    """Elementwise clip to the admissible box."""
    u_min = np.asarray(u_min, dtype=float)
    u_max = np.asarray(u_max, dtype=float)
    if np.any(u_min > u_max):
        raise ValueError("u_min must be <= u_max elementwise")
    return np.clip(u, u_min, u_max)


def solve_input_qp(problem: OcpProblem, x: Array, lambda0: Array, kkt_tol: float = 1e-10) -> Array:
    """Exact minimizer of (1/2)uᵀRu + λ₀ᵀ g(x) u over the input box.

    For diagonal R the solution is the clipped unconstrained minimizer; for
    general R, cyclic coordinate descent (each 1D subproblem is exact) runs
    until the projected-gradient KKT residual is below ``kkt_tol``.
    """
    x = np.asarray(x, dtype=float)
    lambda0 = np.asarray(lambda0, dtype=float)
    R = problem.R
    c = np.einsum("...pq,...p->...q", problem.g(x), lambda0)  # linear term gᵀλ₀
    if np.count_nonzero(R - np.diag(np.diagonal(R))) == 0:
        return saturate(-c / np.diagonal(R), problem.u_min, problem.u_max)
    q = problem.input_dim
    u = saturate(np.linalg.solve(R, -c), problem.u_min, problem.u_max)
    for _ in range(10000):
        grad = R @ u + c
        proj = u - saturate(u - grad, problem.u_min, problem.u_max)
        if np.max(np.abs(proj)) < kkt_tol:
            break
        for i in range(q):
            rest = R[i] @ u - R[i, i] * u[i]
            u[i] = min(max((-c[i] - rest) / R[i, i], problem.u_min[i]), problem.u_max[i])
    return u


def plant_step(problem: OcpProblem, x: Array, u: Array, delta: float, substeps: int = 1) -> Array:
    """RK4 step of dx/dt = f(x) + g(x)u with u held constant (zero-order hold)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    h = delta / substeps
    for _ in range(substeps):
        k1 = _plant_rhs(problem, x, u)
        k2 = _plant_rhs(problem, x + 0.5 * h * k1, u)
        k3 = _plant_rhs(problem, x + 0.5 * h * k2, u)
        k4 = _plant_rhs(problem, x + h * k3, u)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(x)):
        raise PlantDivergedError("plant state diverged")
    return x


def _plant_rhs(problem: OcpProblem, x: Array, u: Array) -> Array:
    return problem.f(x) + np.einsum("...pq,...q->...p", problem.g(x), u)


def _stage_cost(problem: OcpProblem, x: Array, u: Array) -> float:
    return 0.5 * float(x @ problem.Q @ x + u @ problem.R @ u)


def _run_loop(problem: OcpProblem, x0, schedule: DisturbanceSchedule, pick_input) -> ClosedLoopResult:
    """Shared loop: measure, pick input, step plant, apply scheduled jumps."""
    N = problem.n_steps
    p, q = problem.state_dim, problem.input_dim
    delta = problem.delta
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    times = problem.times
    xs = np.zeros((N, p))
    us = np.zeros((N - 1, q))
    lam0s = np.zeros((N - 1, p))
    ds = np.zeros((N, p))
    xs[0] = x
    cost_samples = np.zeros(N)
    diverged = False
    failures: list[int] = []
    k_stop = N - 1
    for k in range(N - 1):
        lam0, ok = pick_input(k, x)
        if not ok:
            failures.append(k)
        u = lam0_to_input(problem, x, lam0)
        us[k] = u
        lam0s[k] = lam0
        cost_samples[k] = _stage_cost(problem, x, u)
        try:
            x = plant_step(problem, x, u, delta)
        except PlantDivergedError:
            diverged = True
            k_stop = k + 1
            break
        if np.max(np.abs(x)) > 1e9:
            diverged = True
            k_stop = k + 1
            break
        jump = schedule.jump_in(times[k], times[k + 1], p)
        x = x + jump
        ds[k + 1] = jump
        xs[k + 1] = x
    if not diverged:
        xs[N - 1] = x
        cost_samples[N - 1] = 0.5 * float(x @ problem.Q @ x)
    running = float(np.trapezoid(cost_samples[: k_stop + 1], dx=delta))
    return ClosedLoopResult(
        times=times,
        x_series=xs,
        u_series=us,
        lambda0_series=lam0s,
        disturbance_series=ds,
        running_cost=running,
        diverged=diverged,
        solver_failures=failures,
    )


def lam0_to_input(problem: OcpProblem, x: Array, lam0: Array) -> Array:
    """Constrained input from the first predicted costate (always box-feasible)."""
    return solve_input_qp(problem, x, lam0)


def simulate_closed_loop(
    problem: OcpProblem,
    model: CostateNet,
    x0,
    schedule: DisturbanceSchedule | None = None,
    constrained: bool = True,
) -> ClosedLoopResult:
    """Network in the loop: predict the costate window from the measured
    state, apply the first element through the input QP (or the raw
    unconstrained law), integrate one step, inject scheduled jumps."""
    schedule = schedule or DisturbanceSchedule()
    if model.state_dim != problem.state_dim:
        raise ValueError("model and problem state dimensions differ")
    prob = problem if constrained else problem.with_bounds(
        np.full(problem.input_dim, -np.inf), np.full(problem.input_dim, np.inf)
    )

    def pick(k: int, x: Array) -> tuple[Array, bool]:
        return model.forward(x)[0], True

    return _run_loop(prob, x0, schedule, pick)


def reference_closed_loop(
    problem: OcpProblem,
    x0,
    schedule: DisturbanceSchedule | None = None,
    constrained: bool = True,
    solver: SolverConfig | None = None,
) -> ClosedLoopResult:
    """Expert baseline: re-solve the boundary value problem at every step
    (warm-started from the previous step) and use λ(0) for the input."""
    schedule = schedule or DisturbanceSchedule()
    # short segments keep the shooting Jacobian well conditioned far from the
    # target, where the costate equation has a fast unstable direction
    solver = solver or SolverConfig(n_segments=80)
    prob = problem if constrained else problem.with_bounds(
        np.full(problem.input_dim, -np.inf), np.full(problem.input_dim, np.inf)
    )
    x0_vec = np.atleast_1d(np.asarray(x0, dtype=float))
    # bootstrap the first solve with a continuation ramp from the target
    ramp_len = 4 * int(np.ceil(np.max(np.abs(x0_vec - prob.x_target)))) + 1
    alphas = np.linspace(0.0, 1.0, max(ramp_len, 2))
    ramp = [prob.x_target + a * (x0_vec - prob.x_target) for a in alphas]
    pairs = continuation_solve(prob, ramp, solver)
    state = {"warm": pairs[-1].shooting_vector if pairs[-1].converged else None, "lam0": np.zeros(prob.state_dim)}

    def pick(k: int, x: Array) -> tuple[Array, bool]:
        pair = solve_tpbvp(prob, x, solver, init=state["warm"])
        if pair.converged:
            state["warm"] = pair.shooting_vector
            state["lam0"] = pair.lambda_traj[0]
            return pair.lambda_traj[0], True
        return state["lam0"], False  # hold the previous costate

    return _run_loop(prob, x0, schedule, pick)


def write_result_csv(result: ClosedLoopResult, problem: OcpProblem, path) -> None:
    """CSV schema: t, x..., lambda0..., u..., d..., stage_cost (one row per
    grid point; input columns are empty on the final row)."""
    p, q = problem.state_dim, problem.input_dim
    header = (
        ["t"]
        + [f"x{i}" for i in range(p)]
        + [f"lambda0_{i}" for i in range(p)]
        + [f"u{i}" for i in range(q)]
        + [f"d{i}" for i in range(p)]
        + ["stage_cost"]
    )
    N = len(result.times)
    lines = [",".join(header)]
    for k in range(N):
        row = [repr(float(result.times[k]))]
        row += [repr(float(v)) for v in result.x_series[k]]
        if k < N - 1:
            row += [repr(float(v)) for v in result.lambda0_series[k]]
            row += [repr(float(v)) for v in result.u_series[k]]
        else:
            row += [""] * (p + q)
        row += [repr(float(v)) for v in result.disturbance_series[k]]
        u = result.u_series[k] if k < N - 1 else np.zeros(q)
        row.append(repr(_stage_cost(problem, result.x_series[k], u)))
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
