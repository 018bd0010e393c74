"""Two-point boundary value solver for the optimality system.

The state/costate ODEs (with the unconstrained optimal input substituted)
are integrated by classical RK4. The boundary value problem x(0) = x0,
x(t_final) = x_target is solved by multiple shooting: unknowns are the
costates at every segment start plus the states at interior segment
starts, and a damped Newton iteration with a finite-difference Jacobian
drives the segment-continuity and terminal residuals to zero.

All integration routines are batched over leading axes, which makes both
the finite-difference Jacobian and dataset generation cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .problems import OcpProblem, costate_rhs, dynamics_rhs, unconstrained_control

Array = np.ndarray


class IntegrationDivergedError(FloatingPointError):
    """The RK4 integration produced non-finite values."""


@dataclass(frozen=True)
class SolverConfig:
    """Multiple-shooting solver knobs.

    The defaults suit the built-in 1D problems, whose costate equation has a
    fast unstable direction that makes single shooting over the full horizon
    ill-conditioned.
    """

    n_segments: int = 20
    newton_tol: float = 1e-8
    max_newton_iters: int = 100
    fine_substeps: int = 4

    def __post_init__(self):
        if self.n_segments < 1:
            raise ValueError("n_segments must be >= 1")
        if self.newton_tol <= 0:
            raise ValueError("newton_tol must be positive")
        if self.fine_substeps < 1:
            raise ValueError("fine_substeps must be >= 1")


@dataclass
class TrajectoryPair:
    """Solution of one boundary value problem on the problem's time grid."""

    x0: Array
    x_traj: Array  # (N, p)
    lambda_traj: Array  # (N, p)
    converged: bool
    residual_norm: float
    shooting_vector: Array = field(repr=False, default=None)  # Newton unknowns, for warm starts


def _pmp_rhs(problem: OcpProblem, z: Array) -> Array:
    """Right-hand side of the coupled (x, λ) system with u = -R⁻¹gᵀλ."""
    p = problem.state_dim
    x, lam = z[..., :p], z[..., p:]
    u = unconstrained_control(problem, x, lam)
    return np.concatenate(
        [dynamics_rhs(problem, x, u), costate_rhs(problem, x, u, lam)], axis=-1
    )


def _rk4(problem: OcpProblem, z: Array, dt: float, substeps: int) -> Array:
    h = dt / substeps
    for _ in range(substeps):
        k1 = _pmp_rhs(problem, z)
        k2 = _pmp_rhs(problem, z + 0.5 * h * k1)
        k3 = _pmp_rhs(problem, z + 0.5 * h * k2)
        k4 = _pmp_rhs(problem, z + h * k3)
        z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return z


def integrate_pmp_ode(
    problem: OcpProblem, x: Array, lam: Array, dt: float, substeps: int = 1
) -> tuple[Array, Array]:
    """Advance (x, λ) one step of length dt by RK4 with internal substeps."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x)
    lam = np.asarray(lam)
    z = np.concatenate([x, lam], axis=-1)
    z = _rk4(problem, z, dt, substeps)
    if not np.all(np.isfinite(z)):
        raise IntegrationDivergedError("non-finite values during integration")
    p = problem.state_dim
    return z[..., :p], z[..., p:]


def _segment_bounds(n_intervals: int, n_segments: int) -> np.ndarray:
    """Node indices of segment boundaries, as even as integer division allows."""
    n_segments = min(n_segments, n_intervals)
    return np.round(np.linspace(0, n_intervals, n_segments + 1)).astype(int)


class _ShootingSystem:
    """Residual function of the multiple-shooting unknowns, batch-evaluable."""

    def __init__(self, problem: OcpProblem, x0: Array, config: SolverConfig):
        self.problem = problem
        self.x0 = np.asarray(x0, dtype=float).reshape(problem.state_dim)
        self.config = config
        self.p = problem.state_dim
        n_intervals = problem.n_steps - 1
        self.bounds = _segment_bounds(n_intervals, config.n_segments)
        self.seg_lens = np.diff(self.bounds)
        self.n_seg = len(self.seg_lens)
        # unknowns: λ at all segment starts, x at interior segment starts
        self.n_unknowns = self.n_seg * self.p + (self.n_seg - 1) * self.p

    def unpack(self, v: Array) -> tuple[Array, Array]:
        """v: (B, m) → start nodes x (B, S, p), λ (B, S, p)."""
        B = v.shape[0]
        S, p = self.n_seg, self.p
        lam = v[:, : S * p].reshape(B, S, p)
        x = np.concatenate(
            [np.broadcast_to(self.x0, (B, 1, p)), v[:, S * p :].reshape(B, S - 1, p)],
            axis=1,
        )
        return x, lam

    def integrate_segments(self, v: Array) -> tuple[Array, Array]:
        """Returns (start nodes z0, segment end states z1), both (B, S, 2p)."""
        x, lam = self.unpack(v)
        z0 = np.concatenate([x, lam], axis=-1)
        z = z0
        for step in range(int(self.seg_lens.max())):
            active = step < self.seg_lens
            z_new = _rk4(self.problem, z, self.problem.delta, self.config.fine_substeps)
            z = np.where(active[None, :, None], z_new, z)
        return z0, z

    def residuals(self, v: Array) -> Array:
        """Continuity defects at interior nodes plus the terminal condition."""
        with np.errstate(all="ignore"):
            z0, z1 = self.integrate_segments(v)
        B = v.shape[0]
        cont = z1[:, :-1, :] - z0[:, 1:, :]
        term = z1[:, -1, : self.p] - self.problem.x_target
        return np.concatenate([cont.reshape(B, -1), term], axis=1)

    def sample_trajectory(self, v: Array) -> tuple[Array, Array]:
        """Grid-sampled (x_traj, lambda_traj) for a single unknown vector."""
        x, lam = self.unpack(v[None])
        z = np.concatenate([x, lam], axis=-1)[0]  # (S, 2p)
        N = self.problem.n_steps
        traj = np.empty((N, 2 * self.p))
        with np.errstate(all="ignore"):
            for s in range(self.n_seg):
                zs = z[s]
                traj[self.bounds[s]] = zs
                for k in range(self.bounds[s], self.bounds[s + 1]):
                    zs = _rk4(self.problem, zs[None], self.problem.delta, self.config.fine_substeps)[0]
                    traj[k + 1] = zs
        return traj[:, : self.p], traj[:, self.p :]


def _newton(system: _ShootingSystem, v0: Array, config: SolverConfig) -> tuple[Array, float, bool]:
    """Damped Newton on the shooting residuals. Returns (v, ‖r‖∞, converged)."""
    v = v0.copy()
    r = system.residuals(v[None])[0]
    rn = float(np.max(np.abs(r))) if np.all(np.isfinite(r)) else np.inf
    min_step = 2.0 ** -20
    for _ in range(config.max_newton_iters):
        if rn <= config.newton_tol:
            return v, rn, True
        if not np.isfinite(rn):
            return v, rn, False
        h = 1e-7 * np.maximum(1.0, np.abs(v))
        V = np.vstack([v[None], v[None] + np.diag(h)])
        R = system.residuals(V)
        J = ((R[1:] - R[0]) / h[:, None]).T
        if not np.all(np.isfinite(J)):
            return v, rn, False
        try:
            d = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            d, *_ = np.linalg.lstsq(J, -r, rcond=None)
        # Armijo backtracking on the residual norm
        t = 1.0
        while True:
            r_new = system.residuals((v + t * d)[None])[0]
            rn_new = float(np.max(np.abs(r_new))) if np.all(np.isfinite(r_new)) else np.inf
            if rn_new <= (1.0 - 1e-4 * t) * rn:
                break
            t *= 0.5
            if t < min_step:
                return v, rn, rn <= config.newton_tol  # stagnated
        v = v + t * d
        r, rn = r_new, rn_new
    return v, rn, rn <= config.newton_tol


def solve_tpbvp(
    problem: OcpProblem,
    x0,
    config: SolverConfig | None = None,
    init: Array | None = None,
) -> TrajectoryPair:
    """Solve the boundary value problem for one initial state.

    ``init`` optionally warm-starts the Newton unknowns (shooting vector of a
    previous, nearby solution); otherwise all unknowns start at zero. Never
    raises on non-convergence: the returned pair carries a ``converged`` flag.
    """
    config = config or SolverConfig()
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    system = _ShootingSystem(problem, x0, config)
    v0 = np.zeros(system.n_unknowns) if init is None else np.asarray(init, dtype=float).copy()
    if v0.shape != (system.n_unknowns,):
        raise ValueError("warm-start vector has wrong length")
    v, rn, ok = _newton(system, v0, config)
    if not ok and init is not None:
        v, rn, ok = _newton(system, np.zeros(system.n_unknowns), config)
    if not ok:
        # homotopy from the target equilibrium: walk x0 outward, carrying the
        # shooting variables along (rescues cold starts whose first residual
        # evaluation already diverges)
        dist = float(np.max(np.abs(x0 - problem.x_target)))
        n_ramp = 4 * int(np.ceil(dist)) + 1
        warm = np.zeros(system.n_unknowns)
        ramp_ok = True
        for alpha in np.linspace(0.0, 1.0, max(n_ramp, 2))[1:-1]:
            xa = problem.x_target + alpha * (x0 - problem.x_target)
            sys_a = _ShootingSystem(problem, xa, config)
            warm, _, ramp_ok = _newton(sys_a, warm, config)
            if not ramp_ok:
                break
        if ramp_ok:
            v, rn, ok = _newton(system, warm, config)
    x_traj, lambda_traj = system.sample_trajectory(v)
    if not np.all(np.isfinite(x_traj)) or not np.all(np.isfinite(lambda_traj)):
        ok = False
        x_traj = np.nan_to_num(x_traj, nan=0.0, posinf=0.0, neginf=0.0)
        lambda_traj = np.nan_to_num(lambda_traj, nan=0.0, posinf=0.0, neginf=0.0)
    return TrajectoryPair(
        x0=x0,
        x_traj=x_traj,
        lambda_traj=lambda_traj,
        converged=bool(ok),
        residual_norm=float(rn),
        shooting_vector=v,
    )


def continuation_solve(
    problem: OcpProblem,
    x0_list: Sequence,
    config: SolverConfig | None = None,
    init: Array | None = None,
) -> list[TrajectoryPair]:
    """Solve a sequence of boundary value problems with warm starts.

    ``x0_list`` should be ordered by distance from the target so each solve
    starts near the previous solution; a failed warm start falls back to the
    zero initialization inside solve_tpbvp.
    """
    config = config or SolverConfig()
    out: list[TrajectoryPair] = []
    warm = init
    for x0 in x0_list:
        pair = solve_tpbvp(problem, x0, config, init=warm)
        out.append(pair)
        if pair.converged:
            warm = pair.shooting_vector
    return out
