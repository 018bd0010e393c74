"""Control-affine optimal control problems and the quantities derived from
the minimum principle: dynamics, Hamiltonian, costate dynamics, the
unconstrained optimal feedback law, and a trajectory residual diagnostic.

All problem callables are vectorized: they accept arrays with an arbitrary
number of leading batch dimensions and a trailing state axis of length
``state_dim``, and they must preserve the input dtype (the training code
evaluates them on complex arrays to obtain exact derivatives).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

Array = np.ndarray


class DimensionError(ValueError):
    """An argument's shape is inconsistent with the problem dimensions."""


@dataclass(frozen=True)
class OcpProblem:
    """Infinite-horizon, fixed-final-state OCP with quadratic running cost.

        min  (1/2) ∫ (xᵀQx + uᵀRu) dt
        s.t. dx/dt = f(x) + g(x) u,   x(0) = x0,  x(t_final) = x_target,
             u_min <= u <= u_max  (elementwise)

    The infinite horizon is approximated by a finite ``t_final`` with the
    terminal state pinned to ``x_target``. The time grid is uniform with
    step ``delta`` and ``n_steps`` points.

    Callable shapes (p = state_dim, q = input_dim):
        f(x)     -> (..., p)
        df_dx(x) -> (..., p, p)     df_dx[..., i, j] = d f_i / d x_j
        g(x)     -> (..., p, q)
        dg_dx(x) -> (..., p, q, p)  dg_dx[..., i, j, k] = d g_ij / d x_k
    """

    problem_id: str
    state_dim: int
    input_dim: int
    f: Callable[[Array], Array]
    df_dx: Callable[[Array], Array]
    g: Callable[[Array], Array]
    dg_dx: Callable[[Array], Array]
    Q: Array
    R: Array
    u_min: Array
    u_max: Array
    x_target: Array
    t_final: float
    delta: float

    def __post_init__(self):
        p, q = self.state_dim, self.input_dim
        if p < 1 or q < 1:
            raise ValueError("state_dim and input_dim must be positive")
        Q = np.asarray(self.Q, dtype=float).reshape(p, p)
        R = np.asarray(self.R, dtype=float).reshape(q, q)
        if not np.allclose(Q, Q.T):
            raise ValueError("Q must be symmetric")
        if not np.allclose(R, R.T):
            raise ValueError("R must be symmetric")
        if np.min(np.linalg.eigvalsh(Q)) < -1e-12:
            raise ValueError("Q must be positive semi-definite")
        if np.min(np.linalg.eigvalsh(R)) <= 0.0:
            raise ValueError("R must be positive definite")
        u_min = np.asarray(self.u_min, dtype=float).reshape(q)
        u_max = np.asarray(self.u_max, dtype=float).reshape(q)
        if np.any(u_min > u_max):
            raise ValueError("u_min must be <= u_max elementwise")
        x_target = np.asarray(self.x_target, dtype=float).reshape(p)
        if self.delta <= 0 or self.t_final <= 0:
            raise ValueError("delta and t_final must be positive")
        ratio = self.t_final / self.delta
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError("t_final must be an integer multiple of delta")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "u_min", u_min)
        object.__setattr__(self, "u_max", u_max)
        object.__setattr__(self, "x_target", x_target)
        object.__setattr__(self, "_r_inv", np.linalg.inv(R))

    @property
    def n_steps(self) -> int:
        """Number of grid points N (t_final/delta intervals plus one)."""
        return int(round(self.t_final / self.delta)) + 1

    @property
    def times(self) -> Array:
        return np.arange(self.n_steps) * self.delta

    @property
    def r_inv(self) -> Array:
        return self._r_inv  # type: ignore[attr-defined]

    def with_bounds(self, u_min, u_max) -> "OcpProblem":
        return dataclasses.replace(self, u_min=u_min, u_max=u_max)

    def with_grid(self, delta: float, t_final: float) -> "OcpProblem":
        return dataclasses.replace(self, delta=delta, t_final=t_final)


@dataclass(frozen=True)
class PmpPoint:
    """A single (state, input, costate) triple."""

    x: Array
    u: Array
    lam: Array

    def __post_init__(self):
        for name in ("x", "u", "lam"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, arr)


def _check_last_axis(name: str, arr: Array, dim: int) -> Array:
    arr = np.asarray(arr)
    if arr.ndim < 1 or arr.shape[-1] != dim:
        raise DimensionError(f"{name} must have trailing axis of length {dim}, got shape {arr.shape}")
    return arr


def dynamics_rhs(problem: OcpProblem, x: Array, u: Array) -> Array:
    """f(x) + g(x) u, broadcasting over leading axes."""
    x = _check_last_axis("x", x, problem.state_dim)
    u = _check_last_axis("u", u, problem.input_dim)
    return problem.f(x) + np.einsum("...pq,...q->...p", problem.g(x), u)


def hamiltonian(problem: OcpProblem, pt: PmpPoint) -> float:
    """(1/2)xᵀQx + (1/2)uᵀRu + λᵀ(f(x) + g(x)u)."""
    x, u, lam = pt.x, pt.u, pt.lam
    x = _check_last_axis("x", x, problem.state_dim)
    u = _check_last_axis("u", u, problem.input_dim)
    lam = _check_last_axis("lam", lam, problem.state_dim)
    running = 0.5 * np.einsum("...i,ij,...j->...", x, problem.Q, x)
    running = running + 0.5 * np.einsum("...i,ij,...j->...", u, problem.R, u)
    coupling = np.einsum("...p,...p->...", lam, dynamics_rhs(problem, x, u))
    out = running + coupling
    return float(out) if out.ndim == 0 else out


def costate_rhs(problem: OcpProblem, x: Array, u: Array, lam: Array) -> Array:
    """-Qx - (df/dx)ᵀλ - ((dg/dx)·u)ᵀλ, broadcasting over leading axes."""
    x = _check_last_axis("x", x, problem.state_dim)
    u = _check_last_axis("u", u, problem.input_dim)
    lam = _check_last_axis("lam", lam, problem.state_dim)
    qx = np.einsum("ij,...j->...i", problem.Q, x)
    fj = np.einsum("...ji,...j->...i", problem.df_dx(x), lam)
    gj = np.einsum("...ijk,...j,...i->...k", problem.dg_dx(x), u, lam)
    return -qx - fj - gj


def unconstrained_control(problem: OcpProblem, x: Array, lam: Array) -> Array:
    """The stationary point of the Hamiltonian in u: -R⁻¹ g(x)ᵀ λ."""
    x = _check_last_axis("x", x, problem.state_dim)
    lam = _check_last_axis("lam", lam, problem.state_dim)
    gt_lam = np.einsum("...pq,...p->...q", problem.g(x), lam)
    return -np.einsum("qr,...r->...q", problem.r_inv, gt_lam)


def control_stationarity(problem: OcpProblem, x: Array, u: Array, lam: Array) -> Array:
    """dH/du = Ru + g(x)ᵀλ."""
    return np.einsum("qr,...r->...q", problem.R, u) + np.einsum(
        "...pq,...p->...q", problem.g(x), lam
    )


def pmp_residual(
    problem: OcpProblem,
    x_traj: Array,
    lambda_traj: Array,
    u_traj: Array,
    bound_margin: float = 1e-8,
) -> float:
    """Max-norm defect of a sampled trajectory against the optimality system.

    Central finite differences of x and λ on the interior of the grid are
    compared against the analytic right-hand sides; where the input bounds
    are inactive, |dH/du| is included as well.
    """
    x_traj = _check_last_axis("x_traj", np.atleast_2d(x_traj), problem.state_dim)
    lambda_traj = _check_last_axis("lambda_traj", np.atleast_2d(lambda_traj), problem.state_dim)
    u_traj = _check_last_axis("u_traj", np.atleast_2d(u_traj), problem.input_dim)
    n = x_traj.shape[0]
    if lambda_traj.shape[0] != n or u_traj.shape[0] != n:
        raise DimensionError("trajectories must have equal length")
    if n < 3:
        raise ValueError("need at least 3 grid points for a central difference")
    d = problem.delta
    xi, li, ui = x_traj[1:-1], lambda_traj[1:-1], u_traj[1:-1]
    dx_fd = (x_traj[2:] - x_traj[:-2]) / (2 * d)
    dl_fd = (lambda_traj[2:] - lambda_traj[:-2]) / (2 * d)
    res = max(
        float(np.max(np.abs(dx_fd - dynamics_rhs(problem, xi, ui)), initial=0.0)),
        float(np.max(np.abs(dl_fd - costate_rhs(problem, xi, ui, li)), initial=0.0)),
    )
    inactive = (u_traj > problem.u_min + bound_margin) & (u_traj < problem.u_max - bound_margin)
    if np.any(inactive):
        stat = control_stationarity(problem, x_traj, u_traj, lambda_traj)
        res = max(res, float(np.max(np.abs(stat[inactive]))))
    return res


# ---------------------------------------------------------------------------
# Built-in problems


def paper1d(delta: float = 0.05, t_final: float = 10.0, u_min=-np.inf, u_max=np.inf) -> OcpProblem:
    """1D nonlinear benchmark: dx/dt = -x² + x + u, cost (1/2)∫(x² + u²)dt, target 0."""

    def f(x):
        return x - x * x

    def df(x):
        return (1.0 - 2.0 * x)[..., None]

    def g(x):
        return np.ones(x.shape + (1,), dtype=x.dtype)

    def dg(x):
        return np.zeros(x.shape + (1, 1), dtype=x.dtype)

    return OcpProblem(
        problem_id="paper1d",
        state_dim=1,
        input_dim=1,
        f=f,
        df_dx=df,
        g=g,
        dg_dx=dg,
        Q=np.eye(1),
        R=np.eye(1),
        u_min=np.atleast_1d(u_min),
        u_max=np.atleast_1d(u_max),
        x_target=np.zeros(1),
        t_final=t_final,
        delta=delta,
    )


def linear1d(delta: float = 0.05, t_final: float = 10.0, u_min=-np.inf, u_max=np.inf) -> OcpProblem:
    """1D linear benchmark dx/dt = x + u with Q = R = 1; the stabilizing
    Riccati gain is 1 + sqrt(2), so λ(t) = (1+√2)·x(t) away from the
    terminal boundary layer."""

    def f(x):
        return x.copy()

    def df(x):
        return np.ones(x.shape + (1,), dtype=x.dtype)

    def g(x):
        return np.ones(x.shape + (1,), dtype=x.dtype)

    def dg(x):
        return np.zeros(x.shape + (1, 1), dtype=x.dtype)

    return OcpProblem(
        problem_id="linear1d",
        state_dim=1,
        input_dim=1,
        f=f,
        df_dx=df,
        g=g,
        dg_dx=dg,
        Q=np.eye(1),
        R=np.eye(1),
        u_min=np.atleast_1d(u_min),
        u_max=np.atleast_1d(u_max),
        x_target=np.zeros(1),
        t_final=t_final,
        delta=delta,
    )


PROBLEM_BUILDERS = {
    "paper1d": paper1d,
    "linear1d": linear1d,
}


def get_problem(name: str, **kwargs) -> OcpProblem:
    """Instantiate a registered problem by name."""
    try:
        builder = PROBLEM_BUILDERS[name]
    except KeyError:
        known = ", ".join(sorted(PROBLEM_BUILDERS))
        raise KeyError(f"unknown problem {name!r}; registered: {known}") from None
    return builder(**kwargs)
