"""Direct transcription baseline: trapezoidal collocation of the OCP into a
nonlinear program, solved by an augmented-Lagrangian outer loop with a
box-respecting L-BFGS-B inner minimization.

Decision vector z = (x_0..x_{N-1}, u_0..u_{N-1}); the dynamics enter as
N-1 trapezoidal defect equalities, the input box as bound constraints, and
the boundary states are pinned through equal lower/upper bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .problems import OcpProblem

Array = np.ndarray


@dataclass
class CollocationNlp:
    """Trapezoidal transcription of one fixed-boundary trajectory problem."""

    problem: OcpProblem
    x0: Array

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        prob = self.problem
        self.N = prob.n_steps
        self.p = prob.state_dim
        self.q = prob.input_dim
        self.n_x = self.N * self.p
        self.n_z = self.N * (self.p + self.q)
        self.n_defects = (self.N - 1) * self.p

    # -- packing -------------------------------------------------------------

    def split(self, z: Array) -> tuple[Array, Array]:
        x = z[: self.n_x].reshape(self.N, self.p)
        u = z[self.n_x :].reshape(self.N, self.q)
        return x, u

    def pack(self, x: Array, u: Array) -> Array:
        return np.concatenate([np.ravel(x), np.ravel(u)])

    def initial_guess(self) -> Array:
        """States linearly interpolated from x0 to the target; inputs chosen
        per node so g(x)u tracks the interpolant's slope (least squares,
        clipped to the box), which starts the solver at near-zero defects."""
        alphas = np.linspace(0.0, 1.0, self.N)[:, None]
        x = self.x0 + alphas * (self.problem.x_target - self.x0)
        slope = np.gradient(x, self.problem.delta, axis=0)
        resid = slope - self.problem.f(x)
        G = self.problem.g(x)
        u = np.empty((self.N, self.q))
        for k in range(self.N):
            u[k] = np.linalg.lstsq(G[k], resid[k], rcond=None)[0]
        u = np.clip(u, self.problem.u_min, self.problem.u_max)
        return self.pack(x, u)

    def bounds(self) -> list[tuple[float, float]]:
        lo = np.full(self.n_z, -np.inf)
        hi = np.full(self.n_z, np.inf)
        lo[: self.p] = hi[: self.p] = self.x0
        lo[self.n_x - self.p : self.n_x] = hi[self.n_x - self.p : self.n_x] = self.problem.x_target
        lo[self.n_x :] = np.tile(self.problem.u_min, self.N)
        hi[self.n_x :] = np.tile(self.problem.u_max, self.N)
        return list(zip(lo, hi))

    # -- objective and defects -------------------------------------------------

    def objective(self, z: Array) -> float:
        x, u = self.split(z)
        c = 0.5 * (np.einsum("ki,ij,kj->k", x, self.problem.Q, x)
                   + np.einsum("ki,ij,kj->k", u, self.problem.R, u))
        return float(np.trapezoid(c, dx=self.problem.delta))

    def objective_grad(self, z: Array) -> Array:
        x, u = self.split(z)
        w = np.full(self.N, self.problem.delta)
        w[0] = w[-1] = 0.5 * self.problem.delta
        gx = w[:, None] * (x @ self.problem.Q)
        gu = w[:, None] * (u @ self.problem.R)
        return self.pack(gx, gu)

    def _node_dynamics(self, x: Array, u: Array) -> Array:
        return self.problem.f(x) + np.einsum("kpq,kq->kp", self.problem.g(x), u)

    def defects(self, z: Array) -> Array:
        """x_{k+1} - x_k - (δ/2)(F_k + F_{k+1}), flattened to (N-1)·p."""
        x, u = self.split(z)
        F = self._node_dynamics(x, u)
        d = x[1:] - x[:-1] - 0.5 * self.problem.delta * (F[:-1] + F[1:])
        return np.ravel(d)

    def defects_jac_vec(self, z: Array, mu: Array) -> Array:
        """Gradient of μᵀ·defects(z) (analytic, via the problem Jacobians)."""
        x, u = self.split(z)
        mu = mu.reshape(self.N - 1, self.p)
        half = 0.5 * self.problem.delta
        A = self.problem.df_dx(x)  # (N, p, p)
        G = self.problem.g(x)  # (N, p, q)
        dG = self.problem.dg_dx(x)  # (N, p, q, p)
        # dF_k/dx_k contracted with weights w_k = sum of mu rows touching node k
        gx = np.zeros((self.N, self.p))
        gu = np.zeros((self.N, self.q))
        w = np.zeros((self.N, self.p))
        w[1:] += mu
        w[:-1] += mu
        # d defect rows: +mu at node k+1, -mu at node k for the identity part
        gx[1:] += mu
        gx[:-1] -= mu
        dFx = A + np.einsum("kijl,kj->kil", dG, u)  # (N, p, p): dF_i/dx_l
        gx -= half * np.einsum("kil,ki->kl", dFx, w)
        gu -= half * np.einsum("kpq,kp->kq", G, w)
        return self.pack(gx, gu)


@dataclass
class NlpResult:
    x_traj: Array
    u_traj: Array
    multipliers: Array  # (N-1, p) augmented-Lagrangian multipliers of the defects
    costates: Array  # (N, p) discrete costate estimate from the multipliers
    cost: float
    converged: bool
    max_defect: float
    kkt_norm: float
    merit_history: list[float] = field(default_factory=list)


def _costates_from_multipliers(mu: Array) -> Array:
    """Discrete costates λ_k with u_k = -R⁻¹gᵀλ_k at stationarity.

    Interior stationarity gives u_k = R⁻¹gᵀ(μ_{k-1}+μ_k)/2, so λ = -μ
    averaged onto the nodes (one-sided at the ends)."""
    Nm1, p = mu.shape
    lam = np.zeros((Nm1 + 1, p))
    lam[0] = -mu[0]
    lam[-1] = -mu[-1]
    lam[1:-1] = -0.5 * (mu[:-1] + mu[1:])
    return lam


def transcribe(problem: OcpProblem, x0) -> CollocationNlp:
    """Build the trapezoidal transcription for one initial state."""
    return CollocationNlp(problem, x0)


def solve_nlp(
    nlp: CollocationNlp,
    init: Array | None = None,
    defect_tol: float = 1e-6,
    kkt_tol: float = 1e-6,
    max_outer: int = 30,
) -> NlpResult:
    """Augmented-Lagrangian loop: minimize J + μᵀc + (ρ/2)‖c‖² over the box,
    tighten μ and ρ until defects and the projected KKT residual vanish."""
    z = nlp.initial_guess() if init is None else np.asarray(init, dtype=float).copy()
    if not np.all(np.isfinite(z)):
        raise ValueError("initial decision vector must be finite")
    mu = np.zeros(nlp.n_defects)
    rho = 10.0
    bounds = nlp.bounds()
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    merit_history: list[float] = []
    converged = False
    max_defect = np.inf
    kkt = np.inf
    for _ in range(max_outer):
        def fun(zz, mu=mu, rho=rho):
            c = nlp.defects(zz)
            val = nlp.objective(zz) + mu @ c + 0.5 * rho * (c @ c)
            grad = nlp.objective_grad(zz) + nlp.defects_jac_vec(zz, mu + rho * c)
            return val, grad

        res = minimize(fun, z, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": 20000, "maxfun": 100000, "ftol": 1e-16,
                                "gtol": 1e-12, "maxcor": 30, "maxls": 60})
        z = res.x
        c = nlp.defects(z)
        cnorm = float(np.max(np.abs(c)))
        merit_history.append(float(res.fun))
        mu = mu + rho * c
        lag_grad = nlp.objective_grad(z) + nlp.defects_jac_vec(z, mu)
        # stationarity scaled by the multiplier magnitude, so the criterion
        # stays meaningful when active input bounds drive the multipliers large
        scale = 1.0 + float(np.max(np.abs(mu)))
        kkt = float(np.max(np.abs(z - np.clip(z - lag_grad, lo, hi)))) / scale
        max_defect = cnorm
        if cnorm < defect_tol and kkt < kkt_tol:
            converged = True
            break
        # the cap keeps the inner bound-constrained problems well conditioned;
        # past it the multiplier updates carry the remaining progress
        rho = min(rho * 10.0, 1e7)
    x, u = nlp.split(z)
    return NlpResult(
        x_traj=x,
        u_traj=u,
        multipliers=mu.reshape(nlp.N - 1, nlp.p),
        costates=_costates_from_multipliers(mu.reshape(nlp.N - 1, nlp.p)),
        cost=nlp.objective(z),
        converged=converged,
        max_defect=max_defect,
        kkt_norm=kkt,
        merit_history=merit_history,
    )


def compare_trajectories(times_a: Array, x_a: Array, times_b: Array, x_b: Array,
                         cost_a: float | None = None, cost_b: float | None = None) -> dict:
    """Deviation metrics between two state trajectories on the same grid."""
    times_a = np.asarray(times_a)
    times_b = np.asarray(times_b)
    if times_a.shape != times_b.shape or not np.allclose(times_a, times_b, atol=1e-12):
        raise ValueError("trajectories are not on the same time grid")
    x_a = np.atleast_2d(np.asarray(x_a, dtype=float))
    x_b = np.atleast_2d(np.asarray(x_b, dtype=float))
    if x_a.shape != x_b.shape:
        raise ValueError("state series shapes differ")
    dev = np.abs(x_a - x_b)
    report = {
        "max_state_deviation": float(np.max(dev)),
        "mean_state_deviation": float(np.mean(dev)),
    }
    if cost_a is not None and cost_b is not None:
        report["cost_gap"] = float(cost_b - cost_a)
    return report
