import numpy as np
import pytest

import costate_control as cc


@pytest.fixture(scope="module")
def prob():
    return cc.paper1d()


@pytest.fixture(scope="module")
def short(prob):
    return prob.with_grid(0.05, 2.0)  # 41 nodes keeps the NLP quick


class TestTranscription:
    def test_dimensions(self, prob):
        tiny = prob.with_grid(0.05, 0.1)  # N = 3 nodes
        nlp = cc.transcribe(tiny, -1.0)
        assert nlp.N == 3
        assert nlp.n_z == 6  # 3 states + 3 inputs
        assert nlp.n_defects == 2
        z = nlp.initial_guess()
        assert z.shape == (6,)
        assert nlp.defects(z).shape == (2,)

    def test_pack_split_round_trip(self, short):
        nlp = cc.transcribe(short, 1.0)
        rng = np.random.default_rng(0)
        x = rng.normal(size=(nlp.N, 1))
        u = rng.normal(size=(nlp.N, 1))
        xb, ub = nlp.split(nlp.pack(x, u))
        np.testing.assert_array_equal(x, xb)
        np.testing.assert_array_equal(u, ub)

    def test_boundary_nodes_pinned(self, short):
        nlp = cc.transcribe(short, -1.5)
        b = nlp.bounds()
        assert b[0] == (-1.5, -1.5)  # x(0)
        assert b[nlp.N - 1] == (0.0, 0.0)  # x(t_final)

    def test_equilibrium_guess_is_feasible(self, prob):
        nlp = cc.transcribe(prob.with_grid(0.05, 0.5), 0.0)
        z = nlp.initial_guess()
        assert np.max(np.abs(nlp.defects(z))) == 0.0
        assert nlp.objective(z) == 0.0

    def test_objective_gradient_matches_fd(self, short):
        nlp = cc.transcribe(short, 1.0)
        rng = np.random.default_rng(1)
        z = rng.normal(size=nlp.n_z)
        g = nlp.objective_grad(z)
        h = 1e-6
        for idx in rng.choice(nlp.n_z, size=10, replace=False):
            zp, zm = z.copy(), z.copy()
            zp[idx] += h
            zm[idx] -= h
            fd = (nlp.objective(zp) - nlp.objective(zm)) / (2 * h)
            assert g[idx] == pytest.approx(fd, rel=1e-6, abs=1e-9)

    def test_defect_jacobian_matches_fd(self, short):
        nlp = cc.transcribe(short, 1.0)
        rng = np.random.default_rng(2)
        z = rng.normal(size=nlp.n_z)
        mu = rng.normal(size=nlp.n_defects)
        g = nlp.defects_jac_vec(z, mu)
        h = 1e-6
        for idx in rng.choice(nlp.n_z, size=15, replace=False):
            zp, zm = z.copy(), z.copy()
            zp[idx] += h
            zm[idx] -= h
            fd = (mu @ nlp.defects(zp) - mu @ nlp.defects(zm)) / (2 * h)
            assert g[idx] == pytest.approx(fd, rel=1e-5, abs=1e-8)


class TestSolve:
    def test_equilibrium_solution_is_zero(self, prob):
        nlp = cc.transcribe(prob.with_grid(0.05, 1.0), 0.0)
        res = cc.solve_nlp(nlp)
        assert res.converged
        assert np.max(np.abs(res.x_traj)) < 1e-6
        assert np.max(np.abs(res.u_traj)) < 1e-6

    def test_matches_indirect_solution(self, short):
        # the direct and indirect methods must agree on the state trajectory
        res = cc.solve_nlp(cc.transcribe(short, 1.0))
        assert res.converged
        pair = cc.solve_tpbvp(short, 1.0)
        assert pair.converged
        dev = cc.compare_trajectories(short.times, res.x_traj, short.times, pair.x_traj)
        assert dev["max_state_deviation"] < 1e-2

    def test_costates_match_indirect(self, short):
        # discrete multipliers reproduce the continuous costate away from the ends
        res = cc.solve_nlp(cc.transcribe(short, 1.0))
        pair = cc.solve_tpbvp(short, 1.0)
        interior = slice(1, -1)
        assert np.max(np.abs(res.costates[interior] - pair.lambda_traj[interior])) < 1e-2

    def test_costate_control_identity(self, short):
        # u_k = -R^{-1} g^T lambda_k at interior nodes (KKT stationarity)
        res = cc.solve_nlp(cc.transcribe(short, 1.0))
        u_ref = cc.unconstrained_control(short, res.x_traj, res.costates)
        assert np.max(np.abs(res.u_traj[1:-1] - u_ref[1:-1])) < 1e-3

    def test_constrained_inputs_sit_on_bound(self, prob):
        # from x0=-4 the optimal input saturates at the upper bound early on
        bounded = prob.with_bounds(np.array([-20.1]), np.array([20.1]))
        res = cc.solve_nlp(cc.transcribe(bounded, -4.0))
        assert res.converged
        assert np.all(res.u_traj <= 20.1 + 1e-9)
        assert np.all(res.u_traj >= -20.1 - 1e-9)
        assert np.max(res.u_traj) == pytest.approx(20.1, abs=1e-6)
        assert abs(res.x_traj[-1, 0]) < 1e-6

    def test_defects_shrink_under_refinement(self, prob):
        # the converged trapezoidal solution is second-order accurate: against
        # the fine indirect reference, halving delta shrinks the error ~4x
        pair = cc.solve_tpbvp(prob.with_grid(0.0125, 2.0), 1.0)
        errs = []
        for delta in (0.1, 0.05):
            p = prob.with_grid(delta, 2.0)
            res = cc.solve_nlp(cc.transcribe(p, 1.0))
            assert res.converged
            stride = int(round(delta / 0.0125))
            errs.append(np.max(np.abs(res.x_traj[:, 0] - pair.x_traj[::stride, 0])))
        assert errs[1] < errs[0] / 2.5
        assert errs[1] < 1e-3

    def test_merit_history_recorded(self, short):
        res = cc.solve_nlp(cc.transcribe(short, 1.0))
        assert len(res.merit_history) >= 1
        assert all(np.isfinite(v) for v in res.merit_history)

    def test_rejects_nonfinite_init(self, short):
        nlp = cc.transcribe(short, 1.0)
        bad = nlp.initial_guess()
        bad[0] = np.nan
        with pytest.raises(ValueError):
            cc.solve_nlp(nlp, init=bad)


class TestCompare:
    def test_identical_trajectories(self):
        t = np.linspace(0, 1, 5)
        x = np.sin(t)[:, None]
        rep = cc.compare_trajectories(t, x, t, x, 1.0, 1.0)
        assert rep["max_state_deviation"] == 0.0
        assert rep["mean_state_deviation"] == 0.0
        assert rep["cost_gap"] == 0.0

    def test_known_offset(self):
        t = np.linspace(0, 1, 5)
        x = np.zeros((5, 1))
        rep = cc.compare_trajectories(t, x, t, x + 0.25)
        assert rep["max_state_deviation"] == pytest.approx(0.25)
        assert "cost_gap" not in rep

    def test_grid_mismatch_rejected(self):
        t = np.linspace(0, 1, 5)
        with pytest.raises(ValueError):
            cc.compare_trajectories(t, np.zeros((5, 1)), t + 0.1, np.zeros((5, 1)))
