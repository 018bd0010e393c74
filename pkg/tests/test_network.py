import numpy as np
import pytest

import costate_control as cc


@pytest.fixture(scope="module")
def prob():
    return cc.paper1d()


@pytest.fixture(scope="module")
def tiny_ds(prob):
    # short trajectories keep the training tests fast
    p = prob.with_grid(delta=0.05, t_final=1.0)  # N = 21 steps
    return cc.generate_dataset(p, -0.5, 0.5, 3), p


def make_window(prob, x0=1.0, n=11):
    pair = cc.solve_tpbvp(prob, x0)
    w = next(cc.windows(pair, n))
    return w.x_window, w.lambda_window


class TestForward:
    def test_output_shape(self):
        net = cc.CostateNet(state_dim=1, horizon=11)
        out = net.forward([0.5])
        assert out.shape == (11, 1)

    def test_hand_set_parameters(self):
        # single linear layer (no hidden): out = W * (scale * x) + b
        net = cc.CostateNet(state_dim=1, horizon=2, hidden=(), input_scale=0.5)
        net.weights[0] = np.array([[2.0], [-1.0]])
        net.biases[0] = np.array([0.25, 0.75])
        out = net.forward([3.0])
        assert out[:, 0] == pytest.approx([2.0 * 1.5 + 0.25, -1.0 * 1.5 + 0.75])

    def test_relu_hidden_layer(self):
        net = cc.CostateNet(state_dim=1, horizon=2, hidden=(2,), activation="relu", input_scale=1.0)
        net.weights[0] = np.array([[1.0], [-1.0]])
        net.biases[0] = np.zeros(2)
        net.weights[1] = np.array([[1.0, 1.0], [1.0, -1.0]])
        net.biases[1] = np.zeros(2)
        # x=2 -> hidden (2, 0) -> out (2, 2); x=-2 -> hidden (0, 2) -> out (2, -2)
        assert net.forward([2.0])[:, 0] == pytest.approx([2.0, 2.0])
        assert net.forward([-2.0])[:, 0] == pytest.approx([2.0, -2.0])

    def test_same_seed_same_init(self):
        a = cc.CostateNet(1, 11, seed=7)
        b = cc.CostateNet(1, 11, seed=7)
        for wa, wb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(wa, wb)

    def test_rejects_bad_configs(self):
        with pytest.raises(ValueError):
            cc.CostateNet(1, 1)
        with pytest.raises(ValueError):
            cc.CostateNet(1, 11, activation="sigmoid")
        net = cc.CostateNet(1, 11)
        with pytest.raises(ValueError):
            net.forward([np.nan])


class TestLosses:
    def test_prediction_loss_zero_at_target(self):
        t = np.arange(22.0).reshape(11, 2)
        assert cc.loss_prediction(t, t) == 0.0

    def test_prediction_loss_mean_square(self):
        pred = np.zeros((2, 1))
        target = np.array([[1.0], [3.0]])
        assert cc.loss_prediction(pred, target) == pytest.approx(5.0)

    def test_continuity_zero_on_exact_trajectory(self, prob):
        # a converged TPBVP window integrated with the same scheme reproduces
        # itself, so the mismatch is at the solver tolerance level
        xw, lw = make_window(prob)
        loss = cc.loss_continuity(prob, xw, lw, prob.delta, substeps=4)
        assert loss < 1e-10

    def test_euler_hand_oracle(self, prob):
        # forward-Euler step from (1, 0.5): x1 = 0.975, lam1 = 0.475;
        # residuals (0.9-0.975, 0.45-0.475) -> loss 0.00625 (hand computed)
        xw = np.array([[1.0], [0.9]])
        lw = np.array([[0.5], [0.45]])
        loss = cc.loss_continuity(prob, xw, lw, 0.05, substeps=1, scheme="euler")
        assert loss == pytest.approx(0.006249999999999992, abs=1e-15)

    def test_divergence_gives_large_penalty(self, prob):
        # large enough that the quadratic drift overflows inside one RK4 step
        xw = np.array([[1e40], [1e40]])
        lw = np.array([[1e40], [1e40]])
        loss = cc.loss_continuity(prob, xw, lw, 0.05)
        assert loss == 1e12

    def test_window_too_short(self, prob):
        with pytest.raises(ValueError):
            cc.loss_continuity(prob, np.ones((1, 1)), np.ones((1, 1)), 0.05)


class TestGradients:
    @staticmethod
    def total_loss(model, prob, xw, lw, w):
        pred = model.forward(xw[0])
        return cc.loss_prediction(pred, lw) + w * cc.loss_continuity(
            prob, xw, pred, prob.delta
        )

    def test_matches_finite_differences(self, prob):
        # 20 random configurations: architecture, window, continuity weight
        rng = np.random.default_rng(42)
        xw_full, lw_full = make_window(prob, x0=1.0, n=11)
        for trial in range(20):
            n = int(rng.integers(2, 8))
            hidden = tuple(rng.integers(3, 9, size=int(rng.integers(1, 3))))
            act = ("tanh", "relu")[trial % 2]
            w = float(rng.choice([0.0, 0.5, 1.0]))
            k = int(rng.integers(0, 11 - n))
            xw, lw = xw_full[k : k + n], lw_full[k : k + n]
            model = cc.CostateNet(1, n, hidden=hidden, activation=act, seed=trial)
            config = cc.TrainConfig(n_epoch=1, continuity_weight=w)
            grads, _, _ = cc.gradients(model, prob, xw, lw, config)
            flat = [g for pair in grads for g in pair]
            params = model.parameters()
            h = 1e-6
            for p_arr, g_arr in zip(params, flat):
                it = np.nditer(p_arr, flags=["multi_index"])
                for _ in it:
                    idx = it.multi_index
                    orig = p_arr[idx]
                    p_arr[idx] = orig + h
                    f_plus = self.total_loss(model, prob, xw, lw, w)
                    p_arr[idx] = orig - h
                    f_minus = self.total_loss(model, prob, xw, lw, w)
                    p_arr[idx] = orig
                    fd = (f_plus - f_minus) / (2 * h)
                    denom = max(abs(fd), abs(g_arr[idx]), 1e-8)
                    assert abs(fd - g_arr[idx]) / denom < 1e-4, (trial, idx)

    def test_zero_weight_is_prediction_only(self, prob):
        # with w=0 the gradient must equal the pure prediction gradient
        xw, lw = make_window(prob, n=5)
        model = cc.CostateNet(1, 5, hidden=(8,), seed=3)
        g0, _, _ = cc.gradients(model, prob, xw, lw, cc.TrainConfig(continuity_weight=0.0))
        pred = model.forward(xw[0])
        d_pred = 2.0 * (pred - lw) / pred.size
        g_ref = model.backprop(xw[0], d_pred)
        for (a, b), (c, d) in zip(g0, g_ref):
            np.testing.assert_allclose(a, c, atol=1e-14)
            np.testing.assert_allclose(b, d, atol=1e-14)


class TestTrain:
    def test_zero_epochs_leaves_model_unchanged(self, tiny_ds):
        ds, p = tiny_ds
        model = cc.CostateNet(1, 11, seed=0)
        before = [q.copy() for q in model.parameters()]
        trained, log = cc.train(model, ds, p, cc.TrainConfig(n_epoch=0))
        assert log == []
        for a, b in zip(trained.parameters(), before):
            np.testing.assert_array_equal(a, b)

    def test_loss_decreases(self, tiny_ds):
        ds, p = tiny_ds
        model = cc.CostateNet(1, 11, seed=0)
        _, log = cc.train(model, ds, p, cc.TrainConfig(n_epoch=5))
        assert len(log) == 5
        assert log[-1]["prediction_loss"] < log[0]["prediction_loss"]

    def test_deterministic_under_seed(self, tiny_ds):
        ds, p = tiny_ds
        runs = []
        for _ in range(2):
            model = cc.CostateNet(1, 11, seed=0)
            trained, log = cc.train(model, ds, p, cc.TrainConfig(n_epoch=2, seed=1))
            runs.append((trained, log))
        for a, b in zip(runs[0][0].parameters(), runs[1][0].parameters()):
            np.testing.assert_array_equal(a, b)
        assert runs[0][1] == runs[1][1]

    def test_update_count_is_windows_times_epochs(self, tiny_ds):
        # N=21, n=11 -> 10 windows per trajectory, 3 trajectories, 2 epochs
        ds, p = tiny_ds
        model = cc.CostateNet(1, 11, seed=0)
        calls = []
        orig = cc.network._Adam.step

        def counting_step(self, params, grads):
            calls.append(1)
            return orig(self, params, grads)

        cc.network._Adam.step = counting_step
        try:
            cc.train(model, ds, p, cc.TrainConfig(n_epoch=2))
        finally:
            cc.network._Adam.step = orig
        assert len(calls) == 2 * 3 * (21 - 11)

    def test_horizon_must_fit(self, tiny_ds):
        ds, p = tiny_ds
        model = cc.CostateNet(1, 21, seed=0)
        with pytest.raises(ValueError):
            cc.train(model, ds, p, cc.TrainConfig(n_epoch=1))


class TestPersistence:
    def test_round_trip(self, tmp_path):
        model = cc.CostateNet(1, 11, hidden=(5, 4), activation="tanh", input_scale=0.3, seed=9)
        model.train_config_digest = cc.TrainConfig().digest()
        path = tmp_path / "model.json"
        cc.save_model(model, path)
        back = cc.load_model(path)
        assert back.layer_sizes == model.layer_sizes
        assert back.activation == model.activation
        assert back.horizon == model.horizon
        assert back.input_scale == model.input_scale
        assert back.train_config_digest == model.train_config_digest
        for a, b in zip(back.parameters(), model.parameters()):
            np.testing.assert_array_equal(a, b)
        x = np.array([1.7])
        np.testing.assert_array_equal(back.forward(x), model.forward(x))

    def test_rejects_corrupted_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(cc.ModelFormatError):
            cc.load_model(path)

    def test_rejects_wrong_version(self, tmp_path):
        model = cc.CostateNet(1, 3, hidden=(2,))
        path = tmp_path / "model.json"
        cc.save_model(model, path)
        import json

        payload = json.loads(path.read_text())
        payload["format_version"] = 999
        path.write_text(json.dumps(payload))
        with pytest.raises(cc.ModelFormatError):
            cc.load_model(path)
