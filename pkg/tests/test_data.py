import numpy as np
import pytest

import costate_control as cc


@pytest.fixture(scope="module")
def prob():
    return cc.paper1d()


@pytest.fixture(scope="module")
def pair(prob):
    p = cc.solve_tpbvp(prob, 1.0)
    assert p.converged
    return p


@pytest.fixture(scope="module")
def small_ds(prob):
    # two continuation chains of three points each; cheap but non-trivial
    return cc.generate_dataset(prob, -1.0, 1.0, 5)


class TestWindows:
    def test_count_matches_paper_grid(self, pair):
        # N = 201 steps, horizon n = 11 -> exactly N - n = 190 windows
        wins = list(cc.windows(pair, 11))
        assert len(wins) == 190
        assert wins[0].k == 0 and wins[-1].k == 189

    def test_windows_tile_the_trajectory(self, pair):
        for w in cc.windows(pair, 11):
            assert w.x_window.shape == (11, 1)
            np.testing.assert_array_equal(w.x_window, pair.x_traj[w.k : w.k + 11])
            np.testing.assert_array_equal(w.lambda_window, pair.lambda_traj[w.k : w.k + 11])

    def test_horizon_bounds_enforced(self, pair):
        with pytest.raises(ValueError):
            list(cc.windows(pair, 0))
        with pytest.raises(ValueError):
            list(cc.windows(pair, pair.x_traj.shape[0]))

    def test_single_step_horizon(self, pair):
        wins = list(cc.windows(pair, 1))
        assert len(wins) == pair.x_traj.shape[0] - 1


class TestGenerateDataset:
    def test_grid_and_convergence(self, small_ds):
        assert small_ds.count == 5
        assert small_ds.failures == []
        x0s = [float(e.x0[0]) for e in small_ds.entries]
        assert x0s == pytest.approx([-1.0, -0.5, 0.0, 0.5, 1.0])

    def test_entries_reach_target(self, small_ds):
        for e in small_ds.entries:
            assert abs(e.x_traj[-1, 0]) <= 1e-2

    def test_near_trivial_grid_has_small_costates(self, prob):
        # on [-0.1, 0.1] the linearization lambda = (1+sqrt(2)) x bounds scale
        ds = cc.generate_dataset(prob, -0.1, 0.1, 3)
        for e in ds.entries:
            assert np.max(np.abs(e.lambda_traj)) < 0.3

    def test_regeneration_is_deterministic(self, prob, small_ds):
        again = cc.generate_dataset(prob, -1.0, 1.0, 5)
        for a, b in zip(small_ds.entries, again.entries):
            np.testing.assert_array_equal(a.x_traj, b.x_traj)
            np.testing.assert_array_equal(a.lambda_traj, b.lambda_traj)

    def test_rejects_degenerate_grids(self, prob):
        with pytest.raises(ValueError):
            cc.generate_dataset(prob, -1.0, 1.0, 1)
        with pytest.raises(ValueError):
            cc.generate_dataset(prob, 1.0, -1.0, 5)


class TestPersistence:
    def test_round_trip_is_exact(self, small_ds, tmp_path):
        path = tmp_path / "ds.txt"
        cc.save_dataset(small_ds, path)
        back = cc.load_dataset(path)
        assert back.problem_id == small_ds.problem_id
        assert back.delta == small_ds.delta
        assert back.n_steps == small_ds.n_steps
        assert back.count == small_ds.count
        for a, b in zip(small_ds.entries, back.entries):
            np.testing.assert_array_equal(a.x_traj, b.x_traj)
            np.testing.assert_array_equal(a.lambda_traj, b.lambda_traj)
            np.testing.assert_array_equal(a.x0, b.x0)
            assert a.converged == b.converged
            assert a.residual_norm == b.residual_norm

    def test_save_is_byte_stable(self, small_ds, tmp_path):
        p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
        cc.save_dataset(small_ds, p1)
        cc.save_dataset(small_ds, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_rejects_wrong_version(self, small_ds, tmp_path):
        path = tmp_path / "ds.txt"
        cc.save_dataset(small_ds, path)
        text = path.read_text().splitlines()
        text[0] = "# costate-control dataset v999"
        path.write_text("\n".join(text) + "\n")
        with pytest.raises(cc.DatasetFormatError, match="version"):
            cc.load_dataset(path)

    def test_rejects_missing_header(self, tmp_path):
        path = tmp_path / "junk.txt"
        path.write_text("not a dataset\n")
        with pytest.raises(cc.DatasetFormatError, match="header"):
            cc.load_dataset(path)

    def test_truncated_file_names_the_entry(self, small_ds, tmp_path):
        path = tmp_path / "ds.txt"
        cc.save_dataset(small_ds, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[: len(lines) // 2]) + "\n")
        with pytest.raises(cc.DatasetFormatError, match="truncated|expected entry"):
            cc.load_dataset(path)

    def test_corrupted_row_is_located(self, small_ds, tmp_path):
        path = tmp_path / "ds.txt"
        cc.save_dataset(small_ds, path)
        lines = path.read_text().splitlines()
        lines[8] = "garbage row"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(cc.DatasetFormatError, match="line 9"):
            cc.load_dataset(path)
