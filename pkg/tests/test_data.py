import numpy as np
import pytest

from semisub.data import (
    DataError,
    Dataset,
    SimSpec,
    generate_simulation,
    generate_toy,
    load_csv,
    save_csv,
    standardize,
    toy_f,
)


class TestToy:
    def test_category_offset_difference(self):
        # same u, categories (1,0) vs (0,1): expected y differs by theta2 - theta1 = 1.5
        theta = np.array([-0.5, 1.0])
        u = 0.3
        mu_a = toy_f(u) + np.array([1.0, 0.0]) @ theta
        mu_b = toy_f(u) + np.array([0.0, 1.0]) @ theta
        assert mu_b - mu_a == pytest.approx(1.5)

    def test_deterministic_given_seed(self):
        a = generate_toy(SimSpec(family="toy_1d", seed=42))
        b = generate_toy(SimSpec(family="toy_1d", seed=42))
        assert np.array_equal(a.y, b.y)
        assert np.array_equal(a.X, b.X)
        assert np.array_equal(a.U, b.U)

    def test_default_sizes(self):
        ds = generate_toy(SimSpec(family="toy_1d", seed=0))
        assert ds.n_split("train") == 35
        assert ds.n_split("test") == 365

    def test_category_frequencies(self):
        ds = generate_toy(SimSpec(family="toy_1d", seed=1, n_train=10000, n_val=0, n_test=1))
        counts = np.array([np.sum((ds.X == cat).all(axis=1)) for cat in
                           ([0, 0], [1, 0], [0, 1])])
        n = counts.sum()
        sd = np.sqrt(n * (1 / 3) * (2 / 3))
        assert np.all(np.abs(counts - n / 3) < 3 * sd)

    def test_u_respects_design_gaps(self):
        ds = generate_toy(SimSpec(family="toy_1d", seed=3, n_train=2000, n_val=0, n_test=1))
        u = ds.U[:, 0]
        inside = ((u >= -4) & (u <= -2)) | ((u >= -0.5) & (u <= 0.5)) | ((u >= 2) & (u <= 4))
        assert inside.all()


class TestSimulation:
    def test_zeroed_generator_recovers_theta_by_ols(self):
        spec = SimSpec(family="sim_normal", seed=7, n_train=4000, n_val=0, n_test=1,
                       theta_star=(0.8, -1.2, 0.3))
        ds, theta_star, w_star = generate_simulation(spec)
        # oracle: re-generate outcomes with the network removed, then OLS
        rng = np.random.default_rng(99)
        y = ds.X @ theta_star + rng.standard_normal(ds.n)
        beta, *_ = np.linalg.lstsq(ds.X, y, rcond=None)
        se = 1.0 / np.sqrt(np.diag(ds.X.T @ ds.X))
        assert np.all(np.abs(beta - theta_star) < 3 * se)

    def test_poisson_zero_generator_rate_one(self):
        # all-zero network and theta: eta = 0, so y ~ Pois(1)
        spec = SimSpec(family="sim_poisson", seed=5, n_train=20000, n_val=0, n_test=1)
        ds, _, _ = generate_simulation(spec)
        assert (ds.y >= 0).all() and np.array_equal(ds.y, np.round(ds.y))
        # direct check of the rate-1 case via numpy's own generator
        rng = np.random.default_rng(5)
        y = rng.poisson(np.exp(np.zeros(20000)))
        assert abs(np.mean(y) - 1.0) < 3 * np.sqrt(1.0 / 20000)

    def test_deterministic(self):
        a = generate_simulation(SimSpec(family="sim_normal", seed=11, n_train=50, n_val=0, n_test=5))
        b = generate_simulation(SimSpec(family="sim_normal", seed=11, n_train=50, n_val=0, n_test=5))
        assert np.array_equal(a[0].y, b[0].y)
        assert np.array_equal(a[1], b[1])
        assert np.array_equal(a[2], b[2])

    def test_poisson_clip_recorded(self):
        ds, _, _ = generate_simulation(
            SimSpec(family="sim_poisson", seed=1, n_train=10, n_val=0, n_test=1))
        assert ds.meta["poisson_clip"] == 10.0


class TestStandardize:
    def _tiny(self):
        return Dataset(
            y=np.array([1.0, 2.0, 3.0, 100.0]),
            X=np.array([[0.0], [1.0], [0.0], [1.0]]),
            U=np.array([[10.0], [20.0], [30.0], [999.0]]),
            split=np.array(["train", "train", "train", "test"]),
        )

    def test_train_statistics_only(self):
        ds = standardize(self._tiny())
        train = ds.split == "train"
        assert abs(np.mean(ds.U[train, 0])) < 1e-12
        assert abs(np.std(ds.U[train, 0]) - 1.0) < 1e-12
        # the test-split outlier must not influence the stored statistics
        assert ds.standardization["u_mean"][0] == pytest.approx(20.0)

    def test_round_trip(self):
        raw = self._tiny()
        ds = standardize(raw)
        m, s = ds.standardization["u_mean"][0], ds.standardization["u_sd"][0]
        assert np.allclose(ds.U[:, 0] * s + m, raw.U[:, 0], atol=1e-12)

    def test_constant_column_warns(self):
        ds = Dataset(y=np.zeros(3), X=np.zeros((3, 1)), U=np.ones((3, 1)),
                     split=np.array(["train"] * 3))
        with pytest.warns(UserWarning, match="constant"):
            standardize(ds)


class TestCsv:
    def test_single_split_and_standardization(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y,a,b\n1.0,0.5,10\n2.0,1.5,20\n3.0,2.5,30\n")
        ds = load_csv(path, "y", ["a"], ["b"], split=(1.0, 0.0, 0.0))
        assert ds.n_split("train") == 3
        assert abs(np.mean(ds.U[:, 0])) < 1e-12

    def test_missing_column_rejected(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y,a\n1,2\n")
        with pytest.raises(DataError, match="missing column 'b'"):
            load_csv(path, "y", ["a"], ["b"])

    def test_non_numeric_cell_reports_location(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y,a,b\n1,2,3\n1,oops,3\n")
        with pytest.raises(DataError, match="row 1.*'a'"):
            load_csv(path, "y", ["a"], ["b"], split=(1, 0, 0))

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y,a,b\n")
        with pytest.raises(DataError, match="empty"):
            load_csv(path, "y", ["a"], ["b"])

    def test_split_column_used_verbatim(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y,a,b,part\n1,2,3,train\n4,5,6,test\n7,8,9,train\n")
        ds = load_csv(path, "y", ["a"], ["b"], split_col="part")
        assert ds.n_split("train") == 2 and ds.n_split("test") == 1

    def test_save_load_round_trip(self, tmp_path):
        ds = generate_toy(SimSpec(family="toy_1d", seed=8, n_train=10, n_val=5, n_test=5))
        path = tmp_path / "toy.csv"
        side = tmp_path / "toy.json"
        save_csv(ds, path, sidecar_path=side)
        back = load_csv(path, "y", ["x_1", "x_2"], ["u_1"], split_col="split",
                        standardize_u=False)
        assert np.array_equal(back.y, ds.y)
        assert np.array_equal(back.U, ds.U)
        assert side.exists()

    def test_bad_split_fractions(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y,a,b\n1,2,3\n")
        with pytest.raises(DataError, match="sum to 1"):
            load_csv(path, "y", ["a"], ["b"], split=(0.5, 0.1, 0.1))
