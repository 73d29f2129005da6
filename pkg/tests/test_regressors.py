import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bemsim.features import BUILDING, SERVER, ResidualDataset
from bemsim.regressors import (GbtConfig, GradientBoostedTrees, NotFittedError,
                               RidgeLinear, ZoneGroupEstimator, load_estimator,
                               save_estimator)


def lstsq_oracle(x, y):
    """Independent normal-equations fit with intercept."""
    xa = np.column_stack([x, np.ones(len(x))])
    w, *_ = np.linalg.lstsq(xa, y, rcond=None)
    return w[:-1], w[-1]


class TestRidge:
    def test_recovers_noiseless_linear_coefficients(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-3, 5, (400, 4))
        y = 2.0 * x[:, 0] + 1.0
        r = RidgeLinear(lam=1e-9).fit(x, y)
        w, b = r.input_coefficients()
        w_ref, b_ref = lstsq_oracle(x, y)
        assert np.allclose(w, w_ref, atol=1e-6)
        assert b == pytest.approx(b_ref, abs=1e-6)
        assert np.max(np.abs(r.predict(x) - y)) < 1e-6

    def test_constant_target(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(50, 3))
        r = RidgeLinear().fit(x, np.full(50, 3.25))
        assert np.allclose(r.predict(x), 3.25, atol=1e-9)

    def test_row_order_invariance(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(100, 3))
        y = x @ [1.0, -2.0, 0.5] + 0.3 + rng.normal(0, 0.1, 100)
        perm = rng.permutation(100)
        a = RidgeLinear().fit(x, y)
        b = RidgeLinear().fit(x[perm], y[perm])
        probe = rng.normal(size=(5, 3))
        assert np.allclose(a.predict(probe), b.predict(probe), atol=1e-9)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10 ** 6))
    def test_prediction_is_affine(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(60, 4))
        y = x @ rng.normal(size=4) + rng.normal()
        r = RidgeLinear().fit(x, y)
        a, b = rng.normal(size=(2, 4))
        lam = rng.uniform(0, 1)
        mix = r.predict((lam * a + (1 - lam) * b).reshape(1, -1))[0]
        parts = lam * r.predict(a.reshape(1, -1))[0] \
            + (1 - lam) * r.predict(b.reshape(1, -1))[0]
        assert mix == pytest.approx(parts, abs=1e-8)

    def test_degenerate_feature_guarded(self):
        x = np.column_stack([np.ones(30), np.arange(30.0)])
        y = np.arange(30.0)
        r = RidgeLinear().fit(x, y)  # zero-variance first column
        assert np.all(np.isfinite(r.predict(x)))

    def test_errors(self):
        with pytest.raises(ValueError):
            RidgeLinear().fit(np.zeros((0, 2)), np.zeros(0))
        with pytest.raises(ValueError):
            RidgeLinear().fit(np.ones((3, 2)), np.ones(3))  # no distinct rows
        with pytest.raises(NotFittedError):
            RidgeLinear().predict(np.ones((1, 2)))


class TestGbt:
    def test_zero_trees_predicts_mean(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(40, 3))
        y = rng.normal(size=40) + 5.0
        g = GradientBoostedTrees(n_trees=0).fit(x, y)
        assert np.allclose(g.predict(x), y.mean())

    def test_constant_target(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(40, 3))
        g = GradientBoostedTrees(n_trees=20, seed=0).fit(x, np.full(40, -1.5))
        assert np.allclose(g.predict(x), -1.5, atol=1e-12)

    def test_training_mse_monotone_nonincreasing(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(0, 10, (800, 4))
        y = np.sin(x[:, 0]) + 0.2 * x[:, 1] + rng.normal(0, 0.1, 800)
        g = GradientBoostedTrees(n_trees=150, seed=3).fit(x, y)
        assert np.all(np.diff(g.train_mse_) <= 1e-12)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(0, 1, (300, 5))
        y = x @ rng.normal(size=5)
        a = GradientBoostedTrees(n_trees=40, seed=11).fit(x, y)
        b = GradientBoostedTrees(n_trees=40, seed=11).fit(x, y)
        probe = rng.uniform(0, 1, (20, 5))
        assert np.array_equal(a.predict(probe), b.predict(probe))

    def test_fits_smooth_function_in_sample(self):
        rng = np.random.default_rng(4)
        x = rng.uniform(0, 24, (4000, 6))
        y = np.sin(x[:, 0] / 3) + (x[:, 1] > 12) * 1.5 + 0.1 * x[:, 2]
        g = GradientBoostedTrees(n_trees=200, seed=0).fit(x, y)
        r2 = 1 - np.mean((g.predict(x) - y) ** 2) / np.var(y)
        assert r2 > 0.97

    def test_unfitted_predict_raises(self):
        with pytest.raises(NotFittedError):
            GradientBoostedTrees().predict(np.ones((1, 3)))


def _dataset(group, seed=0, n=300):
    rng = np.random.default_rng(seed)
    n_feat = 6 if group == BUILDING else 4
    n_zone = 7 if group == BUILDING else 2
    x = rng.uniform(-1, 1, (n, n_feat))
    w = rng.normal(size=(n_feat, n_zone))
    return ResidualDataset(group, np.arange(n), x, x @ w)


class TestZoneGroupEstimator:
    def test_ridge_group_fits_each_zone(self):
        ds = _dataset(SERVER, seed=5)
        est = ZoneGroupEstimator(SERVER, "ridge").fit(ds)
        pred = est.predict(ds.x)
        assert pred.shape == (len(ds), 2)
        assert np.max(np.abs(pred - ds.y)) < 1e-6

    def test_unfitted_and_dimension_errors(self):
        est = ZoneGroupEstimator(BUILDING, "gbt")
        with pytest.raises(NotFittedError):
            est.predict(np.ones((1, 6)))
        est.fit(_dataset(BUILDING, seed=6, n=120))
        with pytest.raises(ValueError):
            est.predict(np.ones((1, 4)))

    @pytest.mark.parametrize("group,kind", [(BUILDING, "gbt"), (SERVER, "ridge")])
    def test_serialization_round_trip(self, tmp_path, group, kind):
        ds = _dataset(group, seed=7, n=200)
        est = ZoneGroupEstimator(group, kind, gbt=GbtConfig(n_trees=25),
                                 seed=3).fit(ds)
        path = tmp_path / "est.npz"
        save_estimator(path, est)
        back = load_estimator(path)
        probe = ds.x[:17]
        assert np.array_equal(est.predict(probe), back.predict(probe))
        assert back.group == group and back.kind == kind

    def test_save_unfitted_rejected(self, tmp_path):
        with pytest.raises(NotFittedError):
            save_estimator(tmp_path / "x.npz", ZoneGroupEstimator(SERVER, "ridge"))
