import math

import numpy as np
import pytest

from hubbard_node.dataset import SplitSpec
from hubbard_node.evalmetrics import (
    CURVE_COLUMNS,
    REPORT_COLUMNS,
    constraint_values,
    divergence_time,
    evaluate_prediction,
    horizon_curves,
    occupation_deviation,
    occupations_from_packed,
    prediction_pearson,
)
from hubbard_node.model import ModelParams
from hubbard_node.pipeline import simulate_point
from hubbard_node.propagator import EvolutionSpec


@pytest.fixture(scope="module")
def data():
    spec = EvolutionSpec(dt=0.05, t_end=8.0)
    return simulate_point(ModelParams(U=2.0, V=1.0), spec, T=5.0, t0=1.0,
                          split=SplitSpec(100, 40, 0.05)).data


class TestPearson:
    def test_identity_and_affine(self, rng):
        x = rng.normal(size=(30, 4))
        assert prediction_pearson(x, x) == pytest.approx(1.0)
        assert prediction_pearson(-2 * x + 1, x) == pytest.approx(-1.0)

    def test_pooled_matches_numpy(self, rng):
        a, b = rng.normal(size=(20, 5)), rng.normal(size=(20, 5))
        assert prediction_pearson(a, b) == pytest.approx(np.corrcoef(a.ravel(), b.ravel())[0, 1])

    def test_per_feature_skips_constant_columns(self, rng):
        a = rng.normal(size=(20, 3))
        b = a.copy()
        a[:, 2] = 1.0
        assert prediction_pearson(a, b, per_feature=True) == pytest.approx(1.0)

    def test_constant_is_nan(self):
        assert math.isnan(prediction_pearson(np.ones((5, 2)), np.arange(10.0).reshape(5, 2)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            prediction_pearson(np.ones((3, 2)), np.ones((2, 3)))


class TestOccupationDeviation:
    def test_closed_form(self):
        t = np.linspace(0, 2, 201)
        target = np.ones_like(t)
        pred = 1 + 0.5 * t
        # ∫|0.5 t| / ∫ 1 over [0, 2] = 1 / 2
        assert occupation_deviation(t, pred, target) == pytest.approx(0.5)

    def test_window_and_site(self):
        t = np.linspace(0, 4, 401)
        target = np.stack([np.full_like(t, 2.0), np.ones_like(t)], axis=1)
        pred = target + np.where(t < 2, 0.0, 1.0)[:, None]
        assert occupation_deviation(t, pred, target, t0=0.0, T=1.0, site=0) == 0.0
        assert occupation_deviation(t, pred, target, t0=2.0, T=2.0, site=1) == pytest.approx(1.0)

    def test_degenerate_window(self):
        with pytest.raises(ValueError):
            occupation_deviation([0.0, 1.0], [1, 1], [1, 1], t0=5.0)
        assert math.isnan(occupation_deviation([0.0, 1.0], [1.0, 1.0], [0.0, 0.0]))


class TestDivergence:
    def test_first_exit(self):
        t = np.arange(5.0)
        v = np.array([[0.0], [1.0], [11.0], [1.0], [12.0]])
        assert divergence_time(t, v, 10) == 2.0

    def test_nan_counts_and_bounded_is_none(self):
        t = np.arange(3.0)
        assert divergence_time(t, np.array([[0.0], [np.nan], [0.0]])) == 1.0
        assert divergence_time(t, np.zeros((3, 2))) is None

    def test_failure_time(self):
        t = np.arange(3.0)
        assert divergence_time(t, np.zeros((3, 1)), failed_at=2.5) == 2.5
        assert divergence_time(t, np.array([[0.0], [50.0], [0.0]]), failed_at=2.5) == 1.0


class TestOnExactData:
    def test_exact_prediction_is_perfect(self, data):
        t0, n = 1.0, 101
        start = 20
        pred = data.packed[start:start + n]
        times = np.arange(n) * data.dt
        rep = evaluate_prediction(data, times, pred, t0, horizons=(2.0, 5.0, 50.0))
        assert rep.pearson_packed[0] == pytest.approx(1.0)
        np.testing.assert_allclose(rep.delta_n1[:2] + rep.delta_d1[:2], 0.0, atol=1e-12)
        assert math.isnan(rep.pearson_packed[2])
        assert rep.divergence_time is None
        assert set(rep.rows()[0]) == set(REPORT_COLUMNS)

    def test_occupations_from_packed(self, data):
        n, d = occupations_from_packed(data.packed[:7])
        np.testing.assert_allclose(n, data.occupations[:7], atol=1e-12)
        np.testing.assert_allclose(d, data.doublons[:7], atol=1e-12)

    def test_constraints_vanish(self, data):
        viol = constraint_values(data.packed[::40])
        for name, v in viol.items():
            assert np.all(v <= 1e-18), name

    def test_constant_prediction_deviates(self, data):
        n = 81
        pred = np.repeat(data.packed[:1], n, axis=0)
        rep = evaluate_prediction(data, np.arange(n) * data.dt, pred, 0.0, horizons=(4.0,))
        assert rep.delta_n1[0] > 0

    def test_horizon_curves(self, data):
        n = 41
        pred = data.packed[:n] + 1e-3
        rows = horizon_curves(data, np.arange(n) * data.dt, pred, 0.0, every=0.5)
        assert [r["t_pred"] for r in rows] == pytest.approx([0.5, 1.0, 1.5, 2.0])
        assert set(rows[0]) == set(CURVE_COLUMNS)
        assert all(r["mse"] == pytest.approx(1296e-6) for r in rows)
