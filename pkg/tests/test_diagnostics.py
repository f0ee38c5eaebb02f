import math

import numpy as np
import pytest

from hubbard_node import diagnostics as dg
from hubbard_node import rdm
from hubbard_node.cumulants import delta12
from hubbard_node.model import ModelParams
from hubbard_node.pipeline import quench
from hubbard_node.propagator import EvolutionSpec


class TestPearson:
    t = np.linspace(0, 50, 5001)

    def test_identical_and_affine(self):
        f = np.sin(self.t) + 0.1 * self.t
        assert dg.pearson(self.t, f, f) == pytest.approx(1.0)
        assert dg.pearson(self.t, f, 3 * f - 2) == pytest.approx(1.0)
        assert dg.pearson(self.t, f, -f) == pytest.approx(-1.0)

    def test_symmetric(self):
        f, g = np.sin(self.t), np.cos(0.3 * self.t) + 0.01 * self.t
        assert dg.pearson(self.t, f, g) == pytest.approx(dg.pearson(self.t, g, f))

    def test_zero_variance_is_nan(self):
        assert math.isnan(dg.pearson(self.t, np.ones_like(self.t), np.sin(self.t)))

    def test_window_must_be_covered(self):
        with pytest.raises(ValueError):
            dg.pearson(self.t[:100], self.t[:100], self.t[:100])


def test_time_average_trapezoid():
    t = np.linspace(0, 50, 501)
    assert dg.time_average(t, t, 0, 50) == pytest.approx(25.0)
    assert dg.time_average(t, t**2, 0, 50) == pytest.approx(2500 / 3, rel=1e-4)


def test_buildup_is_relative_to_initial_value():
    t = np.linspace(0, 60, 601)
    assert dg.correlation_buildup(t, np.full_like(t, 3.0)) == 0.0
    assert dg.correlation_buildup(t, 1.0 + t / 50) == pytest.approx(0.5)


def test_classify_thresholds():
    assert dg.classify(0.66, -0.05) == (True, True)
    assert dg.classify(0.65, -0.1) == (False, False)
    assert dg.classify(0.1, math.nan) == (False, False)


def test_correlation_energy_two_routes_agree(short_quench):
    q = short_quench
    psi = q.trajectory.states[4:8]
    ud = delta12(rdm.two_rdm_updown(q.basis, psi), rdm.one_rdm(q.basis, psi), "updown")
    np.testing.assert_allclose(dg.correlation_energy(ud, 1.7), dg.correlation_energy_trace(ud, 1.7))


def test_initial_trap_energy(short_quench):
    q = short_quench
    D1 = rdm.one_rdm(q.basis, q.trajectory.states[0])
    occ = np.real(np.diagonal(D1[0]) + np.diagonal(D1[1]))
    assert dg.e_pot0(D1, q.params) == pytest.approx(occ @ (0.5 * (np.arange(1, 7) - 3.5) ** 2))


def _residual(q_params, t, dt):
    q = quench(q_params, times=np.array([t - dt, t, t + dt]))
    s = q.trajectory.states
    D = rdm.two_rdm_updown(q.basis, s)
    D3 = rdm.three_rdm_uud(q.basis, s[1])
    return dg.bbgky_residual(D[0], D[1], D[2], D3, dt, q_params.U)


def test_bbgky_residual_is_second_order():
    params = ModelParams(U=1.0, V=1.0)
    r = [_residual(params, 2.0, dt) for dt in (0.02, 0.01, 0.005)]
    slope = np.polyfit(np.log([0.02, 0.01, 0.005]), np.log(r), 1)[0]
    assert 1.8 <= slope <= 2.2


def test_bbgky_collision_term_is_needed():
    params = ModelParams(U=2.0, V=1.0)
    q = quench(params, times=np.array([1.99, 2.0, 2.01]))
    s = q.trajectory.states
    D = rdm.two_rdm_updown(q.basis, s)
    D3 = rdm.three_rdm_uud(q.basis, s[1])
    full = dg.bbgky_residual(D[0], D[1], D[2], D3, 0.01, 2.0)
    without = dg.bbgky_residual(D[0], D[1], D[2], np.zeros_like(D3), 0.01, 2.0)
    assert full < 1e-3 < without


def test_regime_indicators_free_fermions():
    from hubbard_node.cumulants import norm_series

    q = quench(ModelParams(U=0.0, V=1.0), EvolutionSpec(dt=0.01, t_end=50.0, stride=100))
    series = norm_series(q.basis, q.trajectory.times, q.trajectory.states, 0.0)
    ind = dg.regime_indicators(series, q.params)
    assert abs(ind.buildup) < 1e-9
    assert math.isnan(ind.pearson_ud) and not ind.pearson_valid
    assert ind.ratio == 0.0
    assert ind.buildup_regime == "moderate"
