import numpy as np
import pytest
import scipy.linalg as sl
import torch

from hubbard_node import rdm
from hubbard_node.dataset import Normalizer, pack
from hubbard_node.node import (
    IntegrationError,
    LossWeights,
    NodeModel,
    NonFiniteError,
    PhysicalMap,
    SolverConfig,
    TrainConfig,
    VectorField,
    directional_gradient_check,
    dopri5,
    eig_penalty,
    fit,
    integrate,
    loss_mse,
    predict,
    rk4,
    total_loss,
    trace_penalty,
)

f64 = torch.float64


class TestVectorField:
    def test_zero_parameters_give_zero(self):
        net = VectorField(10, (8, 8)).double().zero_()
        x = torch.randn(5, 10, dtype=f64)
        assert torch.equal(net(x), torch.zeros(5, 10, dtype=f64))

    def test_single_identity_layer_is_affine(self):
        net = VectorField(6, (), "identity").double()
        W, b = net.linears()[0].weight, net.linears()[0].bias
        x = torch.randn(3, 6, dtype=f64)
        torch.testing.assert_close(net(x), x @ W.T + b)

    @pytest.mark.parametrize("activation", ["tanh", "relu", "softplus"])
    def test_lipschitz_bound_holds(self, activation):
        torch.manual_seed(0)
        net = VectorField(12, (20, 20), activation).double()
        L = net.lipschitz_bound()
        x, y = torch.randn(200, 12, dtype=f64), torch.randn(200, 12, dtype=f64)
        lhs = torch.linalg.norm(net(x) - net(y), dim=1)
        assert torch.all(lhs <= L * torch.linalg.norm(x - y, dim=1) + 1e-12)

    def test_widths_and_unknown_activation(self):
        assert VectorField(1296, (64, 64)).widths == [1296, 64, 64, 1296]
        with pytest.raises(ValueError):
            VectorField(4, (4,), "gelu6")

    def test_non_finite_output_reports_parameter_norm(self):
        net = VectorField(4, (4,)).double()
        with pytest.raises(NonFiniteError, match="theta"):
            net.checked(torch.tensor([np.nan, 0, 0, 0], dtype=f64))


class TestSolvers:
    A = np.random.default_rng(5).normal(size=(8, 8)) * 0.3
    x0 = np.random.default_rng(6).normal(size=8)

    def field(self):
        At = torch.tensor(self.A)
        return lambda x: x @ At.T

    @pytest.mark.parametrize("rtol", [1e-5, 1e-7, 1e-9])
    def test_dopri5_matches_matrix_exponential(self, rtol):
        t = np.linspace(0, 4, 41)
        y = dopri5(self.field(), torch.tensor(self.x0), t, rtol=rtol, atol=rtol * 1e-2).numpy()
        ref = np.array([sl.expm(self.A * s) @ self.x0 for s in t])
        assert np.abs(y - ref).max() <= 10 * rtol * np.abs(ref).max()

    def test_rk4_fourth_order(self):
        t = np.array([0.0, 1.0])
        ref = sl.expm(self.A) @ self.x0
        errs = [np.abs(rk4(self.field(), torch.tensor(self.x0), t, h).numpy()[-1] - ref).max()
                for h in (0.1, 0.05)]
        assert 14 < errs[0] / errs[1] < 18

    @pytest.mark.parametrize("method", ["dopri5", "rk4"])
    def test_zero_field_is_constant(self, method):
        x0 = torch.tensor(self.x0)
        y = integrate(lambda x: torch.zeros_like(x), x0, np.linspace(0, 3, 7), SolverConfig(method, step=0.1))
        assert torch.equal(y, x0.expand(7, 8))

    def test_dense_output_independent_of_grid(self):
        x0 = torch.tensor(self.x0)
        coarse = dopri5(self.field(), x0, np.linspace(0, 2, 11))
        fine = dopri5(self.field(), x0, np.linspace(0, 2, 21))
        torch.testing.assert_close(fine[::2], coarse, rtol=1e-6, atol=1e-8)

    def test_step_limit_reports_time(self):
        with pytest.raises(IntegrationError) as err:
            dopri5(lambda x: 50 * torch.cos(40 * x), torch.ones(2, dtype=f64), [0.0, 10.0], max_steps=20)
        assert 0 < err.value.t_reached < 10

    def test_blow_up_detected(self):
        with pytest.raises(IntegrationError):
            dopri5(lambda x: x**2, torch.ones(1, dtype=f64), [0.0, 2.0])

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            rk4(lambda x: x, torch.ones(1), [1.0, 0.0])
        with pytest.raises(ValueError):
            SolverConfig(rtol=0.0)

    def test_bit_stable(self):
        torch.manual_seed(1)
        net = VectorField(8, (16,)).double()
        a = dopri5(net, torch.tensor(self.x0), np.linspace(0, 2, 5))
        b = dopri5(net, torch.tensor(self.x0), np.linspace(0, 2, 5))
        assert torch.equal(a, b)


class TestLosses:
    def test_mse_closed_forms(self):
        c = torch.tensor([1.0, -2.0, 0.5], dtype=f64)
        k = torch.arange(6, dtype=f64)[:, None]
        data = k * c
        pred = data[:1].expand(6, 3)
        expected = float(np.mean([(kk * np.linalg.norm(c)) ** 2 for kk in range(1, 6)]))
        assert float(loss_mse(pred, data)) == pytest.approx(expected)
        assert float(loss_mse(data, data)) == 0.0
        with pytest.raises(ValueError):
            loss_mse(data[:1], data[:1])

    def test_mse_packed_weighting(self, rng):
        A = rng.normal(size=(36, 36)) + 1j * rng.normal(size=(36, 36))
        B = rng.normal(size=(36, 36)) + 1j * rng.normal(size=(36, 36))
        A, B = A + A.conj().T, B + B.conj().T
        xa, xb = torch.tensor(pack(A)), torch.tensor(pack(B))
        diag = np.sum(np.abs(np.diag(A - B)) ** 2)
        frob = np.linalg.norm(A - B) ** 2
        mse = float(loss_mse(torch.stack([xa, xa]), torch.stack([xa, xb])))
        assert mse == pytest.approx(diag + (frob - diag) / 2)

    def test_eigen_penalty_closed_forms(self):
        M = torch.zeros(2, 4, 4, dtype=torch.complex128)
        M[:, 0, 0], M[:, 1, 1] = 1.0, -0.5
        assert float(eig_penalty(M)) == pytest.approx(0.25)
        P = torch.eye(4, dtype=torch.complex128) * 0.3
        P[0, 0] = 0.0
        assert float(eig_penalty(P + 0.1 * torch.eye(4))) == 0.0
        tiny = torch.diag(torch.tensor([1.0, -1e-13], dtype=f64)).to(torch.complex128)
        assert float(eig_penalty(tiny)) == 0.0

    def test_trace_penalty(self):
        assert float(trace_penalty(torch.full((5,), 10.0), 9.0)) == 1.0
        assert float(trace_penalty(torch.tensor([8.0, 10.0, 8.0, 10.0]), 9.0)) == 1.0

    def test_exact_data_has_no_violation(self, short_quench):
        q = short_quench
        x = torch.tensor(pack(rdm.two_rdm_updown(q.basis, q.trajectory.states)))
        norm = Normalizer.fit(x.numpy())
        phys = PhysicalMap(norm)
        terms = phys.terms(torch.tensor(norm.apply(x.numpy())))
        for name, value in terms.items():
            assert float(value) <= 1e-18, name

    def test_hole_matrix_matches_numpy(self, short_quench):
        q = short_quench
        psi = q.trajectory.states[3]
        D12 = rdm.two_rdm_updown(q.basis, psi)
        ref = rdm.two_hole_rdm(D12, rdm.one_rdm(q.basis, psi))
        phys = PhysicalMap(None)
        got = phys.hole(phys.matrices(torch.tensor(pack(D12))))
        np.testing.assert_allclose(got.numpy(), ref, atol=1e-13)

    def test_weights_validation(self):
        with pytest.raises(ValueError):
            LossWeights(tr_D=-1.0)
        with pytest.raises(ValueError):
            TrainConfig(window=1)


def _window_setup(short_quench):
    q = short_quench
    rows = pack(rdm.two_rdm_updown(q.basis, q.trajectory.states[:5]))
    norm = Normalizer.fit(rows)
    return torch.tensor(norm.apply(rows)), PhysicalMap(norm), np.arange(5) * 0.05


@pytest.mark.parametrize("term", ["mse", "psd_D", "psd_Q", "tr_D", "tr_Q"])
def test_gradients_match_finite_differences(short_quench, term):
    target, phys, t = _window_setup(short_quench)
    torch.manual_seed(2)
    net = VectorField(1296, (16, 16)).double()
    with torch.no_grad():
        for p in net.parameters():
            p.mul_(3.0)

    def loss():
        pred = rk4(net, target[0], t)
        if term == "mse":
            return loss_mse(pred, target)
        return phys.terms(pred[1:], (term,))[term]

    assert float(loss().detach()) > 0
    errors = directional_gradient_check(net, loss, n_directions=20, eps=1e-6)
    assert errors.max() <= 1e-4


def test_total_loss_combines_weighted_terms(short_quench):
    target, phys, t = _window_setup(short_quench)
    pred = target + 0.01
    w = LossWeights(tr_D=2.0, psd_Q=0.5)
    total, parts = total_loss(pred, target, w, phys, report=("tr_Q",))
    assert set(parts) == {"mse", "tr_D", "psd_Q", "tr_Q"}
    assert float(total) == pytest.approx(float(parts["mse"] + 2 * parts["tr_D"] + 0.5 * parts["psd_Q"]))


def linear_rows(n=50, dt=0.02):
    A = np.array([[-0.1, 1.0], [-1.0, -0.1]])
    return np.array([sl.expm(A * k * dt) @ np.array([1.0, 0.5]) for k in range(n)]), dt


def all_window_mse(net, rows, window, dt):
    x = torch.as_tensor(rows, dtype=next(net.parameters()).dtype)
    target = torch.stack([x[s:s + window] for s in range(len(rows) - window + 1)], dim=1)
    with torch.no_grad():
        return float(loss_mse(rk4(net, target[0], np.arange(window) * dt), target))


def test_overfit_linear_ode():
    rows, dt = linear_rows()
    cfg = TrainConfig(hidden=32, lr=1e-2, lr_decay=0.93, window=10, stride=1, batch=16, epochs=60,
                      updates_per_epoch=25, dtype="float64", grad_clip=0.0, seed=0)
    result = fit(rows, None, dt, cfg)
    assert all_window_mse(result.model.field, rows, cfg.window, dt) <= 1e-6


@pytest.fixture(scope="module")
def trained():
    """A small linear-ODE fit shared by the training tests."""
    rows, dt = linear_rows(120, 0.05)
    cfg = TrainConfig(hidden=16, lr=1e-2, window=10, stride=1, batch=4, epochs=3, updates_per_epoch=5, seed=3)
    return fit(rows[:80], rows[80:], dt, cfg), cfg, rows, dt


class TestTraining:
    @pytest.fixture
    def result(self, trained):
        return trained

    def test_deterministic(self, result):
        res, cfg, rows, dt = result
        again = fit(rows[:80], rows[80:], dt, cfg)
        for a, b in zip(res.model.field.parameters(), again.model.field.parameters()):
            assert torch.equal(a, b)

    def test_history_and_checkpoint(self, result, tmp_path):
        res, *_ = result
        assert len(res.history) == 15 and len(res.validation) == 4
        assert res.model.provenance["best_val_mse"] == pytest.approx(res.best_val_mse)
        res.write_history(tmp_path)
        header = (tmp_path / "loss_history.csv").read_text().splitlines()[0]
        assert header == "step,total,mse,psd_D,psd_Q,tr_D,tr_Q"

    def test_save_load_round_trip(self, result, tmp_path):
        res, _, rows, dt = result
        res.model.save(tmp_path / "m")
        back = NodeModel.load(tmp_path / "m")
        for a, b in zip(res.model.field.parameters(), back.field.parameters()):
            assert torch.equal(a, b)
        p1 = predict(res.model, rows[0], 1.0)
        p2 = predict(back, rows[0], 1.0)
        np.testing.assert_array_equal(p1.values, p2.values)

    def test_predict_horizon_zero(self, result):
        res, _, rows, _ = result
        p = predict(res.model, rows[0], 0.0)
        assert p.values.shape == (1, 2) and p.failed_at is None

    def test_constraint_weights_need_rdm_data(self):
        rows, dt = linear_rows()
        with pytest.raises(ValueError):
            fit(rows, None, dt, TrainConfig(window=5, stride=1, epochs=1, alpha_tr_D=1.0))


def test_prediction_failure_is_reported():
    net = VectorField(2, (), "identity").double()
    with torch.no_grad():
        net.linears()[0].weight.copy_(torch.eye(2) * 50)
        net.linears()[0].bias.zero_()
    model = NodeModel(net, SolverConfig(max_steps=200), dt=0.1)
    p = predict(model, np.ones(2), 100.0)
    assert p.failed_at is not None and p.failed_at < 100.0
    assert len(p.values) == len(p.times) < 1001
