import numpy as np
import pytest
from sklearn.base import clone

from vitalitv.diff_ops import OrderError
from vitalitv.estimators import MarginTrendFilter, TensorDenoiser, validate_tensor_input
from vitalitv.harness import generate_signal, step_signal_spec


@pytest.fixture
def noisy_step():
    rng = np.random.default_rng(1)
    f0 = generate_signal(step_signal_spec(64, 2), (64,), 1)
    return f0 + 0.3 * rng.standard_normal(64), f0


class TestValidation:
    def test_rejects_short_axes(self):
        with pytest.raises(OrderError):
            validate_tensor_input(np.ones((8, 2)), k=2)

    def test_rejects_nan(self):
        bad = np.ones(8)
        bad[0] = np.inf
        with pytest.raises(ValueError):
            validate_tensor_input(bad, k=1)


class TestMarginTrendFilter(object):
    def test_fit_sets_attributes(self, noisy_step):
        y, _ = noisy_step
        est = MarginTrendFilter(k=1, lam=0.05).fit(y)
        assert est.coefficients_.shape == (63,)
        assert est.fitted_margin_.shape == (64,)
        assert est.kkt_residual_ <= 1e-6
        assert est.n_iter_ >= 0 and est.lam_ == 0.05

    def test_get_set_params_round_trip(self):
        est = MarginTrendFilter(k=2, lam=0.1, sigma=0.7)
        params = est.get_params()
        est2 = MarginTrendFilter().set_params(**params)
        assert est2.get_params() == params

    def test_clone(self, noisy_step):
        y, _ = noisy_step
        est = MarginTrendFilter(k=1, lam=0.05).fit(y)
        fresh = clone(est)
        assert not hasattr(fresh, "coefficients_")
        assert fresh.lam == 0.05

    def test_transform_matches_fit(self, noisy_step):
        y, _ = noisy_step
        est = MarginTrendFilter(k=1, lam=0.05)
        np.testing.assert_allclose(est.fit(y).fitted_margin_, est.transform(y), atol=1e-12)

    def test_fit_transform(self, noisy_step):
        y, _ = noisy_step
        out = MarginTrendFilter(k=1, lam=0.05).fit_transform(y)
        assert out.shape == y.shape


class TestTensorDenoiser:
    def test_denoises_toward_truth(self, noisy_step):
        y, f0 = noisy_step
        den = TensorDenoiser(k=1, lam=0.03).fit(y)
        assert np.mean((den.denoised_ - f0) ** 2) < np.mean((y - f0) ** 2)

    def test_margins_cover_decomposition(self):
        rng = np.random.default_rng(2)
        y = rng.standard_normal((10, 10))
        den = TensorDenoiser(k=1, lam=0.05).fit(y)
        assert len(den.margins_) == 4
        total = sum(r.fitted for r in den.margins_.values())
        np.testing.assert_allclose(total, den.denoised_, atol=1e-10)

    def test_transform_equals_fit(self):
        rng = np.random.default_rng(3)
        y = rng.standard_normal((12, 9))
        den = TensorDenoiser(k=1, lam=0.08)
        np.testing.assert_allclose(den.fit(y).denoised_, den.transform(y), atol=1e-12)

    def test_score_is_negative_mse(self):
        rng = np.random.default_rng(4)
        y = rng.standard_normal((8, 8))
        den = TensorDenoiser(k=1, lam=0.1).fit(y)
        assert den.score(y) <= 0.0

    def test_params_expose_solver_choices(self):
        den = TensorDenoiser(solver_kind="accelerated-proximal-gradient")
        assert den.get_params()["solver_kind"] == "accelerated-proximal-gradient"
