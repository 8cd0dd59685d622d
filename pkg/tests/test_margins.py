import warnings

import numpy as np
import pytest
from scipy import stats
from sklearn.base import clone

from dyncopula._validation import FitError, ParameterError
from dyncopula.margins import (
    Garch21,
    _loglik,
    _sigma2,
    fit_garch21,
    forecast_sigma,
    garch21_path,
    log_returns,
    simulate_garch21,
    standardized_residuals,
)

SP500 = (5.833e-04, 3.218e-06, 2.726e-02, 1.120e-01, 8.335e-01)


def naive_sigma2(params, r, var0):
    mu, a0, a1, a2, b1 = params
    xi = r - mu
    s2 = np.empty_like(r)
    for t in range(r.size):
        prev_s2 = var0 if t == 0 else s2[t - 1]
        x1 = xi[t - 1] ** 2 if t >= 1 else 0.0
        x2 = xi[t - 2] ** 2 if t >= 2 else 0.0
        s2[t] = a0 + a1 * x1 + a2 * x2 + b1 * prev_s2
    return s2


def test_log_returns():
    np.testing.assert_allclose(log_returns([100.0, 110.0, 99.0]), np.log([1.1, 0.9]))
    with pytest.raises(ValueError):
        log_returns([1.0, 0.0, 2.0])


def test_variance_recursion_matches_loop(rng):
    r = rng.normal(0, 0.01, 400)
    np.testing.assert_allclose(_sigma2(SP500, r, 1e-4), naive_sigma2(SP500, r, 1e-4), rtol=1e-12)


def test_loglik_is_gaussian_sum(rng):
    r = rng.normal(0, 0.01, 300)
    s2 = naive_sigma2(SP500, r, np.var(r))
    expected = stats.norm.logpdf(r, SP500[0], np.sqrt(s2)).sum()
    assert _loglik(np.array(SP500), r, np.var(r)) == pytest.approx(expected, rel=1e-12)


def test_path_matches_recursion():
    eps = np.random.default_rng(1).standard_normal(200)
    r = garch21_path(SP500, eps)
    var0 = SP500[1] / (1 - sum(SP500[2:]))
    # the path's first variance equals a0 + b1 * unconditional variance
    s2 = naive_sigma2(SP500, r, var0)
    np.testing.assert_allclose((r - SP500[0]) / np.sqrt(s2), eps, rtol=1e-10)


def test_simulation_variance_near_unconditional():
    r = simulate_garch21(SP500, 100_000, seed=3)
    uncond = SP500[1] / (1 - sum(SP500[2:]))
    assert np.var(r) == pytest.approx(uncond, rel=0.1)
    np.testing.assert_array_equal(r[:50], simulate_garch21(SP500, 100_000, seed=3)[:50])


def test_fit_recovers_parameters():
    r = simulate_garch21(SP500, 3000, seed=11)
    fit = fit_garch21(r)
    z = (fit.params - np.array(SP500)) / fit.stderr
    assert np.all(np.abs(z) < 4)
    assert fit.converged
    assert fit.persistence < 1
    np.testing.assert_allclose(fit.resid, (r - fit.mu) / fit.sigma)


def test_fit_is_scale_equivariant():
    r = simulate_garch21(SP500, 1500, seed=5)
    a = fit_garch21(r)
    b = fit_garch21(100 * r)
    np.testing.assert_allclose(b.params[2:], a.params[2:], atol=1e-4)
    assert b.alpha0 == pytest.approx(1e4 * a.alpha0, rel=1e-2)
    np.testing.assert_allclose(a.resid, b.resid, atol=1e-3)


def test_warm_start_reaches_same_optimum():
    r = simulate_garch21(SP500, 1500, seed=6)
    cold = fit_garch21(r)
    warm = fit_garch21(r, start=cold.params)
    assert warm.loglik == pytest.approx(cold.loglik, abs=1e-3)


def test_forecast_sigma_formula():
    r = simulate_garch21(SP500, 800, seed=2)
    f = fit_garch21(r)
    xi = r - f.mu
    s2 = f.alpha0 + f.alpha1 * xi[-1] ** 2 + f.alpha2 * xi[-2] ** 2 + f.beta1 * f.sigma[-1] ** 2
    assert forecast_sigma(f) == pytest.approx(np.sqrt(s2))


def test_boundary_warning():
    # a sustained volatility jump pushes the fit onto the stationarity bound
    rng = np.random.default_rng(0)
    r = np.concatenate([rng.normal(0, 0.005, 700), rng.normal(0, 0.05, 300)])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = fit_garch21(r)
    assert fit.persistence > 1 - 1e-6
    assert any("stationarity boundary" in str(w.message) for w in caught)


@pytest.mark.parametrize("bad", [np.zeros(400), np.ones(100)])
def test_fit_errors(bad):
    with pytest.raises(FitError):
        fit_garch21(bad)


def test_simulate_rejects_nonstationary():
    with pytest.raises(ParameterError):
        simulate_garch21((0, 1e-6, 0.3, 0.3, 0.5), 10)


def test_transformer_api():
    r = simulate_garch21(SP500, 600, seed=4)
    est = clone(Garch21(max_iter=300))
    z = est.fit(r).transform(r)
    np.testing.assert_allclose(z, est.fit_.resid, rtol=1e-10)
    assert est.get_params() == {"max_iter": 300, "tol": 1e-8}
    assert est.forecast_sigma() == pytest.approx(forecast_sigma(est.fit_))


def test_standardized_residuals_columns():
    r = np.column_stack([simulate_garch21(SP500, 500, seed=s) for s in (1, 2)])
    resid, fits = standardized_residuals(r)
    assert resid.shape == (500, 2) and len(fits) == 2
    np.testing.assert_allclose(resid[:, 1], fits[1].resid)
