import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import oracle_logc
from scipy import optimize
from sklearn.base import clone

from dyncopula import copula
from dyncopula._validation import FitError
from dyncopula.copula import CopulaSpec
from dyncopula.fit import CopulaSelector, best_fit, fit_copula, fit_families, select_family
from dyncopula.pseudo import pseudo_observations


def ranks(spec, n, seed):
    return pseudo_observations(copula.sample(spec, n, seed))


@pytest.mark.parametrize(
    "spec", [CopulaSpec("gaussian", (0.5,)), CopulaSpec("clayton", (1.5,))], ids=str
)
def test_one_parameter_mle_matches_bounded_search(spec):
    ps = ranks(spec, 800, 1)
    fam = spec.family.value
    lo, hi = (-0.999, 0.999) if fam == "gaussian" else (1e-3, 30.0)
    ref = optimize.minimize_scalar(
        lambda t: -oracle_logc(fam, (t,), ps.u).sum(), bounds=(lo, hi), method="bounded",
        options={"xatol": 1e-10},
    )
    fit = fit_copula(ps, fam)
    assert fit.spec.theta[0] == pytest.approx(ref.x, abs=1e-5)
    assert fit.loglik == pytest.approx(-ref.fun, rel=1e-9)
    assert fit.aic == pytest.approx(2 - 2 * fit.loglik)
    assert fit.converged and not fit.boundary_hit


def test_student_mle_matches_nelder_mead():
    ps = ranks(CopulaSpec("studentt", (0.6, 4.0)), 1000, 2)
    ref = optimize.minimize(
        lambda z: -oracle_logc("studentt", (z[0], z[1]), ps.u).sum(), x0=[0.5, 6.0],
        method="Nelder-Mead", options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 4000},
    )
    fit = fit_copula(ps, "studentt")
    assert fit.spec.theta[0] == pytest.approx(ref.x[0], abs=1e-4)
    assert fit.spec.theta[1] == pytest.approx(ref.x[1], rel=1e-3)
    assert fit.loglik >= -ref.fun - 1e-6
    assert fit.aic == pytest.approx(4 - 2 * fit.loglik)


def test_stderr_from_observed_information():
    ps = ranks(CopulaSpec("clayton", (2.0,)), 1000, 3)
    fit = fit_copula(ps, "clayton")
    t, h = fit.spec.theta[0], 1e-4
    ll = [oracle_logc("clayton", (t + d,), ps.u).sum() for d in (-h, 0, h)]
    info = -(ll[0] - 2 * ll[1] + ll[2]) / h**2
    assert fit.stderr[0] == pytest.approx(1 / np.sqrt(info), rel=1e-3)


def test_student_on_gaussian_data_hits_upper_bound():
    ps = ranks(CopulaSpec("gaussian", (0.5,)), 2000, 4)
    fit = fit_copula(ps, "studentt")
    assert fit.spec.theta[1] == pytest.approx(50.0)
    assert fit.boundary_hit and fit.converged


@pytest.mark.parametrize(
    "spec", [CopulaSpec("gaussian", (0.7,)), CopulaSpec("studentt", (0.7, 3.0)), CopulaSpec("clayton", (3.0,))],
    ids=str,
)
def test_aic_selects_true_family(spec):
    best = select_family(ranks(spec, 3000, 5))
    assert best.spec.family is spec.family


def test_selection_tie_order_and_failures():
    fits = fit_families(ranks(CopulaSpec("gaussian", (0.3,)), 300, 6))
    assert list(f.value for f in fits) == ["gaussian", "studentt", "clayton"]
    with pytest.raises(FitError):
        best_fit({k: None for k in fits})
    with pytest.raises(ValueError):
        select_family(ranks(CopulaSpec("gaussian", (0.3,)), 300, 6), ())


def test_too_few_rows():
    with pytest.raises(FitError):
        fit_copula(np.full((29, 2), 0.5), "gaussian")


@settings(max_examples=10)
@given(rho=st.floats(-0.8, 0.8), seed=st.integers(0, 1000))
def test_gaussian_fit_is_exchangeable(rho, seed):
    u = ranks(CopulaSpec("gaussian", (rho,)), 200, seed).u
    a = fit_copula(u, "gaussian").spec.theta[0]
    b = fit_copula(u[:, ::-1], "gaussian").spec.theta[0]
    assert a == pytest.approx(b, abs=1e-7)


def test_copula_selector_estimator(rng):
    x = copula.sample(CopulaSpec("clayton", (3.0,)), 1500, 8)
    est = clone(CopulaSelector(families=("gaussian", "clayton")))
    assert est.get_params() == {"families": ("gaussian", "clayton"), "n_starts": 3}
    est.fit(x)
    assert est.spec_.family.value == "clayton"
    assert set(f.value for f in est.fits_) == {"gaussian", "clayton"}
    assert est.score(x) == pytest.approx(est.fit_result_.loglik / 1500, rel=1e-9)
    assert est.sample(5, seed=1).shape == (5, 2)
