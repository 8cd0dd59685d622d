import numpy as np
import pytest
from oracles import oracle_logc
from scipy import stats

from dyncopula import copula
from dyncopula.copula import CopulaSpec
from dyncopula.fit import fit_copula
from dyncopula.gof import GofConfig, chi2_quantile, d_bar, estimate_v, info_matrix_test
from dyncopula.pseudo import pseudo_observations


def fd_vech(family, theta, u):
    """Per-point vech(H + g g') from central differences of the oracle density."""
    theta = np.asarray(theta, dtype=float)
    k = theta.size
    hs = 1e-4 * np.maximum(1.0, np.abs(theta))

    def f(th):
        return oracle_logc(family, tuple(th), u)

    g = np.empty((u.shape[0], k))
    h = np.empty((u.shape[0], k, k))
    f0 = f(theta)
    for i in range(k):
        e = np.zeros(k)
        e[i] = hs[i]
        g[:, i] = (f(theta + e) - f(theta - e)) / (2 * hs[i])
        h[:, i, i] = (f(theta + e) - 2 * f0 + f(theta - e)) / hs[i] ** 2
        for j in range(i):
            d = np.zeros(k)
            d[j] = hs[j]
            h[:, i, j] = h[:, j, i] = (
                f(theta + e + d) - f(theta + e - d) - f(theta - e + d) + f(theta - e - d)
            ) / (4 * hs[i] * hs[j])
    r, c = np.tril_indices(k)
    return (h + g[:, :, None] * g[:, None, :])[:, r, c]


@pytest.mark.parametrize("dof,level,expected", [(1, 0.95, 3.841), (3, 0.95, 7.815), (1, 0.99, 6.635)])
def test_chi2_quantile_anchors(dof, level, expected):
    assert chi2_quantile(dof, level) == pytest.approx(expected, abs=1e-3)


@pytest.mark.parametrize(
    "spec",
    [CopulaSpec("gaussian", (0.4,)), CopulaSpec("clayton", (1.2,)), CopulaSpec("studentt", (0.3, 5.0))],
    ids=str,
)
def test_d_bar_matches_finite_difference_oracle(spec):
    u = pseudo_observations(copula.sample(spec, 300, 11)).u
    ref = fd_vech(spec.family.value, spec.theta, u).mean(axis=0)
    got = d_bar(u, spec)
    assert got.shape == ref.shape
    np.testing.assert_allclose(got, ref, rtol=2e-3, atol=2e-3 * np.abs(ref).max())


@pytest.mark.parametrize(
    "spec", [CopulaSpec("gaussian", (0.5,)), CopulaSpec("clayton", (2.0,))], ids=str
)
def test_information_equality_at_truth(spec):
    # E[H + g g'] = 0 under the true model; the mean shrinks like 1/sqrt(n).
    u = copula.sample(spec, 200_000, 12)
    per_point = fd_vech(spec.family.value, spec.theta, u[:2000])
    scale = per_point.std(axis=0)
    assert np.all(np.abs(d_bar(u, spec)) < 5 * scale / np.sqrt(u.shape[0]))


def test_v_matches_replication_variance():
    spec = CopulaSpec("clayton", (0.5,))
    n, reps = 500, 300
    stats_ = []
    v_hat = []
    for r in range(reps):
        ps = pseudo_observations(copula.sample(spec, n, 1000 + r))
        fit = fit_copula(ps, "clayton")
        stats_.append(np.sqrt(n) * d_bar(ps, fit.spec)[0])
        if r < 20:
            v_hat.append(estimate_v(ps, fit.spec, seed=r)[0, 0])
    assert np.mean(v_hat) == pytest.approx(np.var(stats_), rel=0.3)


def test_statistic_pvalue_and_shapes():
    ps = pseudo_observations(copula.sample(CopulaSpec("studentt", (0.5, 4.0)), 600, 13))
    fit = fit_copula(ps, "studentt")
    res = info_matrix_test(ps, fit.spec)
    assert res.dof == 3 and res.d_bar.shape == (3,) and res.v_matrix.shape == (3, 3)
    np.testing.assert_allclose(res.v_matrix, res.v_matrix.T)
    assert np.all(np.linalg.eigvalsh(res.v_matrix) >= -1e-10)
    assert res.statistic >= 0
    assert res.pvalue == pytest.approx(stats.chi2.sf(res.statistic, 3))
    assert res.rejects(0.95) == (res.statistic > chi2_quantile(3, 0.95))
    assert info_matrix_test(ps, fit.spec).statistic == res.statistic


def test_rank_invariance():
    x = copula.sample(CopulaSpec("gaussian", (0.5,)), 400, 14)
    a = pseudo_observations(x)
    b = pseudo_observations(np.column_stack([np.exp(3 * x[:, 0]), 2 * x[:, 1] - 5]))
    spec = fit_copula(a, "gaussian").spec
    assert info_matrix_test(a, spec).statistic == pytest.approx(info_matrix_test(b, spec).statistic)


def test_misspecified_family_rejected():
    ps = pseudo_observations(copula.sample(CopulaSpec("clayton", (3.0,)), 1500, 15))
    res = info_matrix_test(ps, fit_copula(ps, "gaussian").spec)
    assert res.rejects(0.95)


def test_boundary_nu_can_be_fixed():
    ps = pseudo_observations(copula.sample(CopulaSpec("gaussian", (0.5,)), 800, 16))
    fit = fit_copula(ps, "studentt")
    assert fit.boundary_hit
    res = info_matrix_test(ps, fit.spec, GofConfig(fix_nu_at_boundary=True), boundary_hit=True)
    assert res.dof == 1
    assert info_matrix_test(ps, fit.spec, boundary_hit=True).dof == 3


def test_config_errors():
    ps = pseudo_observations(copula.sample(CopulaSpec("gaussian", (0.5,)), 100, 17))
    spec = CopulaSpec("gaussian", (0.5,))
    with pytest.raises(ValueError):
        info_matrix_test(ps, spec, GofConfig(mc_draws=500))
    with pytest.raises(ValueError):
        estimate_v(ps, spec, mc_draws=10)
    with pytest.raises(ValueError):
        chi2_quantile(0, 0.95)
