"""
Rank-based information-matrix goodness-of-fit test
--------------------------------------------------

Under a correctly specified copula the expected Hessian of ``ln c`` and the
expected outer product of its score cancel. The test averages

    d_t = vech(H_t + g_t g_t')

over the pseudo-observations and studentizes the mean with an estimate of its
asymptotic variance that accounts for

* the estimation of theta (through ``grad D . B^-1 . score``), and
* the use of empirical margins (the rank terms ``W_n`` and ``M_n``).

The ``u``-integrals inside ``W_n`` and ``M_n`` are expectations under the
fitted copula and are evaluated by seeded Monte-Carlo.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import copula
from ._validation import FitError, check_probability
from .copula import NU_STEP, Family
from .pseudo import PseudoSample

DEFAULT_MC_DRAWS = 4096
RIDGE = 1e-8


@dataclass
class GofConfig:
    """Numerical settings of the information-matrix test.

    Attributes
    ----------
    mc_draws : int
        Copula draws for the rank-correction integrals (>= 1000).
    seed : int or None
        Base seed of the Monte-Carlo draws.
    u_step : float
        Central-difference step in ``u`` for the rank-correction integrands.
    cond_limit : float
        Condition number of ``V`` above which a ridge is added.
    fix_nu_at_boundary : bool
        Test a Student-t fit with ``nu`` on its bound as a one-parameter model
        (dof 1). Off by default, which keeps dof 3.
    """

    mc_draws: int = DEFAULT_MC_DRAWS
    seed: int | None = 0
    u_step: float = 1e-5
    cond_limit: float = 1e12
    fix_nu_at_boundary: bool = False


@dataclass
class GofResult:
    statistic: float
    dof: int
    pvalue: float
    d_bar: np.ndarray
    v_matrix: np.ndarray
    n_obs: int
    regularized: bool = False
    pinv_used: bool = False
    boundary_hit: bool = False
    free_params: tuple = field(default=(), repr=False)

    def rejects(self, level):
        """True if the statistic exceeds the chi-square ``level`` quantile."""
        return self.statistic > chi2_quantile(self.dof, level)


def chi2_quantile(dof, alpha):
    """Inverse chi-square CDF, e.g. ``chi2_quantile(1, 0.95) == 3.841...``."""
    dof = int(dof)
    if dof < 1:
        raise ValueError(f"dof must be >= 1, got {dof}")
    alpha = check_probability(alpha)
    return float(stats.chi2.ppf(alpha, dof))


def _vech_index(p):
    return np.tril_indices(p)


def _as_u(ps):
    u = ps.u if isinstance(ps, PseudoSample) else np.asarray(ps, dtype=np.float64)
    return np.clip(u, copula.DENSITY_EPS, 1.0 - copula.DENSITY_EPS)


def _free(spec, free):
    return tuple(range(spec.param_dim)) if free is None else tuple(free)


def _d_terms(family, theta, u, free):
    """Score (n, k), Hessian (n, k, k) and vech(H + g g') (n, q) over ``free``."""
    _, g, h = copula._terms_raw(family, theta, u, order=2)
    idx = list(free)
    g = g[:, idx]
    h = h[:, idx][:, :, idx]
    rows, cols = _vech_index(len(idx))
    m = h + g[:, :, None] * g[:, None, :]
    return g, h, m[:, rows, cols]


def d_bar(ps, spec, free=None):
    """Sample mean of ``vech(H_t + C_t)`` at the pseudo-observations."""
    u = _as_u(ps)
    return _d_terms(spec.family, spec.theta, u, _free(spec, free))[2].mean(axis=0)


def _theta_step(spec, k):
    value = spec.theta[k]
    if spec.family is Family.STUDENT_T and k == 1:
        return NU_STEP * max(1.0, value)
    h = 1e-5 * max(1.0, abs(value))
    if spec.family is not Family.CLAYTON:
        h = min(h, 0.5 * (1.0 - abs(value)))
    else:
        h = min(h, 0.5 * value)
    return h


def _grad_d_bar(u, spec, free):
    """Central-difference Jacobian of D-bar in the free parameters, shape (q, k)."""
    cols = []
    for k in free:
        h = _theta_step(spec, k)
        up = list(spec.theta)
        dn = list(spec.theta)
        up[k] += h
        dn[k] -= h
        d_up = _d_terms(spec.family, up, u, free)[2].mean(axis=0)
        d_dn = _d_terms(spec.family, dn, u, free)[2].mean(axis=0)
        cols.append((d_up - d_dn) / (2.0 * h))
    return np.column_stack(cols)


def _rank_integral(f, draws, integrand):
    """(1/m) sum_j [1{f_t <= U_j} - U_j] integrand_j for every f_t."""
    m = draws.shape[0]
    order = np.argsort(draws, kind="stable")
    us = draws[order]
    vs = integrand[order]
    tail = np.zeros((m + 1, vs.shape[1]))
    tail[:m] = np.cumsum(vs[::-1], axis=0)[::-1]
    pos = np.searchsorted(us, f, side="left")
    return (tail[pos] - (draws[:, None] * integrand).sum(axis=0)) / m


def _mc_integrands(spec, free, mc_draws, seed, u_step):
    """Copula draws and the u-derivatives needed by W_n and M_n."""
    draws = copula.sample(spec, mc_draws, seed)
    draws = np.clip(draws, 2.0 * u_step, 1.0 - 2.0 * u_step)
    m = draws.shape[0]
    _, g, h = copula._shifted_terms(spec.family, spec.theta, draws, u_step, order=2)
    idx = list(free)
    g = g[:, idx]
    h = h[:, idx][:, :, idx]
    rows, cols = _vech_index(len(idx))
    d = (h + g[:, :, None] * g[:, None, :])[:, rows, cols]
    score_u = []
    vech_u = []
    for n in range(2):
        sl_p = slice(2 * n * m, (2 * n + 1) * m)
        sl_m = slice((2 * n + 1) * m, (2 * n + 2) * m)
        score_u.append((g[sl_p] - g[sl_m]) / (2.0 * u_step))
        vech_u.append((d[sl_p] - d[sl_m]) / (2.0 * u_step))
    return draws, score_u, vech_u


def _influence(u, spec, free, mc_draws, seed, u_step):
    """Per-observation influence terms whose covariance is V, plus D-bar."""
    g, h, d = _d_terms(spec.family, spec.theta, u, free)
    info = -h.mean(axis=0)
    try:
        info_inv = np.linalg.inv(info)
    except np.linalg.LinAlgError as exc:
        raise FitError("singular information matrix in goodness-of-fit test") from exc
    jac = _grad_d_bar(u, spec, free)
    draws, score_u, vech_u = _mc_integrands(spec, free, mc_draws, seed, u_step)
    if not all(np.all(np.isfinite(a)) for a in score_u + vech_u):
        raise FitError("non-finite Monte-Carlo integrand in goodness-of-fit test")
    w = sum(_rank_integral(u[:, n], draws[:, n], score_u[n]) for n in range(2))
    m = sum(_rank_integral(u[:, n], draws[:, n], vech_u[n]) for n in range(2))
    psi = d + (g + w) @ (jac @ info_inv).T + m
    return psi, d.mean(axis=0)


def estimate_v(ps, spec, mc_draws=DEFAULT_MC_DRAWS, seed=0, *, free=None, u_step=1e-5):
    """Plug-in estimate of the asymptotic covariance of ``sqrt(T) * D-bar``.

    Returns the symmetrized sample covariance of the influence terms, before
    any regularization.
    """
    if int(mc_draws) < 1000:
        raise ValueError(f"mc_draws must be >= 1000, got {mc_draws}")
    u = _as_u(ps)
    psi, _ = _influence(u, spec, _free(spec, free), int(mc_draws), seed, u_step)
    centered = psi - psi.mean(axis=0)
    v = centered.T @ centered / u.shape[0]
    return 0.5 * (v + v.T)


def info_matrix_test(ps, spec, config=None, *, boundary_hit=False):
    """Information-matrix test of ``spec`` on the pseudo-sample ``ps``.

    ``spec`` should be the pseudo-ML fit on ``ps``. The statistic is
    ``T * D' V^-1 D`` with ``p(p+1)/2`` degrees of freedom.

    Parameters
    ----------
    ps : PseudoSample or array of shape (T, 2)
    spec : CopulaSpec
    config : GofConfig, optional
    boundary_hit : bool
        Whether the fit sits on a parameter bound; with
        ``config.fix_nu_at_boundary`` a Student-t fit is then tested over
        ``rho`` only.

    Returns
    -------
    GofResult
    """
    cfg = config or GofConfig()
    if int(cfg.mc_draws) < 1000:
        raise ValueError(f"mc_draws must be >= 1000, got {cfg.mc_draws}")
    u = _as_u(ps)
    t_len = u.shape[0]
    free = None
    if cfg.fix_nu_at_boundary and boundary_hit and spec.family is Family.STUDENT_T:
        free = (0,)
    free = _free(spec, free)
    psi, dbar = _influence(u, spec, free, int(cfg.mc_draws), cfg.seed, cfg.u_step)
    centered = psi - psi.mean(axis=0)
    v = centered.T @ centered / t_len
    v = 0.5 * (v + v.T)
    q = v.shape[0]

    regularized = False
    pinv_used = False
    v_used = v
    if not np.isfinite(np.linalg.cond(v)) or np.linalg.cond(v) > cfg.cond_limit:
        v_used = v + RIDGE * max(np.trace(v), np.finfo(float).tiny) / q * np.eye(q)
        regularized = True
    cond = np.linalg.cond(v_used)
    if np.isfinite(cond) and cond <= cfg.cond_limit:
        solved = np.linalg.solve(v_used, dbar)
    else:
        solved = np.linalg.pinv(v_used) @ dbar
        pinv_used = True
    statistic = max(float(t_len * dbar @ solved), 0.0)
    return GofResult(
        statistic=statistic,
        dof=q,
        pvalue=float(stats.chi2.sf(statistic, q)),
        d_bar=dbar,
        v_matrix=v,
        n_obs=t_len,
        regularized=regularized,
        pinv_used=pinv_used,
        boundary_hit=bool(boundary_hit),
        free_params=free,
    )
