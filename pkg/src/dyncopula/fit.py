"""Pseudo-maximum-likelihood copula estimation and AIC family selection."""

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import copula
from ._validation import FitError
from .copula import FAMILY_ORDER, CopulaSpec, Family, param_bounds
from .pseudo import PseudoSample, pseudo_observations

MIN_FIT_SIZE = 30
GRAD_TOL = 1e-4


@dataclass
class FitResult:
    spec: CopulaSpec
    loglik: float
    aic: float
    converged: bool
    stderr: np.ndarray
    boundary_hit: bool
    n_obs: int = 0
    grad_norm: float = field(default=np.nan, repr=False)

    @property
    def family(self):
        return self.spec.family


def _as_u(ps):
    if isinstance(ps, PseudoSample):
        return ps.u
    return np.asarray(ps, dtype=np.float64)


def _kendall(u):
    tau = stats.kendalltau(u[:, 0], u[:, 1]).statistic
    return 0.0 if not np.isfinite(tau) else float(tau)


def _starts(family, u, start):
    tau = _kendall(u)
    if family is Family.CLAYTON:
        t0 = 2.0 * tau / (1.0 - tau) if 0.0 < tau < 0.95 else (0.1 if tau <= 0 else 40.0)
        t0 = float(np.clip(t0, 1e-3, 40.0))
        starts = [(t0,), (t0 * 1.5,), (t0 / 1.5,)]
    else:
        r0 = float(np.clip(np.sin(np.pi * tau / 2.0), -0.95, 0.95))
        d = 0.2 * (1.0 - abs(r0))
        starts = [(r0,), (float(np.clip(r0 + d, -0.98, 0.98)),), (float(np.clip(r0 - d, -0.98, 0.98)),)]
    if start is not None:
        starts = [tuple(start)] + starts
    return starts


def _objective(family, u):
    def fun(z):
        logc, grad, _ = copula._terms(CopulaSpec(family, (float(z[0]),)), u, order=1)
        return -float(np.mean(logc)), -grad.mean(axis=0)

    return fun


# Student-t is fitted by profiling: for fixed nu the quantiles are computed once
# and rho is optimized cheaply; the profile is then maximized over 1/nu, in
# which the likelihood is far better conditioned than in nu.
_INV_NU_GRID = 9


def _t_profile(u, rho0):
    rho_lo, rho_hi = param_bounds(Family.STUDENT_T)[0]
    cache = {}

    def profile(inv_nu):
        key = float(inv_nu)
        if key in cache:
            return cache[key]
        nu = 1.0 / inv_nu
        x = copula.t_quantile(u[:, 0], nu)
        y = copula.t_quantile(u[:, 1], nu)

        def nll(rho):
            return -float(np.mean(copula._t_core(rho, nu, x, y, 0)[0]))

        lo = max(rho_lo, rho0 - 0.5)
        hi = min(rho_hi, rho0 + 0.5)
        res = optimize.minimize_scalar(nll, bounds=(lo, hi), method="bounded", options={"xatol": 1e-9})
        rho = float(res.x)
        if min(rho - lo, hi - rho) < 1e-6 and (lo > rho_lo or hi < rho_hi):
            res = optimize.minimize_scalar(
                nll, bounds=(rho_lo, rho_hi), method="bounded", options={"xatol": 1e-9}
            )
            rho = float(res.x)
        cache[key] = (float(res.fun), rho)
        return cache[key]

    return profile


def _fit_student(u, start, max_iter):
    lo, hi = (1.0 / b for b in reversed(param_bounds(Family.STUDENT_T)[1]))
    tau = _kendall(u)
    rho0 = float(np.clip(np.sin(np.pi * tau / 2.0), -0.95, 0.95))
    if start is not None:
        rho0 = float(np.clip(start[0], -0.95, 0.95))
    profile = _t_profile(u, rho0)
    grid = list(np.linspace(lo, hi, _INV_NU_GRID))
    if start is not None:
        grid.append(float(np.clip(1.0 / start[1], lo, hi)))
    grid.sort()
    vals = [profile(g)[0] for g in grid]
    k = int(np.argmin(vals))
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(
        lambda z: profile(z)[0], bounds=(a, b), method="bounded",
        options={"xatol": 1e-8, "maxiter": max_iter},
    )
    best = min([(res.x, profile(res.x)[0])] + list(zip(grid, vals)), key=lambda p: p[1])[0]
    return (profile(best)[1], 1.0 / best), bool(res.success)


def _projected_grad(grad, theta, bounds):
    pg = np.array(grad, dtype=float)
    for k, (lo, hi) in enumerate(bounds):
        if theta[k] <= lo + 1e-9 and pg[k] > 0:
            pg[k] = 0.0
        if theta[k] >= hi - 1e-9 and pg[k] < 0:
            pg[k] = 0.0
    return pg


def fit_copula(ps, family, *, start=None, n_starts=3, max_iter=200):
    """Maximize the pseudo-log-likelihood of ``family`` on a pseudo-sample.

    Parameters
    ----------
    ps : PseudoSample or array of shape (T, 2)
        Rank uniforms, ``T >= 30``.
    family : Family or str
    start : sequence of float, optional
        Warm start. With ``n_starts=1`` it is the only start.
    n_starts : int, default=3
        One-parameter families: number of L-BFGS-B starts (Kendall-tau
        inversion plus perturbations). Student-t is profiled over a grid in
        ``1/nu`` instead, with ``start`` added to the grid.

    Returns
    -------
    FitResult
        ``converged`` is False when the optimizer failed; no exception is raised
        in that case.
    """
    family = Family.parse(family)
    u = np.clip(_as_u(ps), copula.DENSITY_EPS, 1.0 - copula.DENSITY_EPS)
    t_len = u.shape[0]
    if t_len < MIN_FIT_SIZE:
        raise FitError(f"need at least {MIN_FIT_SIZE} observations to fit, got {t_len}")
    bounds = param_bounds(family)
    if family is Family.STUDENT_T:
        theta, _ = _fit_student(u, start, max_iter)
    else:
        fun = _objective(family, u)
        best = None
        for x0 in _starts(family, u, start)[: max(1, int(n_starts))]:
            x0 = np.clip(x0, [b[0] for b in bounds], [b[1] for b in bounds])
            try:
                res = optimize.minimize(
                    fun, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                    options={"maxiter": max_iter, "ftol": 1e-13, "gtol": 1e-8},
                )
            except (FloatingPointError, ValueError):
                continue
            if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
                best = res
        if best is None:
            raise FitError(f"{family.label} fit failed from every start")
        theta = (float(best.x[0]),)

    theta = tuple(float(np.clip(t, lo, hi)) for t, (lo, hi) in zip(theta, bounds))
    spec = CopulaSpec(family, theta)
    logc, grad, hess = copula._terms(spec, u, order=2)
    loglik = float(np.sum(logc))
    boundary = any(
        t <= lo + 1e-5 * (1 + abs(lo)) or t >= hi - 1e-5 * (1 + abs(hi))
        for t, (lo, hi) in zip(theta, bounds)
    )
    gnorm = float(np.max(np.abs(_projected_grad(-grad.mean(axis=0), theta, bounds))))
    info = -hess.sum(axis=0)
    try:
        cov = np.linalg.inv(info)
        stderr = np.sqrt(np.where(np.diag(cov) > 0, np.diag(cov), np.nan))
    except np.linalg.LinAlgError:
        stderr = np.full(len(theta), np.nan)
    k = len(theta)
    return FitResult(
        spec=spec,
        loglik=loglik,
        aic=2.0 * k - 2.0 * loglik,
        converged=bool(gnorm <= GRAD_TOL or boundary),
        stderr=stderr,
        boundary_hit=bool(boundary),
        n_obs=t_len,
        grad_norm=gnorm,
    )


def fit_families(ps, families=FAMILY_ORDER, **kwargs):
    """Fit every family; failed fits map to ``None``."""
    out = {}
    for fam in sorted({Family.parse(f) for f in families}, key=FAMILY_ORDER.index):
        try:
            out[fam] = fit_copula(ps, fam, **kwargs)
        except FitError:
            out[fam] = None
    return out


def best_fit(fits):
    """Converged fit with the smallest AIC from a :func:`fit_families` result."""
    best = None
    for res in fits.values():
        if res is None or not res.converged:
            continue
        if best is None or res.aic < best.aic:
            best = res
    if best is None:
        raise FitError("no copula family could be fitted")
    return best


def select_family(ps, families=FAMILY_ORDER, **kwargs):
    """Fit each family and return the converged fit with the smallest AIC.

    Ties go to the earlier family in Gaussian < StudentT < Clayton order.
    """
    if not families:
        raise ValueError("families must be non-empty")
    return best_fit(fit_families(ps, families, **kwargs))


class CopulaSelector(BaseEstimator):
    """AIC copula selection as an estimator.

    ``fit`` rank-transforms ``X`` and stores the winning fit.

    Parameters
    ----------
    families : tuple of str, default=("gaussian", "studentt", "clayton")
    n_starts : int, default=3

    Attributes
    ----------
    fit_result_ : FitResult
    spec_ : CopulaSpec
    fits_ : dict
        Every family's fit (``None`` when it failed).
    """

    def __init__(self, families=("gaussian", "studentt", "clayton"), n_starts=3):
        self.families = families
        self.n_starts = n_starts

    def fit(self, X, y=None):
        ps = pseudo_observations(X)
        self.fits_ = fit_families(ps, self.families, n_starts=self.n_starts)
        self.fit_result_ = best_fit(self.fits_)
        self.spec_ = self.fit_result_.spec
        self.n_features_in_ = 2
        return self

    def score(self, X, y=None):
        """Mean pseudo-log-likelihood of ``X`` under the selected copula."""
        check_is_fitted(self)
        return float(np.mean(copula.log_density(self.spec_, pseudo_observations(X).u)))

    def sample(self, n, seed=None):
        check_is_fitted(self)
        return copula.sample(self.spec_, n, seed)
