"""Log-returns and GARCH(2,1) marginal filtering with Gaussian innovations."""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize, signal
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import FitError, ParameterError, check_series

MIN_GARCH_LEN = 300
PARAM_NAMES = ("mu", "alpha0", "alpha1", "alpha2", "beta1")


def log_returns(prices):
    """``ln(S[t+1] / S[t])`` for a positive price series."""
    prices = check_series(prices, min_len=2, name="prices")
    if np.any(prices <= 0):
        raise ValueError("prices must be strictly positive")
    return np.diff(np.log(prices))


@dataclass
class GarchFit:
    """Fitted GARCH(2,1): ``sigma2[t] = a0 + a1 xi[t-1]^2 + a2 xi[t-2]^2 + b1 sigma2[t-1]``
    with ``xi = r - mu`` and ``resid = xi / sigma``."""

    mu: float
    alpha0: float
    alpha1: float
    alpha2: float
    beta1: float
    sigma: np.ndarray
    resid: np.ndarray
    loglik: float
    stderr: np.ndarray
    returns: np.ndarray
    converged: bool = True
    n_iter: int = 0

    @property
    def params(self):
        return np.array([self.mu, self.alpha0, self.alpha1, self.alpha2, self.beta1])

    @property
    def persistence(self):
        return self.alpha1 + self.alpha2 + self.beta1

    @property
    def unconditional_variance(self):
        return self.alpha0 / (1.0 - self.persistence)


def _check_params(params):
    mu, a0, a1, a2, b1 = (float(p) for p in params)
    if a0 <= 0 or min(a1, a2, b1) < 0:
        raise ParameterError("GARCH needs alpha0 > 0 and alpha1, alpha2, beta1 >= 0")
    if a1 + a2 + b1 >= 1:
        raise ParameterError("GARCH parameters are not covariance stationary")
    return mu, a0, a1, a2, b1


def _sigma2(params, r, var0):
    """Conditional variances with sigma2_0 = var0 and zero pre-sample shocks."""
    mu, a0, a1, a2, b1 = params
    xi2 = (r - mu) ** 2
    drive = np.full(r.shape[0], a0)
    drive[1:] += a1 * xi2[:-1]
    drive[2:] += a2 * xi2[:-2]
    out, _ = signal.lfilter([1.0], [1.0, -b1], drive, zi=[b1 * var0])
    return out


def _loglik(params, r, var0):
    s2 = _sigma2(params, r, var0)
    if np.any(s2 <= 0) or not np.all(np.isfinite(s2)):
        return -np.inf
    xi2 = (r - params[0]) ** 2
    return -0.5 * float(np.sum(np.log(2.0 * np.pi) + np.log(s2) + xi2 / s2))


# Unconstrained coordinates: (mu, log a0, z1, z2, z3) with
# (a1, a2, b1, slack) = softmax(z1, z2, z3, 0), which keeps the
# optimizer strictly inside the stationary region.
def _to_z(params):
    mu, a0, a1, a2, b1 = params
    slack = 1.0 - a1 - a2 - b1
    w = np.maximum([a1, a2, b1], 1e-8)
    return np.concatenate([[mu, np.log(a0)], np.log(w / slack)])


def _from_z(z):
    e = np.exp(np.concatenate([z[2:], [0.0]]) - max(np.max(z[2:]), 0.0))
    w = e / e.sum()
    return np.array([z[0], np.exp(z[1]), w[0], w[1], w[2]])


def _numerical_hessian(f, x, rel=1e-4):
    k = x.size
    h = rel * np.maximum(np.abs(x), 1e-2)
    hess = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            ei = np.zeros(k)
            ej = np.zeros(k)
            ei[i] = h[i]
            ej[j] = h[j]
            val = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (
                4.0 * h[i] * h[j]
            )
            hess[i, j] = hess[j, i] = val
    return hess


def fit_garch21(returns, *, start=None, max_iter=500, tol=1e-8):
    """Gaussian maximum-likelihood GARCH(2,1).

    Parameters
    ----------
    returns : array-like of shape (T,)
        At least 300 observations.
    start : sequence of 5 floats, optional
        Warm start ``(mu, alpha0, alpha1, alpha2, beta1)``.
    max_iter : int, default=500
    tol : float, default=1e-8
        Relative log-likelihood change at which the optimizer stops.

    Returns
    -------
    GarchFit

    Raises
    ------
    FitError
        Constant series or optimizer failure.
    """
    r = check_series(returns, min_len=1, name="returns")
    if r.size < MIN_GARCH_LEN:
        raise FitError(f"GARCH(2,1) fitting needs at least {MIN_GARCH_LEN} returns, got {r.size}")
    scale = float(np.std(r))
    if not scale > 0:
        raise FitError("constant return series: variance is zero")
    x = r / scale
    var0 = float(np.var(x))

    if start is None:
        p0 = np.array([x.mean(), 0.1 * var0, 0.05, 0.05, 0.8])
    else:
        p0 = np.array(start, dtype=float)
        p0 = np.array([p0[0] / scale, p0[1] / scale**2, *p0[2:]])
        if p0[2:].sum() >= 0.999:
            p0[2:] *= 0.99 / p0[2:].sum()
        p0[1] = max(p0[1], 1e-8)

    def nll(z):
        val = -_loglik(_from_z(z), x, var0)
        return val / x.size if np.isfinite(val) else 1e10

    res = optimize.minimize(
        nll, _to_z(p0), method="L-BFGS-B",
        options={"maxiter": max_iter, "ftol": tol, "maxfun": 20 * max_iter},
    )
    if not np.isfinite(res.fun) or res.fun >= 1e10 or (not res.success and res.nit >= max_iter):
        raise FitError(f"GARCH(2,1) optimizer did not converge: {res.message}")
    p = _from_z(res.x)
    loglik_scaled = _loglik(p, x, var0)

    def nll_nat(theta):
        return -_loglik(theta, x, var0)

    try:
        cov = np.linalg.inv(_numerical_hessian(nll_nat, p))
        se = np.sqrt(np.where(np.diag(cov) > 0, np.diag(cov), np.nan))
    except np.linalg.LinAlgError:
        se = np.full(5, np.nan)

    unscale = np.array([scale, scale**2, 1.0, 1.0, 1.0])
    params = p * unscale
    sigma = np.sqrt(_sigma2(params, r, float(np.var(r))))
    fit = GarchFit(
        *params,
        sigma=sigma,
        resid=(r - params[0]) / sigma,
        loglik=float(loglik_scaled - r.size * np.log(scale)),
        stderr=se * unscale,
        returns=r,
        converged=bool(res.success),
        n_iter=int(res.nit),
    )
    if fit.persistence > 1.0 - 1e-6:
        warnings.warn(
            f"GARCH(2,1) optimum on the stationarity boundary "
            f"(alpha1 + alpha2 + beta1 = {fit.persistence:.8f})",
            RuntimeWarning,
            stacklevel=2,
        )
    return fit


def forecast_sigma(fit):
    """One-step-ahead conditional volatility after the last observation."""
    xi = fit.returns - fit.mu
    last = xi[-1] ** 2
    prev = xi[-2] ** 2 if xi.size > 1 else 0.0
    s2 = fit.alpha0 + fit.alpha1 * last + fit.alpha2 * prev + fit.beta1 * fit.sigma[-1] ** 2
    return float(np.sqrt(s2))


def garch21_path(params, innovations):
    """Returns driven by given standard innovations.

    The recursion starts at the unconditional variance with zero pre-sample
    shocks.
    """
    mu, a0, a1, a2, b1 = _check_params(params)
    eps = check_series(innovations, min_len=1, name="innovations")
    s2 = a0 / (1.0 - a1 - a2 - b1)
    xi1 = xi2 = 0.0
    out = np.empty(eps.size)
    for t in range(eps.size):
        s2 = a0 + a1 * xi1 + a2 * xi2 + b1 * s2
        xi = np.sqrt(s2) * eps[t]
        out[t] = mu + xi
        xi2, xi1 = xi1, xi * xi
    return out


def simulate_garch21(params, T, seed=None, burn=500):
    """Simulate ``T`` returns from a stationary GARCH(2,1).

    ``params`` is ``(mu, alpha0, alpha1, alpha2, beta1)``. The first ``burn``
    draws are discarded.
    """
    _check_params(params)
    T = int(T)
    if T < 1:
        raise ValueError("T must be positive")
    eps = np.random.default_rng(seed).standard_normal(T + int(burn))
    return garch21_path(params, eps)[int(burn):]


class Garch21(TransformerMixin, BaseEstimator):
    """GARCH(2,1) volatility filter; ``transform`` returns standardized residuals.

    Parameters
    ----------
    max_iter : int, default=500
    tol : float, default=1e-8

    Attributes
    ----------
    fit_ : GarchFit
    params_ : ndarray of shape (5,)
        ``(mu, alpha0, alpha1, alpha2, beta1)``.
    """

    def __init__(self, max_iter=500, tol=1e-8):
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y=None):
        self.fit_ = fit_garch21(np.ravel(X), max_iter=self.max_iter, tol=self.tol)
        self.params_ = self.fit_.params
        return self

    def transform(self, X):
        check_is_fitted(self)
        r = check_series(np.ravel(X), min_len=1, name="X")
        s2 = _sigma2(self.params_, r, float(np.var(r)) if r.size > 1 else self.fit_.unconditional_variance)
        return (r - self.params_[0]) / np.sqrt(s2)

    def forecast_sigma(self):
        check_is_fitted(self)
        return forecast_sigma(self.fit_)


def standardized_residuals(returns):
    """Fit GARCH(2,1) to each column of a ``(T, 2)`` return matrix."""
    returns = np.asarray(returns, dtype=float)
    fits = [fit_garch21(returns[:, j]) for j in range(returns.shape[1])]
    return np.column_stack([f.resid for f in fits]), fits
