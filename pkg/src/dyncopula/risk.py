"""Portfolio loss, Monte-Carlo VaR/ES under copula + GARCH margins, backtesting."""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from . import copula
from ._validation import check_bivariate, check_probability
from .copula import CopulaSpec
from .margins import MIN_GARCH_LEN, GarchFit, fit_garch21, forecast_sigma

DEFAULT_WEIGHTS = (0.5, 0.5)
MIN_SIMS = 1000
MIN_BACKTEST = 50


def portfolio_loss(prices_t, returns_next, weights=DEFAULT_WEIGHTS):
    """One-period loss ``-(V[t+1] - V[t]) = -sum_i w_i S_i (exp(X_i) - 1)``.

    Parameters
    ----------
    prices_t : array-like of shape (2,) or (n, 2)
        Asset prices at ``t``.
    returns_next : array-like of shape (2,) or (n, 2)
        Log-returns over ``(t, t+1]``.
    weights : pair of float
        Holdings ``lambda_i`` (units of each asset).

    Returns
    -------
    float or ndarray of shape (n,)
        Positive values are losses.
    """
    s = np.asarray(prices_t, dtype=float)
    x = np.asarray(returns_next, dtype=float)
    w = np.asarray(weights, dtype=float)
    if np.any(s <= 0):
        raise ValueError("prices must be positive")
    loss = -np.sum(w * s * np.expm1(x), axis=-1)
    return float(loss) if np.ndim(loss) == 0 else loss


@dataclass
class RiskPoint:
    """VaR and ES of the next-period loss on a unit portfolio."""

    t: object
    var_value: float
    es_value: float
    spec_used: CopulaSpec
    sigma_forecasts: tuple

    def __post_init__(self):
        if not (np.isfinite(self.var_value) and np.isfinite(self.es_value)):
            raise ValueError("VaR and ES must be finite")
        if self.es_value < self.var_value:
            raise ValueError("ES below VaR")


def _margin(m):
    """``(mu, sigma)`` of the next return from a GarchFit or a plain pair."""
    if isinstance(m, GarchFit):
        return float(m.mu), forecast_sigma(m)
    mu, sigma = (float(v) for v in m)
    return mu, sigma


def var_es(margins, spec, weights=DEFAULT_WEIGHTS, alpha=0.05, n_sims=100_000, seed=None, t=None):
    """Monte-Carlo VaR and ES at tail probability ``alpha``.

    Copula draws are mapped to standard-normal innovations, scaled by each
    margin's one-step volatility and shifted by its drift. ``weights`` are
    value shares of a unit portfolio, so losses are relative.

    Parameters
    ----------
    margins : pair of GarchFit or pair of (mu, sigma)
    spec : CopulaSpec
    weights : pair of float, default=(0.5, 0.5)
    alpha : float, default=0.05
        Tail probability in (0, 0.5].
    n_sims : int, default=100000
    seed : int, optional
    t : optional
        Label stored on the result.

    Returns
    -------
    RiskPoint
        ``var_value`` is the empirical ``1 - alpha`` loss quantile and
        ``es_value`` the mean loss strictly beyond it (``var_value`` itself if
        no simulated loss exceeds it).
    """
    alpha = float(alpha)
    if not 0.0 < alpha <= 0.5:
        raise ValueError(f"alpha must lie in (0, 0.5], got {alpha}")
    if int(n_sims) < MIN_SIMS:
        raise ValueError(f"n_sims must be >= {MIN_SIMS}, got {n_sims}")
    if len(margins) != 2:
        raise ValueError("need exactly two margins")
    params = [_margin(m) for m in margins]
    mu = np.array([p[0] for p in params])
    sigma = np.array([p[1] for p in params])
    if not np.all(np.isfinite(sigma)) or np.any(sigma <= 0):
        raise ValueError("volatility forecasts must be positive and finite")
    u = copula.sample(spec, int(n_sims), seed)
    x = mu + sigma * special.ndtri(u)
    losses = portfolio_loss(np.ones(2), x, weights)
    var = float(np.quantile(losses, 1.0 - alpha))
    tail = losses[losses > var]
    es = float(tail.mean()) if tail.size else var
    return RiskPoint(t, var, es, spec, (float(sigma[0]), float(sigma[1])))


def _spec_at(segments, idx):
    for seg in segments:
        if seg.start <= idx < seg.end:
            return seg.spec
    raise ValueError(f"index {idx} is not covered by the segments")


def rolling_risk(
    returns,
    model,
    *,
    every=20,
    alpha=0.05,
    n_sims=100_000,
    seed=0,
    start=None,
    weights=DEFAULT_WEIGHTS,
    dates=None,
):
    """VaR/ES every ``every`` observations with expanding-window GARCH refits.

    At evaluation index ``t`` both GARCH(2,1) margins are refitted on
    ``returns[:t]`` (warm-started from the previous refit) and the risk of the
    loss at ``t`` is simulated.

    Parameters
    ----------
    returns : array-like of shape (T, 2)
    model : CopulaSpec or list of Segment
        A fixed (static) copula, or segments whose copula active at ``t - 1``
        is used (dynamic).
    every : int, default=20
    start : int, optional
        First evaluation index; defaults to 300, the shortest GARCH history.
    seed : int or None
        Each point uses a seed derived from ``(seed, t)``, so static and
        dynamic runs share draws.

    Returns
    -------
    list of RiskPoint
    """
    r = check_bivariate(returns, min_rows=MIN_GARCH_LEN + 1, name="returns")
    start = MIN_GARCH_LEN if start is None else int(start)
    if start < MIN_GARCH_LEN:
        raise ValueError(f"start must be >= {MIN_GARCH_LEN}")
    dynamic = not isinstance(model, CopulaSpec)
    points = []
    prev = [None, None]
    n_boundary = 0
    for t in range(start, r.shape[0], int(every)):
        # one summary warning instead of one per refit
        with warnings.catch_warnings():
            warnings.filterwarnings("ignore", message="GARCH\\(2,1\\) optimum", category=RuntimeWarning)
            fits = [fit_garch21(r[:t, j], start=None if prev[j] is None else prev[j].params) for j in range(2)]
        n_boundary += sum(f.persistence > 1.0 - 1e-6 for f in fits)
        prev = fits
        spec = _spec_at(model, t - 1) if dynamic else model
        if spec is None:
            raise ValueError(f"no fitted copula for the segment containing index {t - 1}")
        pt_seed = None if seed is None else int(np.random.SeedSequence([int(seed), t]).generate_state(1)[0])
        label = t if dates is None else dates[t]
        points.append(var_es(fits, spec, weights, alpha, n_sims, pt_seed, t=label))
    if n_boundary:
        warnings.warn(
            f"{n_boundary} of {2 * len(points)} GARCH(2,1) refits ended on the stationarity boundary",
            RuntimeWarning,
        )
    return points


def realized_losses(returns, indices, weights=DEFAULT_WEIGHTS):
    """Unit-portfolio losses at the given return indices."""
    r = check_bivariate(returns, min_rows=1, name="returns")
    return portfolio_loss(np.ones(2), r[np.asarray(indices, dtype=int)], weights)


@dataclass
class BacktestReport:
    """Kupiec proportion-of-failures test of a VaR series."""

    n: int
    exceedances: int
    expected: float
    kupiec_stat: float
    kupiec_pvalue: float
    es_residual_mean: float = float("nan")


def kupiec_lr(n, x, alpha):
    """``-2 ln`` of the coverage likelihood ratio, with ``0 ln 0 = 0``."""
    n = int(n)
    x = int(x)
    phat = x / n
    ll0 = special.xlogy(n - x, 1.0 - alpha) + special.xlogy(x, alpha)
    ll1 = special.xlogy(n - x, 1.0 - phat) + special.xlogy(x, phat)
    return max(-2.0 * (ll0 - ll1), 0.0)


def backtest_var(realized, var_series, alpha=0.05, es_series=None):
    """Count VaR exceedances and run the Kupiec test.

    Parameters
    ----------
    realized : array-like of shape (n,)
        Realized losses, ``n >= 50``.
    var_series : array-like of shape (n,)
    alpha : float
        Tail probability the VaR was computed at.
    es_series : array-like of shape (n,), optional
        When given, ``es_residual_mean`` is the mean of ``loss - ES`` over the
        exceedances; a positive value means ES understates tail losses.

    Returns
    -------
    BacktestReport
    """
    loss = np.asarray(realized, dtype=float).ravel()
    var = np.asarray(var_series, dtype=float).ravel()
    if loss.shape != var.shape:
        raise ValueError("realized and var_series must have equal length")
    if loss.size < MIN_BACKTEST:
        raise ValueError(f"backtesting needs at least {MIN_BACKTEST} observations")
    alpha = check_probability(alpha, "alpha")
    hit = loss > var
    x = int(hit.sum())
    lr = kupiec_lr(loss.size, x, alpha)
    es_res = float("nan")
    if es_series is not None and x > 0:
        es = np.asarray(es_series, dtype=float).ravel()
        es_res = float(np.mean(loss[hit] - es[hit]))
    return BacktestReport(
        n=int(loss.size),
        exceedances=x,
        expected=alpha * loss.size,
        kupiec_stat=float(lr),
        kupiec_pvalue=float(stats.chi2.sf(lr, 1)),
        es_residual_mean=es_res,
    )
