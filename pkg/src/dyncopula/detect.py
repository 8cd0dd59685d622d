"""
Change-point detectors for a bivariate dependence structure
-----------------------------------------------------------

Two retrospective detectors (binary segmentation, bottom-up merging) and two
real-time ones (moving window and its accelerated two-threshold variant). All
of them fit copulas on rank uniforms and decide with the information-matrix
test. Indices are 0-based and segments are half-open ``[start, end)``.

The real-time detectors re-rank every window, so no decision ever uses data
beyond the current window end. The retrospective ones re-rank each
sub-segment they test.
"""

from dataclasses import asdict, dataclass, fields
from enum import Enum

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import FitError, check_bivariate
from .copula import FAMILY_ORDER, Family
from .fit import MIN_FIT_SIZE, FitResult, fit_copula, select_family
from .gof import GofConfig, GofResult, chi2_quantile, info_matrix_test
from .pseudo import PseudoSample, pseudo_observations


class Limit(str, Enum):
    WLL = "WLL"
    CLL = "CLL"


@dataclass
class DetectorConfig:
    """Constants shared by the four detectors.

    Attributes
    ----------
    n_window : int
        Moving-window length ``N``.
    step : int
        Window advance ``K``; also the number of points kept after a crossing.
    n_min : int
        Initial window of the accelerated detector.
    growth : int
        Points added per step while the accelerated window is shorter than
        ``max_window``.
    max_window : int
        Longest accelerated window ``L``.
    alpha_w, alpha_c : float
        Warning and control confidence levels.
    bu_min : int
        Initial bottom-up block length ``N*_min``.
    families : tuple of str
        Candidate copula families.
    seed : int or None
        Base seed; every window derives its Monte-Carlo seed from it.
    mc_draws : int
        Monte-Carlo draws of the goodness-of-fit test.
    bs_min_leaf : int
        Binary segmentation never creates a segment shorter than this.
    bu_shrink, bu_floor : float, int
        Block shrink factor and smallest block length. Blocks are never
        shorter than the minimum fit size of 30 rows.
    bu_shrink_rule : {"excess", "any"}
        ``"any"`` shrinks when any block rejects. ``"excess"`` shrinks only when
        the number of rejecting blocks exceeds the 99% binomial quantile
        expected from test size alone.
    fix_nu_at_boundary : bool
        Forwarded to :class:`GofConfig`.
    """

    n_window: int = 500
    step: int = 120
    n_min: int = 200
    growth: int = 50
    max_window: int = 500
    alpha_w: float = 0.85
    alpha_c: float = 0.95
    bu_min: int = 100
    families: tuple = ("gaussian", "studentt", "clayton")
    seed: int | None = 0
    mc_draws: int = 4096
    bs_min_leaf: int = 60
    bu_shrink: float = 0.8
    bu_floor: int = 27
    bu_shrink_rule: str = "excess"
    fix_nu_at_boundary: bool = False

    def __post_init__(self):
        self.families = tuple(Family.parse(f).value for f in self.families)
        if not self.families:
            raise ValueError("families must be non-empty")
        for name in ("n_window", "step", "n_min", "growth", "max_window", "bu_min", "bu_floor"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.step <= self.n_window:
            raise ValueError("need 0 < step <= n_window")
        if self.n_min > self.max_window:
            raise ValueError("need n_min <= max_window")
        if self.step >= self.n_min:
            raise ValueError("need step < n_min")
        if not 0.0 < self.alpha_w < self.alpha_c < 1.0:
            raise ValueError("need 0 < alpha_w < alpha_c < 1")
        if min(self.n_min, self.n_window, self.bs_min_leaf) < MIN_FIT_SIZE:
            raise ValueError(f"window and block sizes must be >= {MIN_FIT_SIZE}")
        if not 0.0 < self.bu_shrink < 1.0:
            raise ValueError("bu_shrink must lie in (0, 1)")
        if self.bu_shrink_rule not in ("excess", "any"):
            raise ValueError("bu_shrink_rule must be 'excess' or 'any'")

    @classmethod
    def from_mapping(cls, mapping):
        """Build from string or typed values, e.g. parsed ``key=value`` pairs."""
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in mapping.items():
            if key not in known:
                raise ValueError(f"unknown detector setting {key!r}")
            default = getattr(cls, key, None)
            if key == "families" and isinstance(value, str):
                value = tuple(v.strip() for v in value.split(",") if v.strip())
            elif key == "seed" and isinstance(value, str):
                value = None if value.lower() == "none" else int(value)
            elif isinstance(default, bool) and isinstance(value, str):
                value = value.strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int) and isinstance(value, str):
                value = int(value)
            elif isinstance(default, float) and isinstance(value, str):
                value = float(value)
            kwargs[key] = value
        return cls(**kwargs)

    def to_dict(self):
        return asdict(self)

    def gof_config(self, seed):
        return GofConfig(mc_draws=self.mc_draws, seed=seed, fix_nu_at_boundary=self.fix_nu_at_boundary)


@dataclass
class Segment:
    """A stretch ``[start, end)`` described by one copula."""

    start: int
    end: int
    fit: FitResult | None
    gof: GofResult | None
    note: str = ""

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"empty segment [{self.start}, {self.end})")

    def __len__(self):
        return self.end - self.start

    @property
    def family(self):
        return None if self.fit is None else self.fit.spec.family

    @property
    def spec(self):
        return None if self.fit is None else self.fit.spec


@dataclass
class DetectionEvent:
    """A limit crossing of a real-time detector.

    ``detected_at`` is the last index of the window whose statistic crossed,
    ``change_point`` the first index of the segment that the crossing opens.
    """

    detected_at: int
    change_point: int
    crossed: Limit
    statistic: float
    threshold: float
    family: str = ""

    def __post_init__(self):
        if self.change_point > self.detected_at:
            raise ValueError("change_point must not exceed detected_at")


def check_partition(segments, t_len):
    """Raise unless ``segments`` are contiguous, ordered and cover ``[0, t_len)``."""
    pos = 0
    for seg in segments:
        if seg.start != pos or seg.end <= seg.start:
            raise AssertionError(f"segments do not partition [0, {t_len}) at {pos}")
        pos = seg.end
    if pos != t_len:
        raise AssertionError(f"segments end at {pos}, expected {t_len}")
    return segments


def change_points(segments):
    """Start indices of every segment but the first."""
    return [s.start for s in segments[1:]]


def change_types(segments):
    """``"family"`` or ``"parameter"`` for each boundary, ``"initial"`` first."""
    out = ["initial"]
    for prev, cur in zip(segments, segments[1:]):
        out.append("family" if prev.family != cur.family else "parameter")
    return out


def _derive_seed(seed, *keys):
    if seed is None:
        return None
    ss = np.random.SeedSequence([int(seed), *(int(k) for k in keys)])
    return int(ss.generate_state(1)[0])


def _as_u(data):
    if isinstance(data, PseudoSample):
        return data.u
    return check_bivariate(data, min_rows=1, name="data")


def _assess(u, cfg, key, family=None, start=None):
    """Re-rank ``u``, fit (AIC when ``family`` is None) and test.

    Returns ``(fit, gof)``; ``gof`` is None when the test cannot be evaluated.
    """
    ps = pseudo_observations(u)
    if family is None:
        fit = select_family(ps, cfg.families)
    else:
        fit = fit_copula(ps, family, start=start, n_starts=1 if start is not None else 3)
        if not fit.converged and start is not None:
            fit = fit_copula(ps, family, start=start, n_starts=3)
    try:
        gof = info_matrix_test(
            ps, fit.spec, cfg.gof_config(_derive_seed(cfg.seed, *key)), boundary_hit=fit.boundary_hit
        )
    except (FitError, np.linalg.LinAlgError):
        gof = None
    return fit, gof


def _rejects(gof, level):
    return gof is not None and gof.statistic > chi2_quantile(gof.dof, level)


def _threshold(gof, level):
    return chi2_quantile(gof.dof, level) if gof is not None else float("nan")


# -- binary segmentation ---------------------------------------------------


def binary_segmentation(ps, cfg=None):
    """Recursive midpoint splitting followed by a merge pass.

    A segment whose test rejects at ``alpha_c`` is split in half unless a half
    would be shorter than ``cfg.bs_min_leaf``. Adjacent leaves are then merged
    while they share a family, their pooled AIC fit keeps that family and the
    pooled test accepts.

    Parameters
    ----------
    ps : PseudoSample or array of shape (T, 2)
        ``T >= 2 * cfg.bs_min_leaf``.
    cfg : DetectorConfig, optional

    Returns
    -------
    list of Segment
    """
    cfg = cfg or DetectorConfig()
    u = _as_u(ps)
    t_len = u.shape[0]
    if t_len < 2 * cfg.bs_min_leaf:
        raise ValueError(f"binary segmentation needs at least {2 * cfg.bs_min_leaf} rows, got {t_len}")
    cache = {}

    def assess(a, b):
        if (a, b) not in cache:
            cache[(a, b)] = _assess(u[a:b], cfg, (a, b))
        return cache[(a, b)]

    leaves = []
    stack = [(0, t_len)]
    while stack:
        a, b = stack.pop()
        try:
            fit, gof = assess(a, b)
        except FitError as exc:
            leaves.append(Segment(a, b, None, None, note=f"fit failed: {exc}"))
            continue
        mid = (a + b) // 2
        if _rejects(gof, cfg.alpha_c) and min(mid - a, b - mid) >= cfg.bs_min_leaf:
            stack.extend([(mid, b), (a, mid)])
        else:
            leaves.append(Segment(a, b, fit, gof))
    leaves.sort(key=lambda s: s.start)
    segments = _merge_layers(u, leaves, cfg, assess, short_limit=0)
    return check_partition(segments, t_len)


# -- bottom-up --------------------------------------------------------------


def _blocks(t_len, size):
    n = t_len // size
    edges = [i * size for i in range(n)] + [t_len]
    return list(zip(edges[:-1], edges[1:]))


def _too_many_rejections(n_reject, n_blocks, cfg):
    if cfg.bu_shrink_rule == "any":
        return n_reject > 0
    return n_reject > stats.binom.ppf(0.99, n_blocks, 1.0 - cfg.alpha_c)


def _mergeable(left, right, pooled, gof, cfg, short_limit):
    if pooled is None or _rejects(gof, cfg.alpha_c) or gof is None:
        return False
    if left.family is not None and left.family == right.family:
        return pooled.spec.family == left.family
    if short_limit <= 0 or left.fit is None or right.fit is None:
        return False
    short, long_ = (left, right) if len(left) <= len(right) else (right, left)
    if not (len(short) <= short_limit < len(long_) and pooled.spec.family == long_.family):
        return False
    # "slight impact": a likelihood-ratio comparison of the separate fits
    # against the pooled one does not reject at alpha_c
    lr = 2.0 * (left.fit.loglik + right.fit.loglik - pooled.loglik)
    df = max(left.fit.spec.param_dim + right.fit.spec.param_dim - pooled.spec.param_dim, 1)
    return lr <= chi2_quantile(df, cfg.alpha_c)


def _merge_layer(segments, cfg, assess, short_limit):
    """One left-to-right pass of non-overlapping pair merges."""
    merged = []
    changed = False
    i = 0
    while i < len(segments):
        if i + 1 < len(segments):
            left, right = segments[i], segments[i + 1]
            try:
                pooled, gof = assess(left.start, right.end)
            except FitError:
                pooled, gof = None, None
            if _mergeable(left, right, pooled, gof, cfg, short_limit):
                merged.append(Segment(left.start, right.end, pooled, gof))
                changed = True
                i += 2
                continue
        merged.append(segments[i])
        i += 1
    return merged, changed


def _merge_layers(u, segments, cfg, assess, short_limit):
    """Same-family layers until none merges, then one layer that may also
    absorb short segments; repeated until neither applies."""
    segments = list(segments)
    while True:
        changed = True
        while changed:
            segments, changed = _merge_layer(segments, cfg, assess, 0)
        if short_limit <= 0:
            return segments
        segments, changed = _merge_layer(segments, cfg, assess, short_limit)
        if not changed:
            return segments


def bottom_up(ps, cfg=None):
    """Fit equal blocks, then merge contiguous blocks layer by layer.

    Blocks start at ``cfg.bu_min`` points (the last one absorbs the
    remainder). If too many blocks reject at ``alpha_c`` (fits on a parameter
    bound are not counted) the block length is
    multiplied by ``cfg.bu_shrink`` down to ``cfg.bu_floor``; a shrink that
    does not lower the fraction of rejecting blocks is undone and ends the
    search. Two neighbours
    merge when they share a family, the pooled AIC fit keeps it and the pooled
    test accepts. A neighbour of at most twice the block length may also be
    absorbed by a longer segment of another family when the pooled fit keeps
    the longer segment's family, the pooled test accepts and a likelihood-ratio
    comparison of the two separate fits against the pooled fit does not reject
    at ``alpha_c``. Same-family merges run to a fixpoint
    before each such absorption layer.

    Returns
    -------
    list of Segment
    """
    cfg = cfg or DetectorConfig()
    u = _as_u(ps)
    t_len = u.shape[0]
    if t_len < 2 * max(cfg.bu_min, MIN_FIT_SIZE):
        raise ValueError(f"bottom-up needs at least {2 * max(cfg.bu_min, MIN_FIT_SIZE)} rows, got {t_len}")
    cache = {}

    def assess(a, b):
        if (a, b) not in cache:
            cache[(a, b)] = _assess(u[a:b], cfg, (a, b))
        return cache[(a, b)]

    size = max(int(cfg.bu_min), MIN_FIT_SIZE)
    floor = max(int(cfg.bu_floor), MIN_FIT_SIZE)
    previous = None
    while True:
        blocks = []
        n_reject = 0
        for a, b in _blocks(t_len, size):
            try:
                fit, gof = assess(a, b)
            except FitError as exc:
                blocks.append(Segment(a, b, None, None, note=f"fit failed: {exc}"))
                continue
            # a fit on a parameter bound voids the chi-square reference, so
            # its rejection is no evidence for shorter blocks
            n_reject += _rejects(gof, cfg.alpha_c) and not fit.boundary_hit
            blocks.append(Segment(a, b, fit, gof))
        frac = n_reject / len(blocks)
        # shorter blocks that do not reject less often mean the rejections
        # are not caused by blocks straddling a change: keep the longer ones
        if previous is not None and frac >= previous[2]:
            size, blocks = previous[0], previous[1]
            break
        smaller = max(floor, int(size * cfg.bu_shrink))
        if smaller >= size or not _too_many_rejections(n_reject, len(blocks), cfg):
            break
        previous = (size, blocks, frac)
        size = smaller
    segments = _merge_layers(u, blocks, cfg, assess, short_limit=2 * size)
    return check_partition(segments, t_len)


# -- moving windows ---------------------------------------------------------


class RollingMonitor:
    """Incremental state machine behind the two real-time detectors.

    Feed rows with :meth:`feed`; every complete window is evaluated as soon as
    its last row arrives, so results do not depend on how the data is batched.

    Parameters
    ----------
    cfg : DetectorConfig
    accelerated : bool
        False gives the fixed-length moving window tested at ``alpha_c``.
        True gives the growing window with a warning limit at ``alpha_w``
        (CALM) followed by a control limit at ``alpha_c`` (ALERT).
    """

    def __init__(self, cfg=None, accelerated=False):
        self.cfg = cfg or DetectorConfig()
        self.accelerated = bool(accelerated)
        self._u = np.empty((0, 2))
        self._start = 0
        self._end = self.cfg.n_min if self.accelerated else self.cfg.n_window
        self._current = None
        self._needs_aic = True
        self.alert = False
        self.events = []
        self.trace = []
        self._openers = []
        self._cps = []

    @property
    def n_seen(self):
        return self._u.shape[0]

    def feed(self, rows):
        rows = check_bivariate(rows, min_rows=1, name="rows")
        self._u = np.vstack([self._u, rows])
        while self._end <= self.n_seen:
            self._step()
        return self

    def _level(self):
        return self.cfg.alpha_c if (not self.accelerated or self.alert) else self.cfg.alpha_w

    def _step(self):
        cfg = self.cfg
        a, b = self._start, self._end
        window = self._u[a:b]
        key = (a, b)
        try:
            if self._needs_aic:
                fit, gof = _assess(window, cfg, key)
            else:
                spec = self._current.spec
                fit, gof = _assess(window, cfg, key, family=spec.family, start=spec.theta)
        except FitError:
            fit, gof = None, None
        level = self._level()
        crossed = fit is not None and _rejects(gof, level)
        self.trace.append(
            {
                "start": a,
                "end": b,
                "family": "" if fit is None else fit.spec.family.value,
                "params": [] if fit is None else list(fit.spec.theta),
                "statistic": float("nan") if gof is None else gof.statistic,
                "dof": 0 if gof is None else gof.dof,
                "threshold": _threshold(gof, level),
                "phase": "ALERT" if self.alert else "CALM",
            }
        )
        if self._needs_aic and fit is not None and (not self._openers or self._openers[-1][0] != self._pending_cp()):
            self._openers.append((self._pending_cp(), fit, gof))

        if crossed:
            limit = Limit.CLL if level == cfg.alpha_c else Limit.WLL
            cp = b - cfg.step
            self.events.append(
                DetectionEvent(b - 1, cp, limit, gof.statistic, _threshold(gof, level), fit.spec.family.value)
            )
            if limit is Limit.CLL:
                self._cps.append(cp)
            self.alert = limit is Limit.WLL
            self._start = cp
            self._end = cp + (cfg.n_min if self.accelerated else cfg.n_window)
            # a warning keeps the family under test; only a control crossing reselects
            self._needs_aic = limit is Limit.CLL
            if limit is Limit.WLL:
                self._current = fit
            return

        if fit is not None:
            self._current = fit
            self._needs_aic = False
        if self.accelerated and b - a < cfg.max_window:
            self._end = min(b + cfg.growth, a + cfg.max_window)
        else:
            self._start += cfg.step
            self._end += cfg.step

    def _pending_cp(self):
        # start of the segment opened by the latest control-limit crossing
        return self._cps[-1] if self._cps else 0

    def segments(self, t_len=None):
        """Segments delimited by control-limit crossings, covering all rows seen."""
        t_len = self.n_seen if t_len is None else t_len
        cps = [c for c in self._cps if 0 < c < t_len]
        edges = [0] + cps + [t_len]
        openers = {cp: (fit, gof) for cp, fit, gof in self._openers}
        out = []
        for a, b in zip(edges[:-1], edges[1:]):
            fit, gof = openers.get(a, (None, None))
            note = "" if fit is not None else "no complete window in segment"
            out.append(Segment(a, b, fit, gof, note=note))
        return check_partition(out, t_len) if t_len > 0 else out


def _rolling(data, cfg, accelerated):
    cfg = cfg or DetectorConfig()
    u = _as_u(data)
    need = cfg.n_min if accelerated else cfg.n_window
    if u.shape[0] < need:
        raise ValueError(f"series has {u.shape[0]} rows, needs at least {need}")
    mon = RollingMonitor(cfg, accelerated).feed(u)
    return mon.segments(), list(mon.events), mon


def moving_window(ps, cfg=None):
    """Fixed-length moving window tested at ``alpha_c``.

    The first ``n_window`` rows get an AIC fit. The window then advances by
    ``step`` with the family held and its parameters refitted. A crossing at
    window end ``b`` places the change point at ``b - step``, restarts the
    window there and selects the family again.

    Returns
    -------
    segments : list of Segment
    events : list of DetectionEvent
    """
    segments, events, _ = _rolling(ps, cfg, accelerated=False)
    return segments, events


def accelerated_moving_window(ps, cfg=None):
    """Growing window with warning and control limits.

    The window starts at ``n_min`` rows and grows by ``growth`` up to
    ``max_window``, then rolls by ``step``. In CALM the statistic is compared
    with the ``alpha_w`` quantile; a crossing emits a WLL event, keeps the last
    ``step`` rows, restarts at ``n_min`` with the family held and switches to
    ALERT, where the ``alpha_c`` quantile applies. A CLL crossing sets a change
    point, selects the family again and returns to CALM. Only CLL events
    delimit segments.

    Returns
    -------
    segments : list of Segment
    events : list of DetectionEvent
    """
    segments, events, _ = _rolling(ps, cfg, accelerated=True)
    return segments, events


# -- estimators -------------------------------------------------------------


class _Detector(BaseEstimator):
    def __init__(
        self,
        n_window=500,
        step=120,
        n_min=200,
        growth=50,
        max_window=500,
        alpha_w=0.85,
        alpha_c=0.95,
        bu_min=100,
        families=("gaussian", "studentt", "clayton"),
        seed=0,
        mc_draws=4096,
        bs_min_leaf=60,
        bu_shrink=0.8,
        bu_floor=27,
        bu_shrink_rule="excess",
        fix_nu_at_boundary=False,
    ):
        self.n_window = n_window
        self.step = step
        self.n_min = n_min
        self.growth = growth
        self.max_window = max_window
        self.alpha_w = alpha_w
        self.alpha_c = alpha_c
        self.bu_min = bu_min
        self.families = families
        self.seed = seed
        self.mc_draws = mc_draws
        self.bs_min_leaf = bs_min_leaf
        self.bu_shrink = bu_shrink
        self.bu_floor = bu_floor
        self.bu_shrink_rule = bu_shrink_rule
        self.fix_nu_at_boundary = fix_nu_at_boundary

    @classmethod
    def from_config(cls, cfg):
        return cls(**cfg.to_dict())

    def _config(self):
        return DetectorConfig(**self.get_params())

    def _store(self, segments, events=(), trace=()):
        self.segments_ = segments
        self.events_ = list(events)
        self.trace_ = list(trace)
        self.change_points_ = change_points(segments)
        self.n_samples_seen_ = segments[-1].end if segments else 0
        return self

    def predict(self, X=None):
        """Segment label of each fitted row."""
        check_is_fitted(self)
        labels = np.empty(self.n_samples_seen_, dtype=int)
        for k, seg in enumerate(self.segments_):
            labels[seg.start:seg.end] = k
        return labels

    def fit_predict(self, X, y=None):
        return self.fit(X).predict()


class BinarySegmentation(_Detector):
    """Estimator wrapper of :func:`binary_segmentation`. ``X`` is raw data or ranks."""

    def fit(self, X, y=None):
        X = pseudo_observations(X)
        return self._store(binary_segmentation(X, self._config()))


class BottomUp(_Detector):
    """Estimator wrapper of :func:`bottom_up`."""

    def fit(self, X, y=None):
        X = pseudo_observations(X)
        return self._store(bottom_up(X, self._config()))


class _RealTime(_Detector):
    _accelerated = False

    def fit(self, X, y=None):
        for attr in ("monitor_",):
            self.__dict__.pop(attr, None)
        X = check_bivariate(X, min_rows=1, name="X")
        need = self.n_min if self._accelerated else self.n_window
        if X.shape[0] < need:
            raise ValueError(f"series has {X.shape[0]} rows, needs at least {need}")
        return self.partial_fit(X)

    def partial_fit(self, X, y=None):
        """Append rows and evaluate every window they complete."""
        if not hasattr(self, "monitor_"):
            self.monitor_ = RollingMonitor(self._config(), self._accelerated)
        self.monitor_.feed(X)
        mon = self.monitor_
        return self._store(mon.segments(), mon.events, mon.trace)


class MovingWindow(_RealTime):
    """Estimator wrapper of :func:`moving_window` with incremental ``partial_fit``."""


class AcceleratedMovingWindow(_RealTime):
    """Estimator wrapper of :func:`accelerated_moving_window` with ``partial_fit``."""

    _accelerated = True


DETECTORS = {
    "bs": binary_segmentation,
    "mw": moving_window,
    "amw": accelerated_moving_window,
    "bu": bottom_up,
}


def run_detector(method, data, cfg=None):
    """Run a detector by short name; always returns ``(segments, events)``."""
    method = method.lower()
    if method not in DETECTORS:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(DETECTORS)}")
    out = DETECTORS[method](data, cfg)
    if isinstance(out, tuple):
        return out
    return out, []
