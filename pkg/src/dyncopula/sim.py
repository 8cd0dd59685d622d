"""Piecewise-copula scenarios and the detector comparison harness."""

import csv
import dataclasses
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from scipy import special

from . import copula
from .copula import CopulaSpec
from .detect import DetectorConfig, Limit, run_detector
from .margins import garch21_path

REAL_TIME = ("mw", "amw")
DEFAULT_SEED = 626
COMPARISON_SCHEMA = "dyncopula.comparison/1"
SUMMARY_SCHEMA = "dyncopula.comparison-summary/1"
SWEEP_SCHEMA = "dyncopula.sweep/1"


class ScenarioParseError(ValueError):
    """Malformed scenario file; ``lineno`` is 1-based."""

    def __init__(self, message, lineno=None, source="<scenario>"):
        self.lineno = lineno
        self.source = source
        where = source if lineno is None else f"{source}:{lineno}"
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class Scenario:
    """Consecutive copula blocks sampled independently.

    Parameters
    ----------
    blocks : sequence of (CopulaSpec, int)
    seed : int
        Default data seed; block ``k`` draws from ``SeedSequence([seed, k])``.
    name : str
    """

    blocks: tuple
    seed: int = DEFAULT_SEED
    name: str = "scenario"

    def __post_init__(self):
        blocks = []
        for spec, length in self.blocks:
            if not isinstance(spec, CopulaSpec):
                spec = CopulaSpec(*spec)
            if int(length) != length or int(length) < 1:
                raise ValueError(f"block lengths must be positive integers, got {length!r}")
            blocks.append((spec, int(length)))
        if not blocks:
            raise ValueError("a scenario needs at least one block")
        object.__setattr__(self, "blocks", tuple(blocks))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def t_len(self):
        return sum(n for _, n in self.blocks)

    @property
    def change_points(self):
        """1-based index of the first observation of every block after the first."""
        return [int(c) + 1 for c in np.cumsum([n for _, n in self.blocks])[:-1]]

    def spec_at(self, index):
        """Copula generating the 0-based observation ``index``."""
        pos = 0
        for spec, n in self.blocks:
            pos += n
            if index < pos:
                return spec
        raise IndexError(index)

    def with_seed(self, seed):
        return dataclasses.replace(self, seed=int(seed))


def generate(scenario, seed=None):
    """Sample a scenario.

    Parameters
    ----------
    scenario : Scenario
    seed : int, optional
        Overrides ``scenario.seed``.

    Returns
    -------
    data : ndarray of shape (T, 2)
        Copula-scale observations.
    change_points : list of int
        1-based true change points; empty for a single block.

    Examples
    --------
    >>> sc = Scenario([(CopulaSpec("gaussian", 0.5), 5000), (CopulaSpec("clayton", 0.5), 5000)])
    >>> generate(sc)[1]
    [5001]
    """
    seed = scenario.seed if seed is None else int(seed)
    parts = [
        copula.sample(spec, n, np.random.SeedSequence([seed, k]))
        for k, (spec, n) in enumerate(scenario.blocks)
    ]
    return np.vstack(parts), scenario.change_points


# GARCH(2,1) estimates of the two index margins, (mu, alpha0, alpha1, alpha2, beta1).
INDEX_GARCH = (
    (5.833e-04, 3.218e-06, 2.726e-02, 1.120e-01, 8.335e-01),
    (6.738e-04, 3.759e-06, 3.357e-02, 7.399e-02, 8.656e-01),
)


def simulate_prices(scenario, garch=INDEX_GARCH, seed=None, s0=100.0, burn=500, vol_scale=None):
    """Price paths whose GARCH(2,1) innovations follow the scenario copula.

    The copula draws are mapped to standard-normal innovations. ``burn``
    extra independent Gaussian innovations warm up each variance recursion.
    ``vol_scale`` optionally multiplies the filtered shocks ``r - mu`` of each
    block, which turns a high-dependence block into a crisis-like stretch.

    Returns
    -------
    prices : ndarray of shape (T + 1, 2)
    change_points : list of int
        1-based change points of the return series.
    """
    seed = scenario.seed if seed is None else int(seed)
    u, cps = generate(scenario, seed)
    warm = np.random.default_rng(np.random.SeedSequence([seed, len(scenario.blocks)]))
    warm = warm.standard_normal((int(burn), 2))
    eps = np.vstack([warm, special.ndtri(u)])
    r = np.column_stack([garch21_path(garch[j], eps[:, j])[int(burn):] for j in range(2)])
    if vol_scale is not None:
        if len(vol_scale) != len(scenario.blocks):
            raise ValueError("vol_scale needs one multiplier per block")
        k = np.repeat(np.asarray(vol_scale, dtype=float), [n for _, n in scenario.blocks])[:, None]
        mu = np.array([g[0] for g in garch])
        r = mu + k * (r - mu)
    prices = float(s0) * np.exp(np.vstack([np.zeros((1, 2)), np.cumsum(r, axis=0)]))
    return prices, cps


# -- scenario files ----------------------------------------------------------


def _parse_params(text):
    try:
        return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise ValueError(f"params must be numbers, got {text!r}") from None


def parse_scenarios(text, source="<scenario>"):
    """Parse ``[scenario]`` / ``[block]`` key=value sections.

    Each ``[block]`` needs ``family``, ``params`` and ``length`` and belongs to
    the most recent ``[scenario]`` (an unnamed one is opened if none is).
    ``#`` starts a comment.

    Examples
    --------
    >>> text = '''
    ... [scenario]
    ... name = gt
    ... seed = 626
    ... [block]
    ... family = gaussian
    ... params = 0.5
    ... length = 5000
    ... [block]
    ... family = studentt
    ... params = 0.5, 2.2
    ... length = 5000
    ... '''
    >>> parse_scenarios(text)[0].change_points
    [5001]
    """
    scenarios = []
    current = None  # dict with name, seed, blocks, lineno
    block = None

    def close_block():
        nonlocal block
        if block is None:
            return
        missing = [k for k in ("family", "params", "length") if k not in block]
        if missing:
            raise ScenarioParseError(f"block is missing {', '.join(missing)}", block["lineno"], source)
        try:
            spec = CopulaSpec(block["family"], _parse_params(block["params"]))
            length = int(block["length"])
            if length < 1:
                raise ValueError("length must be positive")
        except ValueError as exc:
            raise ScenarioParseError(str(exc), block["lineno"], source) from None
        current["blocks"].append((spec, length))
        block = None

    def close_scenario():
        close_block()
        if current is None:
            return
        if not current["blocks"]:
            raise ScenarioParseError("scenario has no blocks", current["lineno"], source)
        try:
            seed = int(current.get("seed", DEFAULT_SEED))
        except ValueError:
            raise ScenarioParseError("seed must be an integer", current["lineno"], source) from None
        name = current.get("name") or f"scenario{len(scenarios) + 1}"
        scenarios.append(Scenario(tuple(current["blocks"]), seed, name))

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ScenarioParseError(f"unterminated section header {line!r}", lineno, source)
            section = line[1:-1].strip().lower()
            if section == "scenario":
                close_scenario()
                current = {"blocks": [], "lineno": lineno}
            elif section == "block":
                close_block()
                if current is None:
                    current = {"blocks": [], "lineno": lineno}
                block = {"lineno": lineno}
            else:
                raise ScenarioParseError(f"unknown section [{section}]", lineno, source)
            continue
        if "=" not in line:
            raise ScenarioParseError(f"expected key = value, got {line!r}", lineno, source)
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lower()
        if block is not None:
            if key not in ("family", "params", "length"):
                raise ScenarioParseError(f"unknown block key {key!r}", lineno, source)
            block[key] = value
        elif current is not None:
            if key not in ("name", "seed"):
                raise ScenarioParseError(f"unknown scenario key {key!r}", lineno, source)
            current[key] = value
        else:
            raise ScenarioParseError("key outside any section", lineno, source)
    close_scenario()
    if not scenarios:
        raise ScenarioParseError("no scenario found", None, source)
    return scenarios


def load_scenarios(path):
    with open(path, encoding="utf-8") as fh:
        return parse_scenarios(fh.read(), source=str(path))


def format_scenarios(scenarios):
    """Inverse of :func:`parse_scenarios`."""
    out = []
    for sc in scenarios:
        out += ["[scenario]", f"name = {sc.name}", f"seed = {sc.seed}", ""]
        for spec, n in sc.blocks:
            params = ", ".join(repr(t) for t in spec.theta)
            out += ["[block]", f"family = {spec.family.value}", f"params = {params}", f"length = {n}", ""]
    return "\n".join(out)


# -- benchmark scenario sets -------------------------------------------------

GAUSS = CopulaSpec("gaussian", (0.5,))
STUDENT = CopulaSpec("studentt", (0.5, 2.2))
CLAYTON = CopulaSpec("clayton", (0.5,))
PAIRS = (
    (GAUSS, STUDENT),
    (CLAYTON, STUDENT),
    (GAUSS, CLAYTON),
    (CLAYTON, GAUSS),
    (STUDENT, GAUSS),
    (STUDENT, CLAYTON),
)
SWEEP_PAIRS = (("gaussian", "studentt"), ("studentt", "gaussian"), ("gaussian", "clayton"), ("clayton", "gaussian"))
SWEEP_GRID = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)


def _short(spec):
    return {"gaussian": "G", "studentt": "t", "clayton": "Cl"}[spec.family.value]


def two_block_scenarios(length, seed=DEFAULT_SEED, pairs=PAIRS):
    """Two equal blocks per family pair."""
    return [
        Scenario(((a, length), (b, length)), seed, f"{_short(a)}-{_short(b)}")
        for a, b in pairs
    ]


def table1_scenarios(seed=DEFAULT_SEED):
    """Six pairs, 5000 + 5000 observations, change at 5001."""
    return two_block_scenarios(5000, seed)


def table2_scenarios(seed=DEFAULT_SEED):
    """Six pairs, 4500 + 4500 observations, change at 4501."""
    return two_block_scenarios(4500, seed)


def sweep_spec(family, param):
    """Copula of the delay sweep at dependence level ``param``."""
    family = copula.Family.parse(family)
    if family is copula.Family.STUDENT_T:
        return CopulaSpec(family, (param, STUDENT.theta[1]))
    return CopulaSpec(family, (param,))


def figure4_scenarios(grid=SWEEP_GRID, pairs=SWEEP_PAIRS, length=5000, seed=DEFAULT_SEED):
    """Delay-versus-parameter scenarios; both blocks share the parameter."""
    out = []
    for fa, fb in pairs:
        for p in grid:
            a, b = sweep_spec(fa, p), sweep_spec(fb, p)
            out.append(Scenario(((a, length), (b, length)), seed, f"{_short(a)}-{_short(b)}@{p:g}"))
    return out


FIGURE5_BLOCKS = (
    (GAUSS, 850),
    (CLAYTON, 1300),
    (STUDENT, 2000),
    (GAUSS, 2030),
    (CLAYTON, 1860),
    (STUDENT, 1060),
)


def figure5_scenario(seed=DEFAULT_SEED):
    """9100 observations alternating Gaussian, Clayton and Student-t blocks."""
    return Scenario(FIGURE5_BLOCKS, seed, "composite")


def stationary_scenario(length=1000, spec=GAUSS, seed=DEFAULT_SEED):
    return Scenario(((spec, length),), seed, "stationary")


# -- comparison harness -------------------------------------------------------


@dataclass
class ComparisonRow:
    """One true change point of one run, or one unmatched detection.

    ``true_cp`` is None for a false alarm; ``detected_cp`` and ``delay`` are
    None for a miss. A run of a change-free scenario without detections gives
    one row with all three None. Positions are 1-based.
    """

    scenario: str
    method: str
    seed: int
    true_cp: int | None
    detected_cp: int | None
    delay: int | None
    new_spec: CopulaSpec | None = None
    note: str = ""

    def __post_init__(self):
        if self.true_cp is not None and self.detected_cp is not None:
            if self.delay != self.detected_cp - self.true_cp:
                raise ValueError("delay must equal detected_cp - true_cp")

    def as_record(self):
        spec = self.new_spec
        return {
            "scenario": self.scenario,
            "method": self.method,
            "seed": self.seed,
            "true_cp": self.true_cp,
            "detected_cp": self.detected_cp,
            "delay": self.delay,
            "new_family": "" if spec is None else spec.family.value,
            "new_params": "" if spec is None else " ".join(f"{t:.6g}" for t in spec.theta),
            "note": self.note,
        }


def _candidates(method, segments, events):
    """``(detected_cp, new_spec)`` pairs, 1-based."""
    if method in REAL_TIME:
        opened = {seg.start: seg.spec for seg in segments}
        return [
            (ev.detected_at + 1, opened.get(ev.change_point))
            for ev in events
            if ev.crossed is Limit.CLL
        ]
    return [(seg.start + 1, seg.spec) for seg in segments[1:]]


def attribute(true_cps, candidates, t_len, real_time):
    """Match detections to true change points.

    Each true point owns the positions up to half-way to its neighbours (the
    series ends bound the outer regions). A real-time method is credited with
    its earliest detection at or after the true point inside that region; a
    retrospective method with the nearest one.

    Returns
    -------
    matches : list of (detected_cp, new_spec) or None, one per true point
    false_alarms : list of (detected_cp, new_spec)
    """
    cps = list(true_cps)
    used = set()
    matches = []
    for k, c in enumerate(cps):
        lo = 1 if k == 0 else (cps[k - 1] + c) / 2.0
        hi = t_len + 1 if k == len(cps) - 1 else (c + cps[k + 1]) / 2.0
        best = None
        for i, (d, _) in enumerate(candidates):
            if not lo <= d < hi or (real_time and d < c):
                continue
            key = d - c if real_time else (abs(d - c), d)
            if best is None or key < best[0]:
                best = (key, i)
        if best is None:
            matches.append(None)
        else:
            used.add(best[1])
            matches.append(candidates[best[1]])
    false_alarms = [cand for i, cand in enumerate(candidates) if i not in used]
    return matches, false_alarms


def _run_one(job):
    scenario, method, seed, cfg = job
    data, cps = generate(scenario, seed)
    run_cfg = dataclasses.replace(cfg, seed=seed)
    try:
        segments, events = run_detector(method, data, run_cfg)
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        return [ComparisonRow(scenario.name, method, seed, c, None, None, None, f"error: {exc}") for c in cps or [None]]
    matches, alarms = attribute(cps, _candidates(method, segments, events), data.shape[0], method in REAL_TIME)
    rows = []
    for c, m in zip(cps, matches):
        if m is None:
            rows.append(ComparisonRow(scenario.name, method, seed, c, None, None))
        else:
            rows.append(ComparisonRow(scenario.name, method, seed, c, m[0], m[0] - c, m[1]))
    rows += [ComparisonRow(scenario.name, method, seed, None, d, None, s, "false alarm") for d, s in alarms]
    if not rows:
        # a change-free run without detections still counts as a run
        rows.append(ComparisonRow(scenario.name, method, seed, None, None, None, None, "no detection"))
    return rows


def run_comparison(scenarios, methods, n_seeds=1, cfg=None, *, seeds=None, n_jobs=1):
    """Run every method on every scenario for several data seeds.

    Parameters
    ----------
    scenarios : list of Scenario
    methods : list of {"mw", "amw", "bs", "bu"}
    n_seeds : int, default=1
        Seeds ``scenario.seed, scenario.seed + 1, ...``; ``1`` reproduces a
        single-seed table.
    cfg : DetectorConfig, optional
        Its ``seed`` is replaced by the data seed of each run.
    seeds : list of int, optional
        Explicit data seeds, overriding ``n_seeds``.
    n_jobs : int, default=1
        Worker processes. Output order does not depend on it.

    Returns
    -------
    rows : list of ComparisonRow
        Ordered by scenario, method and seed.
    summary : list of dict
        See :func:`summarize`.
    """
    scenarios = list(scenarios)
    methods = [m.lower() for m in methods]
    if not scenarios or not methods:
        raise ValueError("need at least one scenario and one method")
    cfg = DetectorConfig() if cfg is None else cfg
    jobs = []
    for sc in scenarios:
        run_seeds = list(seeds) if seeds is not None else [sc.seed + i for i in range(int(n_seeds))]
        if not run_seeds:
            raise ValueError("need at least one seed")
        for method in methods:
            for s in run_seeds:
                jobs.append((sc, method, int(s), cfg))
    if n_jobs is not None and n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    rows = [r for batch in results for r in batch]
    return rows, summarize(rows)


def summarize(rows):
    """Delay summary per (scenario, method, true change point).

    For a scenario without change points a single entry with ``true_cp`` None
    reports the fraction of runs with any detection as ``detection_rate``.
    ``false_alarms`` is the mean number of unmatched detections per run.
    """
    runs = {}
    for r in rows:
        runs.setdefault((r.scenario, r.method), {}).setdefault(r.seed, []).append(r)
    out = []
    for (scenario, method), by_seed in runs.items():
        n_runs = len(by_seed)
        alarms = [sum(r.true_cp is None and r.detected_cp is not None for r in rs) for rs in by_seed.values()]
        cps = sorted({r.true_cp for rs in by_seed.values() for r in rs if r.true_cp is not None})
        base = {"scenario": scenario, "method": method, "n_runs": n_runs, "false_alarms": float(np.mean(alarms))}
        if not cps:
            out.append({**base, "true_cp": None, "n_detected": sum(a > 0 for a in alarms),
                        "detection_rate": float(np.mean([a > 0 for a in alarms])),
                        "median_delay": None, "q25_delay": None, "q75_delay": None})
            continue
        for c in cps:
            delays = [r.delay for rs in by_seed.values() for r in rs if r.true_cp == c and r.delay is not None]
            q25, med, q75 = np.percentile(delays, [25, 50, 75]) if delays else (None,) * 3
            out.append({
                **base, "true_cp": c, "n_detected": len(delays),
                "detection_rate": len(delays) / n_runs,
                "median_delay": None if med is None else float(med),
                "q25_delay": None if q25 is None else float(q25),
                "q75_delay": None if q75 is None else float(q75),
            })
    return out


def delay_sweep(grid=SWEEP_GRID, pairs=SWEEP_PAIRS, methods=REAL_TIME, n_seeds=1, cfg=None, *, n_jobs=1, seed=DEFAULT_SEED):
    """Delay versus dependence parameter for each family pair.

    Returns plot-ready dicts with keys ``pair``, ``param``, ``method`` and the
    summary statistics of :func:`summarize`.
    """
    scenarios = figure4_scenarios(grid, pairs, seed=seed)
    _, summary = run_comparison(scenarios, methods, n_seeds, cfg, n_jobs=n_jobs)
    out = []
    for s in summary:
        pair, param = s["scenario"].split("@")
        out.append({"pair": pair, "param": float(param), **{k: v for k, v in s.items() if k != "scenario"}})
    return out


# -- CSV output ---------------------------------------------------------------


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def write_csv(records, fh, schema, columns=None):
    """Write dicts as CSV preceded by a ``# schema: ...`` line."""
    records = list(records)
    if columns is None:
        columns = list(records[0]) if records else []
    fh.write(f"# schema: {schema}\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(columns)
    for rec in records:
        writer.writerow([_fmt(rec.get(c)) for c in columns])


ROW_COLUMNS = ("scenario", "method", "seed", "true_cp", "detected_cp", "delay", "new_family", "new_params", "note")
SUMMARY_COLUMNS = (
    "scenario", "method", "true_cp", "n_runs", "n_detected", "detection_rate",
    "median_delay", "q25_delay", "q75_delay", "false_alarms",
)


def rows_to_csv(rows):
    buf = io.StringIO()
    write_csv([r.as_record() for r in rows], buf, COMPARISON_SCHEMA, ROW_COLUMNS)
    return buf.getvalue()


def summary_to_csv(summary):
    buf = io.StringIO()
    write_csv(summary, buf, SUMMARY_SCHEMA, SUMMARY_COLUMNS)
    return buf.getvalue()
