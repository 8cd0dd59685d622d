"""Command-line front end.

Every command reads plain CSV or key=value text and writes CSV or JSON lines.
All randomness flows from ``--seed`` (default: ``$DYNCOPULA_SEED``, else the
command's own default), so repeated runs produce identical files.
"""

import argparse
import csv
import dataclasses
import io
import json
import os
import sys
from types import SimpleNamespace

import numpy as np

from . import __version__, sim
from ._validation import FitError
from .copula import CopulaSpec
from .detect import DetectorConfig, change_types, run_detector
from .fit import best_fit, fit_families, select_family
from .margins import MIN_GARCH_LEN, log_returns, standardized_residuals
from .pseudo import pseudo_observations
from .risk import backtest_var, realized_losses, rolling_risk

SEGMENTS_SCHEMA = "dyncopula.segments/1"
EVENTS_SCHEMA = "dyncopula.events/1"
TRACE_SCHEMA = "dyncopula.trace/1"
FITS_SCHEMA = "dyncopula.fits/1"
GARCH_SCHEMA = "dyncopula.garch/1"
RISK_SCHEMA = "dyncopula.risk/1"
BACKTEST_SCHEMA = "dyncopula.backtest/1"
DATA_SCHEMA = "dyncopula.data/1"
SEED_ENV = "DYNCOPULA_SEED"


class InputError(ValueError):
    """Bad user input; reported without a traceback."""


# -- input --------------------------------------------------------------------


def read_config(path):
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{lineno}: expected key = value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key] = value
    return out


def _pairs(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise InputError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def read_data(path):
    """Read ``date,asset1,asset2`` (or ``asset1,asset2``) CSV.

    Returns
    -------
    dates : list of str or None
    values : ndarray of shape (T, 2)
    """
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [(i, row) for i, row in enumerate(csv.reader(fh), start=1) if row and not row[0].startswith("#")]
    if not lines:
        raise InputError(f"{path}: no data")
    (_, header), body = lines[0], lines[1:]
    width = len(header)
    if width not in (2, 3):
        raise InputError(f"{path}:{lines[0][0]}: expected 2 or 3 columns, got {width}")
    dated = width == 3
    dates, values = [], []
    for lineno, row in body:
        if len(row) != width:
            raise InputError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
        try:
            values.append([float(v) for v in row[-2:]])
        except ValueError:
            raise InputError(f"{path}:{lineno}: unparseable number in {row!r}") from None
        if dated:
            dates.append(row[0].strip())
    if not values:
        raise InputError(f"{path}: no data rows")
    arr = np.asarray(values)
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{path}: non-finite values")
    return (dates if dated else None), arr


def _returns(values, dates, is_returns):
    """Return series and their dates; prices lose the first row."""
    if is_returns:
        return values, dates
    r = np.column_stack([log_returns(values[:, j]) for j in range(2)])
    return r, (None if dates is None else dates[1:])


def _copula_input(args):
    dates, values = read_data(args.data)
    r, dates = _returns(values, dates, args.returns)
    if args.no_garch:
        return r, dates, None
    if r.shape[0] < MIN_GARCH_LEN:
        raise InputError(f"GARCH filtering needs at least {MIN_GARCH_LEN} returns, got {r.shape[0]}")
    resid, fits = standardized_residuals(r)
    return resid, dates, fits


def _seed(args, default=0):
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise InputError(f"${SEED_ENV} must be an integer, got {env!r}") from None
    return default


def _detector_config(args):
    mapping = read_config(args.config) if args.config else {}
    mapping.update(_pairs(args.set))
    try:
        cfg = DetectorConfig.from_mapping(mapping)
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad detector setting: {exc}") from None
    return dataclasses.replace(cfg, seed=_seed(args, cfg.seed))


# -- output -------------------------------------------------------------------


def _open_out(path):
    if path in (None, "-"):
        return _Stdout()
    return open(path, "w", encoding="utf-8", newline="")


class _Stdout:
    def __enter__(self):
        return sys.stdout

    def __exit__(self, *exc):
        sys.stdout.flush()
        return False


def _num(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path, schema, columns, rows, meta=""):
    with _open_out(path) as fh:
        fh.write(f"# schema: {schema}{' ' + meta if meta else ''}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_num(v) for v in row])


def _date(dates, idx):
    return None if dates is None or not 0 <= idx < len(dates) else dates[idx]


def segment_records(segments, dates=None):
    out = []
    for seg, kind in zip(segments, change_types(segments)):
        spec = seg.spec
        out.append({
            "schema": SEGMENTS_SCHEMA,
            "start": seg.start,
            "end": seg.end,
            "start_date": _date(dates, seg.start),
            "end_date": _date(dates, seg.end - 1),
            "family": None if spec is None else spec.family.value,
            "params": None if spec is None else list(spec.theta),
            "change_type": kind,
        })
    return out


def read_segments(path):
    """Segments written by ``detect`` as light records with ``start, end, spec``."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                spec = None if rec["family"] is None else CopulaSpec(rec["family"], tuple(rec["params"]))
                out.append(SimpleNamespace(start=int(rec["start"]), end=int(rec["end"]), spec=spec))
            except (KeyError, TypeError, ValueError) as exc:
                raise InputError(f"{path}:{lineno}: bad segment record ({exc})") from None
    if not out:
        raise InputError(f"{path}: no segments")
    return out


# -- commands -----------------------------------------------------------------


def cmd_simulate(args):
    scenarios = sim.load_scenarios(args.scenario)
    if args.name is not None:
        scenarios = [s for s in scenarios if s.name == args.name]
        if not scenarios:
            raise InputError(f"no scenario named {args.name!r}")
    elif len(scenarios) > 1:
        raise InputError("file holds several scenarios; choose one with --name")
    sc = scenarios[0]
    data, cps = sim.generate(sc, _seed(args, sc.seed))
    _write_csv(args.out, DATA_SCHEMA, ["asset1", "asset2"], data.tolist(), f"scenario={sc.name}")
    if args.truth:
        with open(args.truth, "w", encoding="utf-8") as fh:
            fh.write("".join(f"{c}\n" for c in cps))
    return 0


def cmd_detect(args):
    cfg = _detector_config(args)
    u, dates, _ = _copula_input(args)
    ps = pseudo_observations(u)
    segments, events = run_detector(args.method, ps, cfg)
    with _open_out(args.out) as fh:
        for rec in segment_records(segments, dates):
            fh.write(json.dumps(rec) + "\n")
    if args.events:
        _write_csv(
            args.events, EVENTS_SCHEMA,
            ["detected_at", "change_point", "limit", "statistic", "threshold", "family", "detected_date"],
            [[e.detected_at, e.change_point, e.crossed.value, e.statistic, e.threshold, e.family,
              _date(dates, e.detected_at)] for e in events],
        )
    return 0


def cmd_fit(args):
    u, dates, garch = _copula_input(args)
    ps = pseudo_observations(u)
    families = DetectorConfig.from_mapping({"families": args.families}).families
    fits = fit_families(ps, families)
    best = best_fit(fits).spec.family
    rows = []
    for fam, f in fits.items():
        if f is None:
            rows.append([fam.value, "", "", "", "", False, False])
            continue
        rows.append([
            fam.value, " ".join(repr(t) for t in f.spec.theta),
            " ".join(repr(float(s)) for s in np.atleast_1d(f.stderr)), f.loglik, f.aic, f.converged,
            fam == best,
        ])
    _write_csv(args.out, FITS_SCHEMA, ["family", "params", "stderr", "loglik", "aic", "converged", "selected"], rows)
    if args.garch_out and garch is not None:
        _write_csv(
            args.garch_out, GARCH_SCHEMA,
            ["asset", "mu", "alpha0", "alpha1", "alpha2", "beta1",
             "se_mu", "se_alpha0", "se_alpha1", "se_alpha2", "se_beta1", "loglik"],
            [[j + 1, *g.params, *g.stderr, g.loglik] for j, g in enumerate(garch)],
        )
    return 0


def cmd_risk(args):
    alpha = args.alpha
    if not 0.0 < alpha <= 0.5:
        raise InputError(f"--alpha must lie in (0, 0.5], got {alpha}")
    dates, values = read_data(args.data)
    r, dates = _returns(values, dates, args.returns)
    if args.static:
        resid, _ = standardized_residuals(r)
        model = select_family(pseudo_observations(resid)).spec
    else:
        model = read_segments(args.segments)
        if model[-1].end != r.shape[0] or model[0].start != 0:
            raise InputError(f"segments cover [{model[0].start}, {model[-1].end}), data has {r.shape[0]} returns")
    seed = _seed(args)
    points = rolling_risk(
        r, model, every=args.every, alpha=alpha, n_sims=args.n_sims, seed=seed,
        start=args.start, dates=None,
    )
    idx = [p.t for p in points]
    loss = realized_losses(r, idx)
    sign = -1.0 if args.plot_sign else 1.0
    rows = [
        [p.t, _date(dates, p.t), sign * p.var_value, sign * p.es_value, sign * l,
         p.spec_used.family.value, " ".join(repr(t) for t in p.spec_used.theta), *p.sigma_forecasts]
        for p, l in zip(points, loss)
    ]
    meta = f"alpha={alpha!r} sign={'return' if args.plot_sign else 'loss'} model={'static' if args.static else 'dynamic'}"
    _write_csv(args.out, RISK_SCHEMA,
               ["t", "date", "var", "es", "realized", "family", "params", "sigma1", "sigma2"], rows, meta)
    return 0


def _read_risk(path):
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline()
        if not first.startswith(f"# schema: {RISK_SCHEMA}"):
            raise InputError(f"{path}: not a risk file (expected '# schema: {RISK_SCHEMA}')")
        meta = dict(tok.split("=", 1) for tok in first.split()[3:] if "=" in tok)
        rows = list(csv.DictReader(fh))
    try:
        sign = -1.0 if meta.get("sign") == "return" else 1.0
        var = sign * np.array([float(r["var"]) for r in rows])
        es = sign * np.array([float(r["es"]) for r in rows])
        loss = sign * np.array([float(r["realized"]) for r in rows])
        alpha = float(meta["alpha"])
    except (KeyError, ValueError) as exc:
        raise InputError(f"{path}: malformed risk file ({exc})") from None
    return alpha, var, es, loss


def cmd_backtest(args):
    alpha, var, es, loss = _read_risk(args.risk)
    rep = backtest_var(loss, var, alpha, es)
    rec = {"schema": BACKTEST_SCHEMA, **dataclasses.asdict(rep), "alpha": alpha}
    if np.isnan(rec["es_residual_mean"]):
        rec["es_residual_mean"] = None
    with _open_out(args.out) as fh:
        fh.write(json.dumps(rec) + "\n")
    return 0


_BUILTIN = {
    "table1": sim.table1_scenarios,
    "table2": sim.table2_scenarios,
    "figure5": lambda: [sim.figure5_scenario()],
    "stationary": lambda: [sim.stationary_scenario()],
}


def cmd_compare(args):
    cfg = _detector_config(args)
    if args.scenarios:
        scenarios = sim.load_scenarios(args.scenarios)
    else:
        scenarios = _BUILTIN[args.builtin]()
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    seeds = None if args.seed is None and SEED_ENV not in os.environ else [_seed(args) + i for i in range(args.n_seeds)]
    rows, summary = sim.run_comparison(scenarios, methods, args.n_seeds, cfg, seeds=seeds, n_jobs=args.jobs)
    with _open_out(args.out) as fh:
        fh.write(sim.rows_to_csv(rows))
    if args.summary:
        with _open_out(args.summary) as fh:
            fh.write(sim.summary_to_csv(summary))
    return 0


def cmd_sweep(args):
    cfg = _detector_config(args)
    grid = tuple(float(g) for g in args.grid.split(","))
    pairs = tuple(tuple(p.split("-")) for p in args.pairs.split(","))
    methods = [m.strip() for m in args.methods.split(",")]
    out = sim.delay_sweep(grid, pairs, methods, args.n_seeds, cfg, n_jobs=args.jobs, seed=_seed(args, sim.DEFAULT_SEED))
    buf = io.StringIO()
    cols = ["pair", "param", "method", "n_runs", "n_detected", "detection_rate",
            "median_delay", "q25_delay", "q75_delay", "false_alarms"]
    sim.write_csv(out, buf, sim.SWEEP_SCHEMA, cols)
    with _open_out(args.out) as fh:
        fh.write(buf.getvalue())
    return 0


# -- parser -------------------------------------------------------------------


def _add_input(p):
    p.add_argument("data", help="CSV with header date,asset1,asset2 (the date column is optional)")
    p.add_argument("--returns", action="store_true", help="the file holds log-returns, not prices")
    p.add_argument("--no-garch", action="store_true", help="skip GARCH(2,1) filtering before ranking")


def _add_detector(p):
    p.add_argument("--config", help="key=value file of detector settings")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one detector setting")


def build_parser():
    parser = argparse.ArgumentParser(prog="dyncopula", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    seed_help = f"random seed (default: ${SEED_ENV} or the command default)"

    p = sub.add_parser("simulate", help="sample a scenario file")
    p.add_argument("scenario")
    p.add_argument("--out", default="-")
    p.add_argument("--truth", help="write 1-based true change points here")
    p.add_argument("--name", help="scenario to use when the file holds several")
    p.add_argument("--seed", type=int, help=seed_help)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("detect", help="detect copula change points")
    _add_input(p)
    p.add_argument("--method", choices=("bs", "mw", "amw", "bu"), default="bu")
    _add_detector(p)
    p.add_argument("--out", default="-", help="segments as JSON lines")
    p.add_argument("--events", help="CSV of limit crossings (real-time methods)")
    p.add_argument("--seed", type=int, help=seed_help)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("fit", help="fit every copula family and report AIC")
    _add_input(p)
    p.add_argument("--families", default="gaussian,studentt,clayton")
    p.add_argument("--out", default="-")
    p.add_argument("--garch-out", help="CSV of the GARCH(2,1) estimates")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("risk", help="rolling VaR and ES of an equally weighted portfolio")
    p.add_argument("data")
    p.add_argument("--returns", action="store_true")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--segments", help="JSON-lines segments from 'detect'")
    group.add_argument("--static", action="store_true", help="one copula for the whole sample")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--n-sims", type=int, default=100_000)
    p.add_argument("--every", type=int, default=20)
    p.add_argument("--start", type=int, help=f"first evaluation index (default {MIN_GARCH_LEN})")
    p.add_argument("--plot-sign", action="store_true", help="report VaR, ES and losses as signed returns")
    p.add_argument("--out", default="-")
    p.add_argument("--seed", type=int, help=seed_help)
    p.set_defaults(func=cmd_risk)

    p = sub.add_parser("backtest", help="Kupiec test of a risk CSV")
    p.add_argument("risk")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("compare", help="detector comparison over simulated scenarios")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenarios", help="scenario file")
    src.add_argument("--builtin", choices=sorted(_BUILTIN))
    p.add_argument("--methods", default="mw,amw")
    p.add_argument("--n-seeds", type=int, default=1)
    _add_detector(p)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="-")
    p.add_argument("--summary")
    p.add_argument("--seed", type=int, help="first data seed (default: each scenario's seed)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="delay versus dependence parameter")
    p.add_argument("--grid", default=",".join(f"{g:g}" for g in sim.SWEEP_GRID))
    p.add_argument("--pairs", default=",".join(f"{a}-{b}" for a, b in sim.SWEEP_PAIRS))
    p.add_argument("--methods", default="mw,amw")
    p.add_argument("--n-seeds", type=int, default=1)
    _add_detector(p)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="-")
    p.add_argument("--seed", type=int, help=seed_help)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, sim.ScenarioParseError, OSError) as exc:
        print(f"dyncopula: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FitError) as exc:
        print(f"dyncopula: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
