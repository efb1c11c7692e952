"""Command-line pipeline: ingest, transform, tune, filter, report.

Every option can also come from a YAML file passed with ``--config``;
command-line values win. Exit codes: 0 success, 2 bad input or
configuration, 3 solver budget exhausted (outputs written, gap reported),
4 internal invariant violated.
"""

import argparse
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .analysis import DEFAULT_GAMMA, contact_growth_rates, parametric_fit, underreporting_diagnostic
from .exceptions import (
    BracketError,
    ConvergenceError,
    EnumerationCapError,
    InputError,
    InvariantViolation,
    KinkFilterError,
)
from .hp_filter import second_differences
from .io import sha256_file, write_csv, write_manifest
from .l1_filter import extract_kinks
from .risk_lab import NOISE_LAWS, SyntheticSpec, risk_study, summarize_risk
from .series import WindowPolicy, build_series, format_date, load_raw, parse_date
from .sparse_hp import DEFAULT_NODE_BUDGET, SparseHpProblem, restricted_qp, solve_bnb
from .tuning import TuningGrid, loocv_sparse_hp, match_fidelity, resolve_threads

__all__ = ["main", "RunConfig", "build_config"]

EXIT_OK, EXIT_INPUT, EXIT_BUDGET, EXIT_INVARIANT = 0, 2, 3, 4
FILTER_NAMES = ("sparse_hp", "hp", "l1", "sqrt_l1", "parametric")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _list(conv):
    def parse(v):
        if isinstance(v, str):
            v = [p for p in v.replace(" ", "").split(",") if p]
        if not isinstance(v, (list, tuple)):
            raise InputError(f"expected a list, got {v!r}")
        return tuple(conv(x) for x in v)

    return parse


def _int(v):
    if isinstance(v, bool):
        raise InputError(f"expected an integer, got {v!r}")
    try:
        f = float(v)
    except (TypeError, ValueError):
        raise InputError(f"expected an integer, got {v!r}") from None
    if not f.is_integer():
        raise InputError(f"expected an integer, got {v!r}")
    return int(f)


def _float(v):
    if isinstance(v, bool):
        raise InputError(f"expected a number, got {v!r}")
    try:
        return float(v)
    except (TypeError, ValueError):
        raise InputError(f"expected a number, got {v!r}") from None


def _bool(v):
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.lower() in ("true", "false", "yes", "no", "1", "0"):
        return v.lower() in ("true", "yes", "1")
    raise InputError(f"expected true/false, got {v!r}")


def _choice(*names):
    def parse(v):
        if v not in names:
            raise InputError(f"expected one of {names}, got {v!r}")
        return v

    return parse


def _opt(conv):
    return lambda v: None if v is None else conv(v)


def _str(v):
    if not isinstance(v, str):
        raise InputError(f"expected a string, got {v!r}")
    return v


def _t0(v):
    if isinstance(v, int) and not isinstance(v, bool):
        return v
    if isinstance(v, str):
        return int(v) if v.strip().lstrip("-").isdigit() else v.strip()
    if hasattr(v, "isoformat"):  # YAML turns bare dates into date objects
        return v.isoformat()
    raise InputError(f"t0 must be an index or an ISO date, got {v!r}")


# name -> (converter, default)
SCHEMA = {
    "input": (_opt(_str), None),
    "population": (_opt(_float), None),
    "format": (_choice("cumulative", "daily-increments"), "cumulative"),
    "censor": (_bool, True),
    "start_threshold": (_float, 100.0),
    "censor_threshold": (_float, 10.0),
    "negative_delta": (_choice("error", "clip"), "error"),
    "out_dir": (_str, "kinkfilter-out"),
    "threads": (_opt(_int), None),
    "seed": (_int, 0),
    "gamma": (_float, DEFAULT_GAMMA),
    "eta": (_float, 1e-6),
    "kappa_set": (_list(_int), (2, 3, 4)),
    "lambda_set": (_list(_float), tuple(2.0**j for j in range(6))),
    "kappa": (_opt(_int), None),
    "lam": (_opt(_float), None),
    "filters": (_list(_choice(*FILTER_NAMES)), ("sparse_hp", "hp", "l1", "sqrt_l1")),
    "t0": (_opt(_t0), None),
    "rho": (_opt(_float), None),
    "node_budget": (_int, DEFAULT_NODE_BUDGET),
    # risk lab
    "t_set": (_list(_int), (50, 100, 200)),
    "reps": (_int, 50),
    "sigma": (_float, 0.3),
    "noise": (_choice(*NOISE_LAWS), "gaussian"),
    "df": (_float, 5.0),
    "kink_fractions": (_list(_float), (0.3, 0.65)),
    "slopes": (_list(_float), (2.0, -3.0, 1.0)),
    "level": (_float, -0.5),
    "risk_lambda": (_float, 1.0),
    "methods": (_list(_choice("sparse_hp", "l1")), ("sparse_hp", "l1")),
}


@dataclass(frozen=True)
class RunConfig:
    input: str | None
    population: float | None
    format: str
    censor: bool
    start_threshold: float
    censor_threshold: float
    negative_delta: str
    out_dir: str
    threads: int | None
    seed: int
    gamma: float
    eta: float
    kappa_set: tuple
    lambda_set: tuple
    kappa: int | None
    lam: float | None
    filters: tuple
    t0: object
    rho: float | None
    node_budget: int
    t_set: tuple
    reps: int
    sigma: float
    noise: str
    df: float
    kink_fractions: tuple
    slopes: tuple
    level: float
    risk_lambda: float
    methods: tuple

    def grid(self):
        return TuningGrid(self.kappa_set, self.lambda_set)

    def window(self):
        return WindowPolicy(self.start_threshold, self.censor_threshold, self.censor)


def load_config_file(path):
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise InputError(f"config {path} is not valid YAML: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise InputError(f"config {path} must be a mapping of option names to values")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def build_config(cli_values, file_values=None):
    """Merge defaults, config file and command line (in rising priority) and validate."""
    file_values = file_values or {}
    unknown = sorted(set(file_values) - set(SCHEMA))
    if unknown:
        raise InputError(f"unknown config keys: {', '.join(unknown)}")
    merged = {}
    for name, (conv, default) in SCHEMA.items():
        raw = cli_values.get(name)
        if raw is None:
            raw = file_values.get(name, default)
        try:
            merged[name] = conv(raw)
        except InputError as exc:
            raise InputError(f"option {name}: {exc}") from None
    cfg = RunConfig(**merged)
    cfg.grid()
    if cfg.population is not None and not cfg.population > 0:
        raise InputError("option population: must be positive")
    if not cfg.gamma > 0:
        raise InputError("option gamma: must be positive")
    if cfg.eta < 0:
        raise InputError("option eta: must be non-negative")
    if cfg.rho is not None and not 0 < cfg.rho <= 1:
        raise InputError("option rho: must lie in (0, 1]")
    if cfg.threads is not None:
        resolve_threads(cfg.threads)
    return cfg


# ---------------------------------------------------------------------------
# pipeline stages
# ---------------------------------------------------------------------------


class _Run:
    """State shared between stages; files are written as each stage completes."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.out = Path(cfg.out_dir)
        self.threads = resolve_threads(cfg.threads)
        self.files = []
        self.diag = {}
        self.gap = 0.0
        self.series = None
        self.tuning = None
        self.sparse = None
        self.fits = {}

    def write(self, name, header, rows):
        write_csv(self.out / name, header, rows)
        self.files.append(name)

    def dates(self):
        return [format_date(d) for d in self.series.dates]

    # -- stages -------------------------------------------------------------

    def load(self):
        cfg = self.cfg
        if not cfg.input:
            raise InputError("an --input CSV is required")
        if cfg.population is None:
            raise InputError("--population is required")
        raw = load_raw(cfg.input, cfg.population, fmt=cfg.format)
        policy = "clip_to_zero" if cfg.negative_delta == "clip" else "error"
        self.series = build_series(raw, cfg.window(), negative_delta=policy)
        s = self.series
        rows = zip(self.dates(), s.C, s.R, s.D, s.S, s.I, s.Y, s.Ybar, s.y)
        self.write("series.csv", ["date", "C", "R", "D", "S", "I", "Y", "Ybar", "y"], rows)
        self.diag["series"] = {"T": len(s), "start": self.dates()[0], "end": self.dates()[-1],
                               "warnings": list(s.warnings)}

    def tune(self):
        res = loocv_sparse_hp(self.series.y, self.cfg.grid(), threads=self.threads,
                              node_budget=self.cfg.node_budget)
        self.tuning = res
        self.write("cv_surface.csv", ["kappa", "lambda", "score"], res.surface())
        self.gap = max(self.gap, res.max_gap)
        self.diag["tuning"] = {
            "selected": {"kappa": res.selected[0], "lambda": res.selected[1]},
            "invalid_cells": [list(c) for c in res.invalid],
            "max_gap": res.max_gap,
            "cells": [{"kappa": k, "lambda": v, "nodes": d.nodes, "max_gap": d.max_gap,
                       "bounds_flags": d.bounds_flags, "full_kinks": list(d.full_kinks),
                       "error": d.error} for (k, v), d in res.diagnostics.items()],
        }

    def fit_sparse(self):
        cfg = self.cfg
        if cfg.kappa is not None and cfg.lam is not None:
            kappa, lam = cfg.kappa, cfg.lam
        else:
            if self.tuning is None:
                self.tune()
            kappa, lam = self.tuning.selected
            kappa = cfg.kappa if cfg.kappa is not None else kappa
            lam = cfg.lam if cfg.lam is not None else lam
        y = self.series.y
        sol = solve_bnb(SparseHpProblem(y, kappa, lam), node_budget=cfg.node_budget)
        _check_sparse(y, kappa, lam, sol)
        if sol.bounds_violation:
            print(f"kinkfilter: warning: box/big-M bounds bind at the selected kinks "
                  f"(violation {sol.max_violation:.3g}); re-solved with bounds", file=sys.stderr)
        self.sparse = sol
        self.gap = max(self.gap, sol.bound_gap)
        self.fits["sparse_hp"] = (sol.f, sol.kink_set, {"kappa": kappa, "lambda": lam})
        self.diag["sparse_hp"] = {"kappa": kappa, "lambda": lam, "kinks": list(sol.kink_set),
                                  "objective": sol.objective, "fidelity": sol.fidelity,
                                  "nodes": sol.nodes_explored, "bound_gap": sol.bound_gap,
                                  "bounds_violation": sol.bounds_violation}

    def comparators(self):
        cfg = self.cfg
        y = self.series.y
        for filt in ("hp", "l1", "sqrt_l1"):
            if filt not in cfg.filters:
                continue
            m = match_fidelity(y, self.sparse.fidelity, filt)
            kinks = extract_kinks(m.solution.f, cfg.eta).indices if filt != "hp" else ()
            self.fits[filt] = (m.solution.f, kinks, {"lambda": m.lam})
            self.diag[filt] = {"lambda": m.lam, "fidelity": m.fidelity, "target": m.target,
                               "kinks": list(kinks), "bisection_steps": m.iterations}
        if "parametric" in cfg.filters:
            if cfg.t0 is None:
                raise InputError("the parametric filter needs --t0 (index or ISO date)")
            t0 = self._index(cfg.t0)
            fit = parametric_fit(y, t0)
            self.fits["parametric"] = (fit.fitted, (t0,), {"t0": t0})
            self.diag["parametric"] = {"alpha0": fit.alpha0, "alpha1": fit.alpha1, "t0": t0}

    def _index(self, t0):
        if isinstance(t0, int):
            return t0
        idx = parse_date(t0) - self.series.t0_date
        if not 0 <= idx < len(self.series):
            raise InputError(f"t0 {t0} lies outside the analysis window")
        return idx

    def write_trends(self):
        dates = self.dates()
        y = self.series.y
        table = []
        for name in FILTER_NAMES:
            if name not in self.fits:
                continue
            f, kinks, _ = self.fits[name]
            flag = np.zeros(len(y), dtype=bool)
            flag[list(kinks)] = True
            self.write(f"trend_{name}.csv", ["date", "y", "f", "kink_flag"], zip(dates, y, f, flag))
            table += [(name, k, dates[k]) for k in kinks]
        self.write("kinks.csv", ["filter", "index", "date"], table)

    def report(self):
        f, kinks, _ = self.fits["sparse_hp"]
        rep = contact_growth_rates(f, kinks, self.cfg.gamma)
        if not np.all(rep.r0 > 0):
            raise InvariantViolation("R0 path is not positive")
        dates = self.dates()
        self.write("report.csv", ["date", "f", "R0", "xi", "segment_id"],
                   zip(dates, f, rep.r0, rep.xi, rep.segment_id))
        self.write("segments.csv", ["segment", "start_date", "end_date", "xi_percent"],
                   [(i, dates[s.start], dates[s.end], "%.2f" % s.xi) for i, s in enumerate(rep.segments)])
        self.diag["report"] = {"gamma": rep.gamma,
                               "segments": [{"start": s.start, "end": s.end, "xi": s.xi}
                                            for s in rep.segments]}
        if self.cfg.rho is not None:
            u = underreporting_diagnostic(self.series, self.cfg.rho)
            self.diag["underreporting"] = {
                "rho": u.rho, "correction": u.correction, "ratio_max": u.ratio_max,
                "ratio_median": u.ratio_median, "ratio_min": u.ratio_min,
                "fraction_negligible": u.fraction_negligible, "negligible": u.negligible}

    def manifest(self, command):
        cfg = asdict(self.cfg)
        cfg.pop("threads")  # worker count never changes results
        cfg.pop("out_dir")
        inputs = {}
        if self.cfg.input:
            inputs[Path(self.cfg.input).name] = sha256_file(self.cfg.input)
        import numba
        import scipy
        import sklearn

        content = {
            "command": command,
            "config": cfg,
            "inputs": inputs,
            "versions": {"kinkfilter": __version__, "numpy": np.__version__,
                         "scipy": scipy.__version__, "numba": numba.__version__,
                         "scikit-learn": sklearn.__version__},
            "tolerances": {"objective_tie_rtol": 1e-9, "feasibility": 1e-9,
                           "l1_kkt": 1e-8, "fidelity_match_rtol": 1e-6, "eta": self.cfg.eta},
            "diagnostics": self.diag,
            "outputs": sorted(self.files + ["manifest.json"]),
        }
        write_manifest(self.out / "manifest.json", content)


def _check_sparse(y, kappa, lam, sol):
    if len(sol.kink_set) > kappa or int(sol.z.sum()) != len(sol.kink_set):
        raise InvariantViolation(f"sparse HP returned {len(sol.kink_set)} kinks for kappa={kappa}")
    problem = SparseHpProblem(y, kappa, lam)
    if np.max(np.abs(second_differences(sol.f)), initial=0.0) > problem.bigM + 1e-9:
        raise InvariantViolation("sparse HP trend violates the big-M bound")
    if not sol.bounds_violation:
        refit = restricted_qp(y, sol.kink_set, lam).f
        if np.max(np.abs(refit - sol.f)) > 1e-10 * max(1.0, np.max(np.abs(y))):
            raise InvariantViolation("restricted refit does not reproduce the sparse HP trend")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_series(run):
    run.load()
    run.manifest("series")


def cmd_tune(run):
    run.load()
    run.tune()
    k, v = run.tuning.selected
    print(f"selected kappa={k} lambda={v:g}")
    run.manifest("tune")


def cmd_filter(run):
    run.load()
    run.fit_sparse()
    run.comparators()
    run.write_trends()
    run.manifest("filter")


def cmd_report(run):
    run.load()
    run.fit_sparse()
    run.report()
    run.manifest("report")


def cmd_run(run):
    run.load()
    run.tune()
    run.fit_sparse()
    run.comparators()
    run.write_trends()
    run.report()
    run.manifest("run")
    print("kinks: " + ", ".join(run.dates()[k] for k in run.sparse.kink_set))


def cmd_risklab(run):
    cfg = run.cfg
    spec = SyntheticSpec(T=max(cfg.t_set), kink_fractions=cfg.kink_fractions, slopes=cfg.slopes,
                         level=cfg.level, noise=cfg.noise, sigma=cfg.sigma, df=cfg.df, seed=cfg.seed)
    rows = risk_study(spec, Ts=cfg.t_set, reps=cfg.reps, lam=cfg.risk_lambda, methods=cfg.methods,
                      eta=cfg.eta, threads=run.threads)
    run.write("risk_study.csv", ["rep", "T", "method", "risk", "kink_count", "exact_recovery"], rows)
    summary = summarize_risk(rows)
    run.write("risk_summary.csv", ["T", "method", "median", "q25", "q75", "replications"],
              [(e.T, e.method, e.median, *e.quartiles, e.replications) for e in summary])
    for e in summary:
        print(f"T={e.T:<5d} {e.method:<10s} median risk {e.median:.6g}")
    run.manifest("risklab")


COMMANDS = {
    "series": (cmd_series, "ingest and transform case data to the log contact-rate target"),
    "tune": (cmd_tune, "leave-one-out CV surface over the (kappa, lambda) grid"),
    "filter": (cmd_filter, "sparse HP fit plus fidelity-matched comparator filters"),
    "report": (cmd_report, "contact growth rates and R0 path of the sparse HP fit"),
    "run": (cmd_run, "the full pipeline with a run manifest"),
    "risklab": (cmd_risklab, "synthetic risk and kink-count study"),
}


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("general")
    g.add_argument("--config", help="YAML file with option values (command line wins)")
    g.add_argument("--out-dir", dest="out_dir")
    g.add_argument("--threads", help="worker processes (default: $KINKFILTER_THREADS or 1)")
    g.add_argument("--seed")
    g.add_argument("--eta", help="effective-zero threshold for counting kinks (default 1e-6)")

    data = argparse.ArgumentParser(add_help=False)
    d = data.add_argument_group("data")
    d.add_argument("--input", help="CSV with header date,confirmed,recovered,deaths")
    d.add_argument("--population")
    d.add_argument("--format", choices=["cumulative", "daily-increments"])
    d.add_argument("--censor", action=argparse.BooleanOptionalAction, default=None,
                   help="end the window when new cases fall below the censor threshold")
    d.add_argument("--start-threshold", dest="start_threshold")
    d.add_argument("--censor-threshold", dest="censor_threshold")
    d.add_argument("--negative-delta", dest="negative_delta", choices=["error", "clip"])

    fit = argparse.ArgumentParser(add_help=False)
    f = fit.add_argument_group("filtering")
    f.add_argument("--kappa-set", dest="kappa_set", help="comma-separated, default 2,3,4")
    f.add_argument("--lambda-set", dest="lambda_set", help="comma-separated, default 1,2,4,8,16,32")
    f.add_argument("--kappa", help="fix kappa instead of tuning it")
    f.add_argument("--lambda", dest="lam", help="fix lambda instead of tuning it")
    f.add_argument("--filters", help=f"comma-separated subset of {','.join(FILTER_NAMES)}")
    f.add_argument("--t0", help="break index or ISO date for the parametric fit")
    f.add_argument("--gamma", help="recovery plus death rate (default 1/18)")
    f.add_argument("--rho", help="reporting fraction for the under-reporting diagnostic")
    f.add_argument("--node-budget", dest="node_budget")

    risk = argparse.ArgumentParser(add_help=False)
    r = risk.add_argument_group("synthetic study")
    r.add_argument("--T-set", dest="t_set", help="comma-separated series lengths")
    r.add_argument("--reps")
    r.add_argument("--sigma")
    r.add_argument("--noise", help=f"one of {','.join(NOISE_LAWS)}")
    r.add_argument("--df", help="Student-t degrees of freedom")
    r.add_argument("--kink-fractions", dest="kink_fractions")
    r.add_argument("--slopes")
    r.add_argument("--level")
    r.add_argument("--risk-lambda", dest="risk_lambda")
    r.add_argument("--methods", help="comma-separated subset of sparse_hp,l1")

    parser = argparse.ArgumentParser(prog="kinkfilter", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"kinkfilter {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        parents = [common, risk] if name == "risklab" else [common, data]
        if name not in ("series", "risklab"):
            parents.append(fit)
        sub.add_parser(name, parents=parents, help=help_text, description=help_text)
    return parser


def main(argv=None):
    parser = _parser()
    args = parser.parse_args(argv)
    values = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        file_values = load_config_file(args.config) if args.config else {}
        cfg = build_config(values, file_values)
        run = _Run(cfg)
        COMMANDS[args.command][0](run)
    except InvariantViolation as exc:
        print(f"kinkfilter: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (InputError, BracketError, EnumerationCapError) as exc:
        print(f"kinkfilter: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConvergenceError as exc:
        print(f"kinkfilter: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except KinkFilterError as exc:
        print(f"kinkfilter: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except OSError as exc:
        print(f"kinkfilter: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if run.gap > 0:
        print(f"kinkfilter: node budget exhausted, optimality gap {run.gap:.3g}", file=sys.stderr)
        return EXIT_BUDGET
    return EXIT_OK
