"""Leave-one-out tuning of the sparse HP filter and fidelity matching of comparators."""

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_count, check_positive, check_series
from .exceptions import BracketError, DegenerateProblemError, InputError, KinkFilterError
from .hp_filter import hp_solve
from .l1_filter import l1_solve, lambda_max, sqrt_l1_solve
from .sparse_hp import DEFAULT_NODE_BUDGET, SparseHpProblem, solve_bnb

__all__ = [
    "TuningGrid",
    "CellDiagnostics",
    "TuningResult",
    "loocv_sparse_hp",
    "FidelityMatch",
    "match_fidelity",
    "fidelity_of",
    "default_bracket",
    "resolve_threads",
]

FILTERS = ("hp", "l1", "sqrt_l1")


@dataclass(frozen=True)
class TuningGrid:
    kappas: tuple = (2, 3, 4)
    lambdas: tuple = tuple(2.0**j for j in range(6))

    def __post_init__(self):
        if not self.kappas or not self.lambdas:
            raise InputError("tuning grid needs at least one kappa and one lambda")
        kappas = tuple(sorted({check_count(k, "kappa") for k in self.kappas}))
        lambdas = tuple(sorted({check_positive(v, "lambda") for v in self.lambdas}))
        object.__setattr__(self, "kappas", kappas)
        object.__setattr__(self, "lambdas", lambdas)

    def cells(self):
        return [(k, v) for k in self.kappas for v in self.lambdas]


@dataclass(frozen=True)
class CellDiagnostics:
    full_kinks: tuple = ()
    max_gap: float = 0.0
    nodes: int = 0
    bounds_flags: int = 0
    error: str | None = None

    @property
    def valid(self):
        return self.error is None


@dataclass(frozen=True)
class TuningResult:
    grid: TuningGrid
    scores: dict
    selected: tuple
    diagnostics: dict = field(repr=False)

    @property
    def invalid(self):
        return tuple(c for c, d in self.diagnostics.items() if not d.valid)

    @property
    def max_gap(self):
        return max((d.max_gap for d in self.diagnostics.values()), default=0.0)

    def surface(self):
        """Rows ``(kappa, lambda, score)`` in grid order; invalid cells score nan."""
        return [(k, v, self.scores.get((k, v), math.nan)) for k, v in self.grid.cells()]


def resolve_threads(threads=None):
    if threads is None:
        threads = os.environ.get("KINKFILTER_THREADS", 1)
    try:
        threads = int(threads)
    except (TypeError, ValueError):
        raise InputError(f"threads must be a positive integer, got {threads!r}") from None
    if threads < 1:
        raise InputError(f"threads must be a positive integer, got {threads!r}")
    return threads


def _loo_cell(args):
    y, kappa, lam, node_budget = args
    try:
        full = solve_bnb(SparseHpProblem(y, kappa, lam), node_budget=node_budget)
        warm = full.kink_set
        score = 0.0
        gap, nodes, flags = full.bound_gap, full.nodes_explored, int(full.bounds_violation)
        for s in range(len(y)):
            sol = solve_bnb(SparseHpProblem(y, kappa, lam, holdout=s), warm_start=warm,
                            node_budget=node_budget)
            score += (y[s] - float(sol.model.predict(s))) ** 2
            gap = max(gap, sol.bound_gap)
            nodes += sol.nodes_explored
            flags += int(sol.bounds_violation)
        return score, CellDiagnostics(warm, gap, nodes, flags)
    except KinkFilterError as exc:
        return math.nan, CellDiagnostics(error=f"{type(exc).__name__}: {exc}")


def loocv_sparse_hp(y, grid=None, threads=None, node_budget=DEFAULT_NODE_BUDGET):
    """Leave-one-out CV surface over ``grid``.

    Each held-out point is predicted by the fitted hinge model of the
    remaining data; every leave-out solve is warm-started with the
    full-data kink set. Cells run in parallel with ``threads`` processes;
    the result does not depend on the worker count.
    """
    y = check_series(y, min_length=10)
    grid = grid or TuningGrid()
    if max(grid.kappas) > len(y) - 2:
        raise InputError(f"kappa={max(grid.kappas)} exceeds the {len(y) - 2} interior positions")
    threads = resolve_threads(threads)
    cells = grid.cells()
    jobs = [(y, k, v, node_budget) for k, v in cells]
    if threads == 1 or len(jobs) == 1:
        out = [_loo_cell(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            out = list(pool.map(_loo_cell, jobs))
    scores, diags = {}, {}
    for cell, (score, diag) in zip(cells, out):
        diags[cell] = diag
        if diag.valid:
            scores[cell] = score
    if not scores:
        raise KinkFilterError("every tuning cell failed; see diagnostics")
    # smaller kappa, then smaller lambda, on ties
    selected = min(scores, key=lambda c: (scores[c], c[0], c[1]))
    return TuningResult(grid=grid, scores=scores, selected=selected, diagnostics=diags)


# ---------------------------------------------------------------------------
# fidelity matching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FidelityMatch:
    filter: str
    lam: float
    fidelity: float
    target: float
    solution: object
    iterations: int


def _fit(y, filt, lam):
    if filt == "hp":
        return hp_solve(y, lam)
    if filt == "l1":
        return l1_solve(y, lam)
    return sqrt_l1_solve(y, lam)


def fidelity_of(y, filt, lam):
    """Fidelity of a comparator fit; a collapsed square-root fit counts as 0."""
    try:
        sol = _fit(y, filt, lam)
    except DegenerateProblemError:
        return 0.0, None
    return sol.fidelity, sol


def default_bracket(y, filt):
    """Lambda interval whose upper end reaches (or nearly reaches) the straight-line fit."""
    y = check_series(y)
    lmax = lambda_max(y)
    if filt == "hp":
        return (1e-8, 1e12)
    if filt == "l1":
        return (1e-10 * max(lmax, 1e-12), max(lmax, 1e-12))
    t = np.arange(len(y), dtype=float)
    resid = y - np.polyval(np.polyfit(t, y, 1), t)
    rn = float(np.linalg.norm(resid))
    return (1e-10, max(lmax / (2.0 * rn), 1e-8) * 1.01 if rn > 0 else 1.0)


def match_fidelity(y, target, filt, bracket=None, rtol=1e-6, max_iter=300):
    """Lambda at which a comparator filter fits ``y`` exactly as well as ``target``.

    Geometric bisection on ``bracket``; fidelity is nondecreasing in lambda,
    which is checked at the bracket ends before bisecting.
    """
    y = check_series(y)
    if filt not in FILTERS:
        raise InputError(f"filter must be one of {FILTERS}, got {filt!r}")
    target = float(target)
    if not np.isfinite(target) or target < 0:
        raise InputError(f"target fidelity must be finite and non-negative, got {target!r}")
    tol = rtol * target
    if target == 0:
        fid, sol = fidelity_of(y, filt, 0.0)
        return FidelityMatch(filt, 0.0, fid, target, sol, 0)
    lo, hi = bracket or default_bracket(y, filt)
    if not 0 < lo < hi:
        raise InputError(f"bracket must satisfy 0 < lo < hi, got ({lo}, {hi})")
    f_lo, s_lo = fidelity_of(y, filt, lo)
    f_hi, s_hi = fidelity_of(y, filt, hi)
    if f_lo > f_hi:
        raise BracketError(
            f"{filt} fidelity is not increasing across the bracket "
            f"({f_lo:.6g} at {lo:g}, {f_hi:.6g} at {hi:g})", lo, hi)
    if abs(f_lo - target) <= tol:
        return FidelityMatch(filt, lo, f_lo, target, s_lo, 0)
    if abs(f_hi - target) <= tol:
        return FidelityMatch(filt, hi, f_hi, target, s_hi, 0)
    if not f_lo < target < f_hi:
        raise BracketError(
            f"target fidelity {target:.6g} outside the attainable range "
            f"[{f_lo:.6g}, {f_hi:.6g}] of {filt} on lambda in [{lo:g}, {hi:g}]", lo, hi)
    for it in range(1, max_iter + 1):
        mid = math.sqrt(lo * hi)
        fid, sol = fidelity_of(y, filt, mid)
        if abs(fid - target) <= tol:
            return FidelityMatch(filt, mid, fid, target, sol, it)
        if fid < target:
            lo = mid
        else:
            hi = mid
        if hi <= lo * (1 + 1e-15):
            break
    raise BracketError(
        f"bisection for {filt} stalled at lambda={math.sqrt(lo * hi):.17g} "
        f"without reaching the fidelity tolerance", lo, hi)
