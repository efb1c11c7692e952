"""Exact l0-constrained Hodrick-Prescott filter.

For a fixed kink set ``K`` the problem is a ridge regression on the hinge
basis ``1, t, (t - k)_+`` with the ridge on the hinge weights only, because
``(D f)_k`` equals the hinge weight at ``k`` and vanishes elsewhere. The
global problem picks the best ``K`` with ``|K| <= kappa``.

``solve_bnb`` places kinks in chronological order. A node fixes the first
``j`` kinks; its lower bound adds

* the exact penalised fit of the rows up to the newest kink, and
* a table lower bound for the remaining rows with at most ``kappa - j``
  kinks, obtained by cutting the trend at kinks (dropping continuity) and
  taking the larger of two such relaxations: cut at every kink
  (segmented least squares) or at every second kink (blocks holding one
  continuous kink each).

Both relaxations contain every feasible completion, so the bound is valid.
"""

import functools
import heapq
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.optimize import minimize

from ._validation import check_count, check_nonnegative, check_series
from .exceptions import EnumerationCapError, InputError, RankDeficiencyError
from .hp_filter import hp_solve, second_differences
from .l1_filter import KinkSet

__all__ = [
    "SparseHpProblem",
    "KinkBasisModel",
    "SparseHpSolution",
    "restricted_qp",
    "solve_exhaustive",
    "solve_bnb",
    "DEFAULT_NODE_BUDGET",
    "DEFAULT_ENUMERATION_CAP",
]

DEFAULT_NODE_BUDGET = 10_000_000
DEFAULT_ENUMERATION_CAP = 5_000_000
TIE_RTOL = 1e-9
FEAS_TOL = 1e-9


def _tie_tol(value):
    return TIE_RTOL * max(1.0, abs(value))


@dataclass(frozen=True)
class SparseHpProblem:
    """Data, kink budget ``kappa`` and ridge weight ``lam``.

    ``holdout`` drops one observation from the fidelity term (leave-one-out);
    the box ``[f_lo, f_hi]`` and ``bigM`` always come from the full data.
    """

    y: np.ndarray
    kappa: int
    lam: float
    holdout: int | None = None
    f_lo: float = field(init=False)
    f_hi: float = field(init=False)
    bigM: float = field(init=False)

    def __post_init__(self):
        y = check_series(self.y)
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        kappa = check_count(self.kappa, "kappa")
        if kappa > len(y) - 2:
            raise InputError(f"kappa={kappa} exceeds the {len(y) - 2} interior positions")
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "lam", check_nonnegative(self.lam, "lam"))
        if self.holdout is not None and not 0 <= self.holdout < len(y):
            raise InputError(f"holdout index {self.holdout} out of range")
        object.__setattr__(self, "f_lo", float(y.min()))
        object.__setattr__(self, "f_hi", float(y.max()))
        object.__setattr__(self, "bigM", float(np.max(np.abs(second_differences(y)))))

    @property
    def T(self):
        return len(self.y)

    @property
    def weights(self):
        w = np.ones(self.T)
        if self.holdout is not None:
            w[self.holdout] = 0.0
        return w


@dataclass(frozen=True)
class KinkBasisModel:
    """Piecewise-linear trend ``a + b*t + sum_k c_k (t - k)_+`` on ``t = 0..T-1``."""

    kinks: tuple
    intercept: float
    slope: float
    hinge: np.ndarray
    T: int
    lam: float
    fidelity: float
    penalty: float

    def predict(self, t):
        t = np.asarray(t, dtype=float)
        out = self.intercept + self.slope * t
        for k, c in zip(self.kinks, self.hinge):
            out = out + c * np.maximum(t - k, 0.0)
        return out

    @property
    def f(self):
        return self.predict(np.arange(self.T))

    @property
    def objective(self):
        return self.fidelity + self.penalty


def _design(T, kinks):
    t = np.arange(T, dtype=float)
    return np.column_stack([np.ones(T), t] + [np.maximum(t - k, 0.0) for k in kinks])


def _check_kinks(kinks, T):
    kinks = tuple(sorted(int(k) for k in kinks))
    if len(set(kinks)) != len(kinks):
        raise InputError(f"duplicate kink positions in {kinks}")
    if any(k < 1 or k > T - 2 for k in kinks):
        raise InputError(f"kinks must be interior indices in 1..{T - 2}, got {kinks}")
    return kinks


def restricted_qp(y, kinks, lam, weights=None):
    """Best trend with kinks only in ``kinks``: ridge on the hinge weights.

    Solved as a QR least-squares problem on the weighted design stacked on
    ``sqrt(lam)`` rows for the hinge coefficients.
    """
    y = check_series(y)
    T = len(y)
    kinks = _check_kinks(kinks, T)
    lam = check_nonnegative(lam, "lam")
    w = np.ones(T) if weights is None else np.asarray(weights, dtype=float)
    X = _design(T, kinks)
    sw = np.sqrt(w)
    m = len(kinks)
    A = np.vstack([sw[:, None] * X, np.hstack([np.zeros((m, 2)), math.sqrt(lam) * np.eye(m)])])
    b = np.concatenate([sw * y, np.zeros(m)])
    # equilibrate the columns, then refine once: near-exact fits leave residuals
    # far below the rounding error of a single QR solve
    scale = np.linalg.norm(A, axis=0)
    scale[scale == 0] = 1.0
    Q, R = np.linalg.qr(A / scale)
    diag = np.abs(np.diag(R))
    if diag.min(initial=np.inf) <= 1e-10 * max(1.0, diag.max(initial=0.0)):
        raise RankDeficiencyError(f"hinge design for kinks {kinks} is rank deficient")
    beta = np.linalg.solve(R, Q.T @ b)
    for _ in range(2):
        beta = beta + np.linalg.solve(R, Q.T @ (b - (A / scale) @ beta))
    beta = beta / scale
    resid = y - X @ beta
    c = beta[2:]
    return KinkBasisModel(
        kinks=kinks,
        intercept=float(beta[0]),
        slope=float(beta[1]),
        hinge=c,
        T=T,
        lam=lam,
        fidelity=float(np.sum(w * resid**2)),
        penalty=float(lam * (c @ c)),
    )


@dataclass(frozen=True)
class SparseHpSolution:
    f: np.ndarray
    kinks: KinkSet
    z: np.ndarray
    objective: float
    fidelity: float
    penalty: float
    nodes_explored: int
    bound_gap: float
    model: KinkBasisModel
    bounds_violation: bool = False
    max_violation: float = 0.0

    @property
    def kink_set(self):
        return tuple(self.kinks.indices)


# ---------------------------------------------------------------------------
# fast batched evaluation on prefix sums
# ---------------------------------------------------------------------------


class _Sums:
    """Weighted prefix sums of ``1, t, t^2, y, t*y, y^2``; ``S[n]`` sums rows ``< n``.

    With 0/1 weights the sums of powers of ``t`` are exact integers, so the
    hinge Gram entries carry no rounding error. ``y`` is centred first; the
    free intercept makes every objective invariant to that.
    """

    def __init__(self, y, w):
        self.T = len(y)
        t = np.arange(self.T, dtype=float)
        yc = y - (w @ y) / w.sum()

        def cum(a):
            return np.concatenate([[0.0], np.cumsum(a)])

        self.S0, self.S1, self.S2 = cum(w), cum(w * t), cum(w * t * t)
        self.Y0, self.Y1, self.YY = cum(w * yc), cum(w * t * yc), cum(w * yc * yc)
        self.scale = max(1.0, self.YY[-1])


@njit(cache=True)
def _fit_kernel(S0, S1, S2, Y0, Y1, YY, starts, ends, kinks, lam, out):
    """Penalised hinge fit of rows ``starts[n]..ends[n]-1`` for each ``n``.

    Gram matrix from prefix sums, then an in-place Cholesky; a pivot that
    collapses relative to its diagonal entry marks a singular design and the
    item falls back to the pseudo-inverse.
    """
    N, m = kinks.shape
    p = m + 2
    G = np.empty((p, p))
    L = np.empty((p, p))
    r = np.empty(p)
    z = np.empty(p)
    for n in range(N):
        a = starts[n]
        e = ends[n]
        G[0, 0] = S0[e] - S0[a]
        G[0, 1] = G[1, 0] = S1[e] - S1[a]
        G[1, 1] = S2[e] - S2[a]
        r[0] = Y0[e] - Y0[a]
        r[1] = Y1[e] - Y1[a]
        for i in range(m):
            ki = kinks[n, i]
            k = float(ki)
            lo = min(max(ki + 1, a), e)
            s0 = S0[e] - S0[lo]
            s1 = S1[e] - S1[lo]
            s2 = S2[e] - S2[lo]
            c = 2 + i
            G[0, c] = G[c, 0] = s1 - k * s0
            G[1, c] = G[c, 1] = s2 - k * s1
            r[c] = (Y1[e] - Y1[lo]) - k * (Y0[e] - Y0[lo])
            for j in range(i + 1):
                k2 = float(kinks[n, j])
                lo2 = min(max(max(ki, kinks[n, j]) + 1, a), e)
                v = (S2[e] - S2[lo2]) - (k + k2) * (S1[e] - S1[lo2]) + k * k2 * (S0[e] - S0[lo2])
                G[c, 2 + j] = v
                G[2 + j, c] = v
            G[c, c] += lam
        ok = True
        for j in range(p):
            d = G[j, j]
            for q in range(j):
                d -= L[j, q] * L[j, q]
            if d <= 1e-12 * max(G[j, j], 1e-300):
                ok = False
                break
            L[j, j] = np.sqrt(d)
            for i in range(j + 1, p):
                v = G[i, j]
                for q in range(j):
                    v -= L[i, q] * L[j, q]
                L[i, j] = v / L[j, j]
        quad = 0.0
        if ok:
            for i in range(p):
                v = r[i]
                for q in range(i):
                    v -= L[i, q] * z[q]
                z[i] = v / L[i, i]
                quad += z[i] * z[i]
        else:
            sol = np.linalg.pinv(G) @ r
            for i in range(p):
                quad += r[i] * sol[i]
        out[n] = (YY[e] - YY[a]) - quad


def _fit(sums, starts, ends, kinks, lam):
    kinks = np.ascontiguousarray(kinks, dtype=np.int64)
    if kinks.ndim == 1:
        kinks = kinks[:, None]
    N = len(kinks)
    starts = np.broadcast_to(np.asarray(starts, dtype=np.int64), (N,)).copy()
    ends = np.broadcast_to(np.asarray(ends, dtype=np.int64), (N,)).copy()
    out = np.empty(N)
    _fit_kernel(sums.S0, sums.S1, sums.S2, sums.Y0, sums.Y1, sums.YY,
                starts, ends, kinks, float(lam), out)
    return out


def _prefix_objective(sums, kinks, ends, lam):
    """Penalised fit of rows ``0..ends-1`` with hinge kinks ``kinks`` (N x m)."""
    kinks = np.asarray(kinks, dtype=np.int64)
    return _fit(sums, 0, ends, kinks.reshape(len(kinks), -1), lam)


def _segment_ssr(sums):
    """``ssr[a, b]``: least-squares line fit of rows ``a..b``; ``inf`` for ``a > b``."""
    T = sums.T
    a = np.arange(T)[:, None]
    b = np.arange(T)[None, :] + 1

    def rng(S):
        return S[b] - S[a]

    s0, s1, s2 = rng(sums.S0), rng(sums.S1), rng(sums.S2)
    y0, y1, yy = rng(sums.Y0), rng(sums.Y1), rng(sums.YY)
    det = s0 * s2 - s1 * s1
    with np.errstate(divide="ignore", invalid="ignore"):
        two = (s2 * y0 * y0 - 2.0 * s1 * y0 * y1 + s0 * y1 * y1) / det
        one = np.where(s0 > 0, y0 * y0 / s0, 0.0)
    ssr = np.maximum(yy - np.where(det > 0, two, one), 0.0)
    ssr[a >= b] = np.inf
    return ssr


@functools.lru_cache(maxsize=8)
def _triples(T):
    flat = itertools.chain.from_iterable(itertools.combinations(range(T), 3))
    tri = np.fromiter(flat, dtype=np.int64).reshape(-1, 3)
    tri.setflags(write=False)
    return tri[:, 0], tri[:, 1], tri[:, 2]


def _one_kink_blocks(sums, lam, seg, last_only):
    """``C[a, b]``: best penalised continuous fit of rows ``a..b`` with at most one kink."""
    T = sums.T
    C = seg.copy()
    if last_only:
        a, k = np.meshgrid(np.arange(T), np.arange(T), indexing="ij")
        keep = k > a
        a, k = a[keep], k[keep]
        b = np.full_like(a, T - 1)
        keep = k < b
        a, k, b = a[keep], k[keep], b[keep]
    else:
        a, k, b = _triples(T)
    if a.size == 0:
        return C
    chunk = 200_000
    for s in range(0, a.size, chunk):
        aa, kk, bb = a[s : s + chunk], k[s : s + chunk], b[s : s + chunk]
        vals = _block_fit(sums, aa, kk, bb, lam)
        np.minimum.at(C, (aa, bb), vals)
    return np.maximum(C, 0.0)


def _block_fit(sums, a, k, b, lam):
    return _fit(sums, a, b + 1, k[:, None], lam)


def _suffix_bounds(sums, lam, kappa):
    """``B[m, t]``: lower bound on the best fit of rows ``t..T-1`` with ``<= m`` kinks."""
    T = sums.T
    if kappa == 0:
        return np.zeros((0, T + 1))
    seg = _segment_ssr(sums)
    mmax = kappa - 1
    D = np.zeros((mmax + 1, T + 1))
    D[0, :T] = seg[:, T - 1]
    # e ranges over block ends t..T-2; entries with e < t are inf in seg
    for m in range(1, mmax + 1):
        cont = seg[:, : T - 1] + D[m - 1, 1:T][None, :]
        D[m, :T] = np.minimum(D[m - 1, :T], cont.min(axis=1))
    if mmax == 0:
        return D
    C = _one_kink_blocks(sums, lam, seg, last_only=mmax < 2)
    E = np.zeros_like(D)
    E[0, :T] = seg[:, T - 1]
    E[1, :T] = C[:, T - 1]
    for m in range(2, mmax + 1):
        cont = C[:, : T - 1] + E[m - 2, 1:T][None, :]
        E[m, :T] = np.minimum(E[m - 1, :T], cont.min(axis=1))
    return np.maximum(D, E)


# ---------------------------------------------------------------------------
# selection, feasibility and packaging shared by both solvers
# ---------------------------------------------------------------------------


class _Candidates:
    """Kink sets whose screened objective is within tolerance of the best seen."""

    def __init__(self, slack_abs):
        self.best = np.inf
        self.items = []
        self.slack_abs = slack_abs

    def threshold(self):
        return self.best + _tie_tol(self.best) + self.slack_abs

    def offer(self, value, kinks):
        if value <= self.threshold():
            self.items.append((value, kinks))
        if value < self.best:
            self.best = value
            if len(self.items) > 64:
                thr = self.threshold()
                self.items = [it for it in self.items if it[0] <= thr]

    def select(self, problem):
        thr = self.threshold()
        pool = sorted({k for v, k in self.items if v <= thr})
        exact = {k: restricted_qp(problem.y, k, problem.lam, problem.weights) for k in pool}
        best = min(m.objective for m in exact.values())
        tied = [k for k in pool if exact[k].objective <= best + _tie_tol(best)]
        chosen = min(tied, key=lambda k: (len(k), k))
        return exact[chosen]


def _box_bigM_violation(problem, f, hinge):
    lo = problem.f_lo - f.min()
    hi = f.max() - problem.f_hi
    big = np.max(np.abs(hinge), initial=0.0) - problem.bigM
    return max(lo, hi, big, 0.0)


def _constrained_refit(problem, model):
    """Re-solve a kink set with the box and big-M bounds imposed."""
    T = problem.T
    X = _design(T, model.kinks)
    w = problem.weights
    lam = problem.lam
    m = len(model.kinks)
    y = problem.y

    def obj(beta):
        r = y - X @ beta
        c = beta[2:]
        return float(np.sum(w * r * r) + lam * c @ c)

    def grad(beta):
        g = -2.0 * X.T @ (w * (y - X @ beta))
        g[2:] += 2.0 * lam * beta[2:]
        return g

    E = np.hstack([np.zeros((m, 2)), np.eye(m)])
    cons = [
        {"type": "ineq", "fun": lambda b: X @ b - problem.f_lo, "jac": lambda b: X},
        {"type": "ineq", "fun": lambda b: problem.f_hi - X @ b, "jac": lambda b: -X},
    ]
    if m:
        cons += [
            {"type": "ineq", "fun": lambda b: problem.bigM - b[2:], "jac": lambda b: -E},
            {"type": "ineq", "fun": lambda b: problem.bigM + b[2:], "jac": lambda b: E},
        ]
    beta0 = np.concatenate([[model.intercept, model.slope], model.hinge])
    res = minimize(obj, beta0, jac=grad, constraints=cons, method="SLSQP",
                   options={"ftol": 1e-15, "maxiter": 1000})
    beta = res.x
    c = beta[2:]
    r = y - X @ beta
    return KinkBasisModel(
        kinks=model.kinks,
        intercept=float(beta[0]),
        slope=float(beta[1]),
        hinge=c,
        T=T,
        lam=lam,
        fidelity=float(np.sum(w * r * r)),
        penalty=float(lam * c @ c),
    )


def _package(problem, model, nodes, gap):
    f = model.f
    violation = _box_bigM_violation(problem, f, model.hinge)
    flagged = violation > FEAS_TOL
    if flagged:
        model = _constrained_refit(problem, model)
        f = model.f
    z = np.zeros(problem.T - 2, dtype=np.int8)
    z[np.array(model.kinks, dtype=int) - 1] = 1
    return SparseHpSolution(
        f=f,
        kinks=KinkSet(tuple(model.kinks), 0.0),
        z=z,
        objective=model.objective,
        fidelity=model.fidelity,
        penalty=model.penalty,
        nodes_explored=int(nodes),
        bound_gap=float(gap),
        model=model,
        bounds_violation=bool(flagged),
        max_violation=float(violation),
    )


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------


def _n_sets(n, kappa):
    return sum(math.comb(n, j) for j in range(kappa + 1))


def solve_exhaustive(problem, cap=DEFAULT_ENUMERATION_CAP, chunk=50_000):
    """Enumerate every kink set of size ``<= kappa`` and keep the best.

    Ties within 1e-9 relative go to fewer kinks, then the lexicographically
    smallest set.
    """
    positions = range(1, problem.T - 1)
    total = _n_sets(len(positions), problem.kappa)
    if total > cap:
        raise EnumerationCapError(f"{total} kink sets exceed the enumeration cap {cap}")
    sums = _Sums(problem.y, problem.weights)
    cands = _Candidates(1e-10 * sums.scale)
    T = problem.T
    for size in range(problem.kappa + 1):
        it = itertools.combinations(positions, size)
        while True:
            block = list(itertools.islice(it, chunk))
            if not block:
                break
            arr = np.array(block, dtype=np.int64).reshape(len(block), size)
            vals = _prefix_objective(sums, arr, np.full(len(block), T), problem.lam)
            order = np.argsort(vals, kind="stable")
            thr = cands.threshold()
            for i in order:
                if vals[i] > max(thr, cands.threshold()):
                    break
                cands.offer(float(vals[i]), block[i])
    return _package(problem, cands.select(problem), total, 0.0)


def _greedy_incumbent(problem):
    if problem.kappa == 0:
        return ()
    relax = hp_solve(problem.y, problem.lam if problem.lam > 0 else 1.0)
    curv = np.abs(second_differences(relax.f))
    top = np.argsort(-curv, kind="stable")[: problem.kappa]
    return tuple(sorted(int(i) + 1 for i in top))


def solve_bnb(problem, warm_start=None, node_budget=DEFAULT_NODE_BUDGET):
    """Certified global minimiser by best-first branch and bound.

    When ``node_budget`` expansions are used up the incumbent is returned
    with ``bound_gap`` set to its distance from the smallest open bound.
    """
    T, kappa, lam = problem.T, problem.kappa, problem.lam
    sums = _Sums(problem.y, problem.weights)
    cands = _Candidates(1e-10 * sums.scale)

    starts = [_greedy_incumbent(problem)]
    if warm_start is not None:
        ws = _check_kinks(warm_start, T)
        if len(ws) > kappa:
            raise InputError(f"warm start has {len(ws)} kinks, kappa is {kappa}")
        starts.append(ws)
    for ks in starts:
        arr = np.array([ks], dtype=np.int64).reshape(1, len(ks))
        cands.offer(float(_prefix_objective(sums, arr, [T], lam)[0]), ks)

    bounds = _suffix_bounds(sums, lam, kappa)
    heap = [(0.0, ())]
    nodes = 0
    gap = 0.0
    while heap:
        bound, kinks = heap[0]
        if bound > cands.threshold():
            break
        if nodes >= node_budget:
            gap = max(0.0, cands.best - bound)
            break
        heapq.heappop(heap)
        nodes += 1
        arr = np.array([kinks], dtype=np.int64).reshape(1, len(kinks))
        cands.offer(float(_prefix_objective(sums, arr, [T], lam)[0]), kinks)
        if len(kinks) == kappa:
            continue
        first = kinks[-1] + 1 if kinks else 1
        new = np.arange(first, T - 1)
        if new.size == 0:
            continue
        arr = np.repeat(arr, new.size, axis=0)
        child = _prefix_objective(sums, arr, new + 1, lam) + bounds[kappa - len(kinks) - 1, new + 1]
        thr = cands.threshold()
        for k, b in zip(new.tolist(), child.tolist()):
            if b <= thr:
                heapq.heappush(heap, (b, kinks + (k,)))
    return _package(problem, cands.select(problem), nodes, gap)
