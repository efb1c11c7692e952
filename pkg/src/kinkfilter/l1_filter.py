"""l1 and square-root l1 trend filtering with certified optimality.

``l1_solve`` runs ADMM on the split ``z = D f`` and periodically polishes the
iterate: with the support and signs of ``z`` fixed, the optimum is a linear
solve in the hinge basis, which is accepted only if it passes the KKT check.
``l1_via_lasso_oracle`` is an independent route through the LASSO
reformulation solved by coordinate descent.
"""

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded, solve_triangular

from ._validation import check_count, check_nonnegative, check_positive, check_series
from .exceptions import ConvergenceError, DegenerateProblemError
from .hp_filter import PentadiagonalFactor, hp_solve, second_differences
from .series import second_difference_matrix

__all__ = [
    "KinkSet",
    "L1Solution",
    "l1_solve",
    "sqrt_l1_solve",
    "l1_via_lasso_oracle",
    "extract_kinks",
    "lambda_max",
    "kkt_residual",
    "dual_variables",
]

DEFAULT_ETA = 1e-6


@dataclass(frozen=True)
class KinkSet:
    """Interior indices (0-based, in ``1..T-2``) where ``|f[t-1] - 2 f[t] + f[t+1]| > eta``."""

    indices: tuple
    eta: float = DEFAULT_ETA

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, t):
        return t in self.indices


def extract_kinks(f, eta=DEFAULT_ETA):
    f = check_series(f, name="f")
    d2 = second_differences(f)
    return KinkSet(tuple(int(i) + 1 for i in np.flatnonzero(np.abs(d2) > eta)), float(eta))


@dataclass(frozen=True)
class L1Solution:
    f: np.ndarray
    lam: float
    fidelity: float
    l1_penalty: float
    kkt_residual: float
    iterations: int
    support: tuple = ()
    implied_lambda: float | None = None
    theta: np.ndarray | None = field(default=None, repr=False)

    @property
    def objective(self):
        if self.implied_lambda is not None:
            return float(np.sqrt(self.fidelity)) + self.lam * self.l1_penalty
        return self.fidelity + self.lam * self.l1_penalty


def _ddt_factor(T):
    """Banded Cholesky of ``D D'`` (pentadiagonal, order T-2)."""
    n = T - 2
    ab = np.zeros((3, n))
    ab[0, 2:] = 1.0
    ab[1, 1:] = -4.0
    ab[2, :] = 6.0
    return cholesky_banded(ab, lower=False)


def _dt(u, T):
    """``D' u`` without forming D."""
    out = np.zeros(T)
    out[:-2] += u
    out[1:-1] -= 2.0 * u
    out[2:] += u
    return out


def dual_variables(y, f):
    """Least-squares dual ``u`` solving ``D' u = 2 (y - f)``, and the stationarity gap."""
    y = np.asarray(y, dtype=float)
    r = 2.0 * (y - f)
    T = len(y)
    u = cho_solve_banded((_ddt_factor(T), False), second_differences(r))
    return u, float(np.max(np.abs(_dt(u, T) - r)))


def kkt_residual(y, f, lam, support=None):
    """Max-norm violation of the optimality conditions of the l1 problem at ``f``.

    ``support`` lists second-difference positions (0-based, length T-2 space)
    treated as nonzero; by default those with ``|D f|`` above 1e-9 of the data
    scale.
    """
    y = np.asarray(y, dtype=float)
    f = np.asarray(f, dtype=float)
    d2 = second_differences(f)
    if support is None:
        support = np.flatnonzero(np.abs(d2) > 1e-9 * max(1.0, np.max(np.abs(y))))
    on = np.zeros(len(d2), dtype=bool)
    on[np.asarray(support, dtype=int)] = True
    u, stat = dual_variables(y, f)
    off_gap = np.max(np.maximum(np.abs(u[~on]) - lam, 0.0), initial=0.0)
    on_gap = np.max(np.abs(u[on] - lam * np.sign(d2[on])), initial=0.0)
    return float(max(stat, off_gap, on_gap))


def lambda_max(y):
    """Smallest weight at which the l1 fit is the least-squares line."""
    y = check_series(y)
    u = cho_solve_banded((_ddt_factor(len(y)), False), second_differences(y))
    return float(2.0 * np.max(np.abs(u)))


def _hinge_design(T, kinks):
    t = np.arange(T, dtype=float)
    cols = [np.ones(T), t] + [np.maximum(t - k, 0.0) for k in kinks]
    return np.column_stack(cols)


def _polish(y, lam, positions, signs, tol):
    """Fit with fixed support/signs; return ``f`` if it is certified optimal."""
    T = len(y)
    X = _hinge_design(T, [p + 1 for p in positions])
    rhs = X.T @ y
    rhs[2:] -= 0.5 * lam * signs
    try:
        beta = np.linalg.solve(X.T @ X, rhs)
    except np.linalg.LinAlgError:
        return None
    if np.any(np.sign(beta[2:]) != signs):
        return None
    f = X @ beta
    if kkt_residual(y, f, lam, positions) <= tol:
        return f
    return None


def _solution(y, f, lam, iterations, support, implied=None, theta=None, kkt=None):
    d2 = second_differences(f)
    if kkt is None:
        kkt = kkt_residual(y, f, lam if implied is None else implied, support)
    return L1Solution(
        f=f,
        lam=float(lam),
        fidelity=float(np.sum((y - f) ** 2)),
        l1_penalty=float(np.sum(np.abs(d2))),
        kkt_residual=float(kkt),
        iterations=int(iterations),
        support=tuple(int(p) + 1 for p in support),
        implied_lambda=implied,
        theta=theta,
    )


def _line_fit(y):
    X = _hinge_design(len(y), [])
    return X @ np.linalg.lstsq(X, y, rcond=None)[0]


def _admm(y, lam, tol, max_iter, state=None, polish_every=10):
    T = len(y)
    if state is None:
        rho = 1.0
        z = second_differences(y)
        w = np.zeros(T - 2)
    else:
        rho, z, w = state
        z, w = z.copy(), w.copy()
    fac = PentadiagonalFactor(T, 2.0, rho)
    f = y
    for it in range(1, max_iter + 1):
        f = fac.solve(2.0 * y + rho * _dt(z - w, T))
        d2 = second_differences(f)
        z_old = z
        v = d2 + w
        z = np.sign(v) * np.maximum(np.abs(v) - lam / rho, 0.0)
        w = w + d2 - z
        if it % polish_every == 0:
            pos = np.flatnonzero(z)
            fp = _polish(y, lam, pos, np.sign(z[pos]), tol)
            if fp is not None:
                return fp, pos, it, (rho, z, w)
            r_norm = np.linalg.norm(d2 - z)
            s_norm = rho * np.linalg.norm(_dt(z - z_old, T))
            if r_norm > 10.0 * s_norm:
                rho *= 2.0
                w = w / 2.0
                fac = PentadiagonalFactor(T, 2.0, rho)
            elif s_norm > 10.0 * r_norm:
                rho /= 2.0
                w = w * 2.0
                fac = PentadiagonalFactor(T, 2.0, rho)
    raise ConvergenceError(
        f"l1 trend filter: no optimality certificate after {max_iter} iterations",
        diagnostic={"f": f, "rho": rho, "kkt_residual": kkt_residual(y, f, lam)},
    )


def _l1_core(y, lam, tol_opt, max_iter, state=None):
    scale = max(1.0, float(np.max(np.abs(y))))
    tol = tol_opt * scale
    if lam == 0:
        return _solution(y, y.copy(), 0.0, 0, np.flatnonzero(second_differences(y)), kkt=0.0), None
    if lam >= lambda_max(y):
        f = _line_fit(y)
        return _solution(y, f, lam, 0, []), None
    f, pos, it, state = _admm(y, lam, tol, max_iter, state)
    return _solution(y, f, lam, it, pos), state


def l1_solve(y, lam, tol_opt=1e-8, max_iter=50_000):
    """Minimize ``sum (y - f)^2 + lam * sum |D f|``.

    Raises :class:`ConvergenceError` when no certified point is reached.
    """
    y = check_series(y)
    lam = check_nonnegative(lam, "lam")
    check_positive(tol_opt, "tol_opt")
    check_count(max_iter, "max_iter", 1)
    return _l1_core(y, lam, tol_opt, max_iter)[0]


def _sqrt_closed_form(y, lam, positions, signs, tol_opt):
    """Exact fixed point for a given support and sign pattern, or None.

    With the active set frozen the l1 fit is ``f0 - w*v``; ``y - f0`` is
    orthogonal to ``v`` so the stationarity condition ``w = 2 lam |y - f|``
    reduces to a scalar quadratic in the weight ``w``.
    """
    T = len(y)
    X = _hinge_design(T, [p + 1 for p in positions])
    XtX = X.T @ X
    try:
        f0 = X @ np.linalg.solve(XtX, X.T @ y)
        e = np.zeros(X.shape[1])
        e[2:] = 0.5 * signs
        v = X @ np.linalg.solve(XtX, e)
    except np.linalg.LinAlgError:
        return None
    r0 = float(np.linalg.norm(y - f0))
    q = 4.0 * lam * lam * float(v @ v)
    if r0 == 0.0 or q >= 1.0:
        return None
    w = 2.0 * lam * r0 / np.sqrt(1.0 - q)
    f = f0 - w * v
    tol = tol_opt * max(1.0, float(np.max(np.abs(y))))
    if _polish(y, w, positions, signs, tol) is None:
        return None
    return f, w


def sqrt_l1_solve(y, lam, tol_opt=1e-8, max_iter=50_000, max_fixed_point=500):
    """Minimize ``sqrt(sum (y - f)^2) + lam * sum |D f|``.

    Alternates between the residual norm and an l1 fit with weight
    ``2 * lam * |y - f|``; once the active set settles the fixed point is
    solved in closed form and certified.
    """
    y = check_series(y)
    lam = check_nonnegative(lam, "lam")
    if lam == 0:
        return _solution(y, y.copy(), 0.0, 0, [], implied=0.0, kkt=0.0)
    scale = max(1.0, float(np.max(np.abs(y))))
    floor = 1e-13 * scale * np.sqrt(len(y))
    f = hp_solve(y, 1.0).f
    state = None
    weight = None
    for it in range(1, max_fixed_point + 1):
        sigma = float(np.linalg.norm(y - f))
        if sigma <= floor:
            raise DegenerateProblemError(
                "square-root l1 fit: residual collapsed to zero (objective not differentiable there)"
            )
        new_weight = 2.0 * lam * sigma
        sol, state = _l1_core(y, new_weight, tol_opt, max_iter, state)
        pos = np.array(sol.support, dtype=int) - 1
        d2 = second_differences(sol.f)
        exact = _sqrt_closed_form(y, lam, pos, np.sign(d2[pos]), tol_opt) if len(pos) else None
        if exact is not None:
            f, w = exact
            return _solution(y, f, lam, it, pos, implied=float(w))
        converged = weight is not None and abs(new_weight - weight) <= 1e-10 * weight
        weight = new_weight
        f = sol.f
        if converged or not len(pos):
            w = 2.0 * lam * float(np.linalg.norm(y - f))
            if w <= floor:
                raise DegenerateProblemError("square-root l1 fit: residual collapsed to zero")
            return _solution(y, f, lam, it, pos, implied=w)
    raise ConvergenceError(
        f"square-root l1 fixed point did not settle in {max_fixed_point} steps",
        diagnostic={"f": f, "weight": weight},
    )


@numba.njit(cache=True)
def _lasso_cd(gram, xty, lam, tol, max_sweeps):
    p = xty.shape[0]
    theta = np.zeros(p)
    grad = xty.copy()  # X' (y - X theta)
    for sweep in range(1, max_sweeps + 1):
        biggest = 0.0
        for j in range(p):
            gjj = gram[j, j]
            old = theta[j]
            zj = grad[j] + gjj * old
            mag = abs(zj) - 0.5 * lam
            new = 0.0
            if mag > 0.0:
                new = np.sign(zj) * mag / gjj
            if new != old:
                d = new - old
                for i in range(p):
                    grad[i] -= gram[i, j] * d
                theta[j] = new
                step = abs(d) * np.sqrt(gjj)
                if step > biggest:
                    biggest = step
        if biggest < tol:
            return theta, sweep
    return theta, -1


def l1_via_lasso_oracle(y, lam, tol=1e-10, max_sweeps=2_000_000):
    """Solve the l1 trend filter through its LASSO reformulation.

    ``D = (D3, D2)`` with ``D3`` the leading square block; ``G2 = [D3^-1; 0]``
    and ``g1 = [-D3^-1 D2; I2]`` span the trend space, ``g1`` being the
    unpenalised linear part that is projected out before coordinate descent.
    """
    y = check_series(y)
    lam = check_nonnegative(lam, "lam")
    T = len(y)
    D = second_difference_matrix(T).toarray()
    D3, D2 = D[:, : T - 2], D[:, T - 2 :]
    D3inv = solve_triangular(D3, np.eye(T - 2), lower=False)
    G2 = np.vstack([D3inv, np.zeros((2, T - 2))])
    g1 = np.vstack([-D3inv @ D2, np.eye(2)])
    P = g1 @ np.linalg.solve(g1.T @ g1, g1.T)
    y_t = y - P @ y
    X_t = G2 - P @ G2
    scale = max(1.0, float(np.max(np.abs(y))))
    theta, sweeps = _lasso_cd(X_t.T @ X_t, X_t.T @ y_t, float(lam), tol * scale, max_sweeps)
    if sweeps < 0:
        raise ConvergenceError("coordinate descent hit the sweep limit", diagnostic={"theta": theta})
    f = y - y_t + X_t @ theta
    support = np.flatnonzero(theta)
    kkt = kkt_residual(y, f, lam, support) if lam > 0 else 0.0
    return _solution(y, f, lam, sweeps, support, theta=theta, kkt=kkt)
