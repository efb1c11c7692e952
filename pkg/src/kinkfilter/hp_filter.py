"""Hodrick-Prescott filter by banded Cholesky on the pentadiagonal normal equations."""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

from ._validation import check_nonnegative, check_series
from .series import second_difference_matrix

__all__ = ["HpSolution", "PentadiagonalFactor", "hp_solve", "second_differences"]


def second_differences(f):
    f = np.asarray(f, dtype=float)
    return f[:-2] - 2.0 * f[1:-1] + f[2:]


def _upper_bands(T, diag_weight, dtd_weight):
    """Upper banded storage (3 x T) of ``diag_weight*I + dtd_weight*D'D``."""
    D = second_difference_matrix(T)
    M = (D.T @ D).tocsr() * dtd_weight
    ab = np.zeros((3, T))
    for u in range(3):
        band = M.diagonal(u)
        ab[2 - u, u:] = band
    ab[2] += diag_weight
    return ab


class PentadiagonalFactor:
    """Cholesky factor of ``a*I + b*D'D`` for repeated solves.

    Factorization and each solve are O(T).
    """

    def __init__(self, T, diag_weight, dtd_weight):
        self.T = T
        self.diag_weight = diag_weight
        self.dtd_weight = dtd_weight
        self._cb = cholesky_banded(_upper_bands(T, diag_weight, dtd_weight), lower=False)

    def solve(self, rhs):
        return cho_solve_banded((self._cb, False), rhs)


@dataclass(frozen=True)
class HpSolution:
    f: np.ndarray
    lam: float
    fidelity: float
    penalty: float

    @property
    def objective(self):
        return self.fidelity + self.lam * self.penalty


def hp_solve(y, lam):
    """Minimize ``sum (y - f)^2 + lam * sum (D f)^2``."""
    y = check_series(y)
    lam = check_nonnegative(lam, "lam")
    if lam == 0:
        f = y.copy()
    else:
        f = PentadiagonalFactor(len(y), 1.0, lam).solve(y)
    d2 = second_differences(f)
    return HpSolution(f=f, lam=lam, fidelity=float(np.sum((y - f) ** 2)), penalty=float(d2 @ d2))
