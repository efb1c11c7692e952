"""Sparse HP and l1 trend filtering of the log contact rate."""

__version__ = "0.1.0"

from .analysis import (
    DEFAULT_GAMMA,
    ParametricFit,
    SurveillanceReport,
    contact_growth_rates,
    growth_rates,
    parametric_fit,
    r0_path,
    underreporting_diagnostic,
)
from .estimators import (
    HPTrendFilter,
    L1TrendFilter,
    SparseHPFilter,
    SparseHPFilterCV,
    SqrtL1TrendFilter,
)
from .exceptions import (
    BracketError,
    ConvergenceError,
    DegenerateProblemError,
    EnumerationCapError,
    InputError,
    InvariantViolation,
    KinkFilterError,
    RankDeficiencyError,
)
from .hp_filter import HpSolution, hp_solve
from .l1_filter import KinkSet, L1Solution, extract_kinks, l1_solve, l1_via_lasso_oracle, sqrt_l1_solve
from .risk_lab import SyntheticSpec, empirical_risk, exp_risk_bound_check, generate
from .series import EpidemicSeries, RawCaseTable, WindowPolicy, build_series, load_raw
from .sparse_hp import (
    KinkBasisModel,
    SparseHpProblem,
    SparseHpSolution,
    restricted_qp,
    solve_bnb,
    solve_exhaustive,
)
from .tuning import TuningGrid, TuningResult, loocv_sparse_hp, match_fidelity

__all__ = [
    "__version__",
    "DEFAULT_GAMMA",
    "ParametricFit",
    "SurveillanceReport",
    "contact_growth_rates",
    "growth_rates",
    "parametric_fit",
    "r0_path",
    "underreporting_diagnostic",
    "HPTrendFilter",
    "L1TrendFilter",
    "SparseHPFilter",
    "SparseHPFilterCV",
    "SqrtL1TrendFilter",
    "BracketError",
    "ConvergenceError",
    "DegenerateProblemError",
    "EnumerationCapError",
    "InputError",
    "InvariantViolation",
    "KinkFilterError",
    "RankDeficiencyError",
    "HpSolution",
    "hp_solve",
    "KinkSet",
    "L1Solution",
    "extract_kinks",
    "l1_solve",
    "l1_via_lasso_oracle",
    "sqrt_l1_solve",
    "SyntheticSpec",
    "empirical_risk",
    "exp_risk_bound_check",
    "generate",
    "EpidemicSeries",
    "RawCaseTable",
    "WindowPolicy",
    "build_series",
    "load_raw",
    "KinkBasisModel",
    "SparseHpProblem",
    "SparseHpSolution",
    "restricted_qp",
    "solve_bnb",
    "solve_exhaustive",
    "TuningGrid",
    "TuningResult",
    "loocv_sparse_hp",
    "match_fidelity",
]
