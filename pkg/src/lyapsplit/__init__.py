"""Low-rank splitting iteration for Lyapunov equations ``A P + P A^T = -B B^T``."""

from .matrix_io import StableSystem, read_factors, read_system, write_factors, write_report
from .solver import (
    FactoredIterate,
    ShiftedFactorization,
    SolveReport,
    cold_start,
    compress,
    residual_fnorm,
    run,
    shifted_factorize,
    step,
)
from .spectral import (
    SpectrumInfo,
    convergence_ratio,
    heuristic_sigma,
    min_convergent_sigma,
    summarize,
    usable_sigma,
)
from .warmstart import EigenBasis, cauchy_core, select_eigenpairs, warm_start

__version__ = "0.1.0"
