"""Joint adaptive differential estimation.

Trend-filtered per-group genomic-phenotype profiles with an l1 fusion
penalty across groups, solved by a custom splitting algorithm; plus
cross-validated tuning, differential-region extraction, a simulation
bench, and an end-to-end pipeline over count tables.
"""

from .admm import (
    AdmmState,
    GroupedDataset,
    JadeFit,
    PenaltyParams,
    gamma_grid,
    objective,
    solve_gamma_path,
    solve_jade,
)
from .diffops import (
    BandedOperator,
    SiteGrid,
    build_first_difference,
    build_scaled_kth_difference,
    build_trend_operator,
)
from .prox import fused_lasso_1d, fusion_prox_multi, fusion_prox_pair, trend_filter

__version__ = "0.1.0"

__all__ = [
    "AdmmState",
    "BandedOperator",
    "GroupedDataset",
    "JadeFit",
    "PenaltyParams",
    "SiteGrid",
    "build_first_difference",
    "build_scaled_kth_difference",
    "build_trend_operator",
    "fused_lasso_1d",
    "fusion_prox_multi",
    "fusion_prox_pair",
    "gamma_grid",
    "objective",
    "solve_gamma_path",
    "solve_jade",
    "trend_filter",
    "__version__",
]
