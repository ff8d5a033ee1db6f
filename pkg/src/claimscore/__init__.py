"""Claim-count modeling for panel insurance data.

Count kernels, static and dynamically weighted credibility models, and the
bonus-malus claim-score model with structural lattice search, plus the
simulation, estimation, scoring and CLI machinery around them.
"""

from .bms import (
    BmsConfig,
    TransitionMatrix,
    bms_covariance,
    bms_loglik,
    bms_premium,
    entry_level,
    initial_level,
    level_path,
    matrix_power,
    next_level,
    relativity,
    transition_matrix,
)
from .distributions import (
    count_logpmf,
    nb1_logpmf,
    nb2_logpmf,
    nbb_logpmf,
    poisson_logpmf,
)
from .dynamic import (
    HfState,
    hf_claim_impact_ratio,
    hf_mvnb_loglik,
    hf_nbb_loglik,
    hf_premium,
    hf_prior_update,
    hf_recur,
)
from .estimate import (
    FitOptions,
    FitResult,
    GridSearchResult,
    GridSpec,
    fit,
    grid_search,
    link,
)
from .evaluate import (
    ComparisonReport,
    PremiumSchedule,
    ScoreReport,
    compare,
    covariance_curve,
    predict_premiums,
    score,
)
from .panel import (
    CredibilityState,
    NbbShape,
    PolicyHistory,
    mvnb_covariance,
    mvnb_loglik,
    mvnb_premium,
    mvnb_prior_update,
    nbbeta_covariance,
    nbbeta_loglik,
    nbbeta_premium,
    nbbeta_prior_update,
)
from .portfolio import (
    PanelDataset,
    SimulationSpec,
    load_csv,
    simulate,
    split,
    write_csv,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
