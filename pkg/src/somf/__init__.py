"""Online matrix factorization with feature subsampling (SOMF)."""

__version__ = "0.1.0"

from .codes import kkt_residual, solve_code, solve_codes
from .data import (
    extract_patches,
    load_matrix,
    make_synthetic,
    normalize_samples,
    save_matrix,
)
from .driver import (
    FactorizationConfig,
    OnlineFactorizer,
    RunTrace,
    evaluate_objective,
    run_omf,
    run_somf,
    stationarity_diagnostic,
)
from .estimators import EstimatorStore, WeightSchedule, explicit_weights
from .regularizers import BallParams, PenaltyParams, ball_norm, penalty_value, project_ball
from .sampling import Mask, SampleStream, draw_mask
from .surrogate import Dictionary, SurrogateStats
