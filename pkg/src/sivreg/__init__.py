"""sivreg: synthetic instrumental variables for endogeneity correction.

Instruments are synthesized from the observed data as s = x + k*delta*r,
where r is the within-sample direction orthogonal to the endogenous
regressor; delta and the endogeneity sign k are identified from moment
behavior of squared first-stage residuals (with robust variants under
heteroscedasticity). Includes a Monte Carlo validation harness with known
ground truth and a CLI.
"""

from .data import Dataset, ingest_csv
from .estimate import (
    BootstrapResult,
    ModelSpec,
    SivEstimate,
    SyntheticInstrument,
    bootstrap,
    estimate,
    estimate_to_json,
    multi_endogenous_estimate,
    synthesize_instruments,
    two_sls,
    wu_hausman,
)
from .exceptions import (
    AllReplicationsFailedError,
    AmbiguousSignError,
    DegenerateDirectionError,
    DegenerateVarianceError,
    EmptyGridError,
    NoEndogeneityError,
    NonPositiveVarianceError,
    ParseError,
    RankDeficientError,
    SivError,
    TooFewRowsError,
    UnderIdentifiedError,
)
from .linalg import (
    RegressionFit,
    VarianceModel,
    estimate_variance_model,
    fgls,
    first_stage_F,
    ols,
    partial_out,
)
from .robust import (
    AdInput,
    RobustPoint,
    ad_distance,
    ad_two_sample,
    chi2_cdf,
    chi_square_stat,
    parametric_distance,
    robust_delta0,
    trace_discrepancy,
)
from .search import (
    DeltaLocus,
    DeltaZero,
    GridConfig,
    SignDecision,
    SivContext,
    build_context,
    candidate,
    determine_sign,
    dt_moment,
    dt_moment_stats,
    find_delta0,
    scan_locus,
)
from .simulate import (
    BETA_TRUE,
    DgpConfig,
    McSummary,
    draw_samples,
    generate_population,
    run_monte_carlo,
    sinh_arcsinh,
)
from .sklearn_api import SivRegressor

__version__ = "0.1.0"

__all__ = [
    "AdInput", "AllReplicationsFailedError", "AmbiguousSignError",
    "BETA_TRUE", "BootstrapResult", "Dataset", "DegenerateDirectionError",
    "DegenerateVarianceError", "DeltaLocus", "DeltaZero", "DgpConfig",
    "EmptyGridError", "GridConfig", "McSummary", "ModelSpec",
    "NoEndogeneityError", "NonPositiveVarianceError", "ParseError",
    "RankDeficientError", "RegressionFit", "RobustPoint", "SignDecision",
    "SivContext", "SivError", "SivEstimate", "SivRegressor",
    "SyntheticInstrument", "TooFewRowsError", "UnderIdentifiedError",
    "VarianceModel", "ad_distance", "ad_two_sample", "bootstrap",
    "build_context", "candidate", "chi2_cdf", "chi_square_stat",
    "determine_sign", "draw_samples", "dt_moment", "dt_moment_stats",
    "estimate", "estimate_to_json", "estimate_variance_model", "fgls",
    "find_delta0", "first_stage_F", "generate_population", "ingest_csv",
    "multi_endogenous_estimate", "ols", "parametric_distance", "partial_out",
    "robust_delta0", "run_monte_carlo", "scan_locus",
    "sinh_arcsinh", "synthesize_instruments", "trace_discrepancy", "two_sls",
    "wu_hausman",
]
