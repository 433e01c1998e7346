"""Single-atom microlaser photon statistics: steady-state theory, the
finite-transit correction, stochastic trajectories, timestamp
correlation analysis, and calibration against measured input-output
curves."""

__version__ = "0.1.0"

from .params import (
    MicrolaserParams,
    VelocityDistribution,
    baseline_params,
)
from .qmt import (
    FixedPointBranch,
    NoStableBranchError,
    PhotonStatistics,
    TruncationError,
    emission_probability,
    fixed_point_branches,
    gain,
    mandel_q_linearized,
    mean_emission_probability,
    output_flux,
    selected_branch,
    steady_state_distribution,
)
from .extended import (
    AlphaModel,
    alpha_bracket,
    alpha_exact,
    alpha_quadratic,
    bracket_curve,
    build_alpha_model,
    corrected_q,
    fit_eta,
    steady_state_variance,
    variance_ode_rhs,
)
from .trajectory import (
    EnsembleStatistics,
    InsufficientDataError,
    TrajectoryConfig,
    TrajectoryRecord,
    TruncationBreachError,
    alpha_slope_scan,
    ensemble_statistics,
    run_ensemble,
    run_trajectory,
    suggested_n_max,
)
from .hbt import (
    CorrelationCurve,
    G2Fit,
    TimestampStream,
    correlate,
    deadtime_grid,
    extrapolate_deadtime_free,
    fit_g2,
    impose_deadtime,
    poisson_stream,
    pooled_correlate,
    split_stream,
)
from .calibration import (
    CalibrationFit,
    IOCurve,
    NonIdentifiableError,
    fit_calibration,
    predict_io_curve,
)
from .scans import (
    ScanSpec,
    q_surface,
    q_vs_n_trace,
    valley_scan,
    validity_check,
)

__all__ = [
    "MicrolaserParams", "VelocityDistribution", "baseline_params",
    "FixedPointBranch", "NoStableBranchError", "PhotonStatistics",
    "TruncationError", "emission_probability", "fixed_point_branches",
    "gain", "mandel_q_linearized", "mean_emission_probability",
    "output_flux", "selected_branch", "steady_state_distribution",
    "AlphaModel", "alpha_bracket", "alpha_exact", "alpha_quadratic",
    "bracket_curve", "build_alpha_model", "corrected_q", "fit_eta",
    "steady_state_variance", "variance_ode_rhs",
    "EnsembleStatistics", "InsufficientDataError", "TrajectoryConfig",
    "TrajectoryRecord", "TruncationBreachError", "alpha_slope_scan",
    "ensemble_statistics", "run_ensemble", "run_trajectory",
    "suggested_n_max",
    "CorrelationCurve", "G2Fit", "TimestampStream", "correlate",
    "deadtime_grid", "extrapolate_deadtime_free", "fit_g2",
    "impose_deadtime", "poisson_stream", "pooled_correlate",
    "split_stream",
    "CalibrationFit", "IOCurve", "NonIdentifiableError",
    "fit_calibration", "predict_io_curve",
    "ScanSpec", "q_surface", "q_vs_n_trace", "valley_scan",
    "validity_check",
]
