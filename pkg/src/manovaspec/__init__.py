"""Spectral predictions for MANOVA variance-component estimators.

High-dimensional linear mixed models estimate each random-effect
covariance by a quadratic form Sigma_hat = Y^T B Y.  This package
computes the deterministic-equivalent bulk density of such estimators,
predicts their outlier eigenvalues as roots of a small determinant
equation, predicts the spike-space alignment of the corresponding
eigenvectors, and verifies everything by seeded Monte Carlo simulation.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    InconsistencyError,
    ManovaSpecError,
    MultiplicityError,
    NonConvergenceError,
    SingularSystemError,
)
from .model import (
    InteractionMatrix,
    ModelDesign,
    NoiseModel,
    SignalModel,
    ValidationReport,
    build_one_way_layout,
    compute_interaction_matrix,
    isotropic_approximation,
    sample_paper_noise,
    validate_manova,
)
from .fixed_point import (
    ContinuationTrack,
    FixedPointState,
    SpectralProblem,
    build_problem,
    continue_real_axis,
    derivative_b,
    solve_at,
    solve_real_point,
)
from .spectrum import (
    SpectralDensity,
    SupportSet,
    default_density_grid,
    density_on_grid,
    detect_support,
    estimate_support_range,
)
from .outliers import (
    OutlierEquationValue,
    OutlierRoot,
    PredictedOutlierSet,
    build_scan_grid,
    evaluate_T,
    find_roots,
    predict_outliers,
    scan_det,
)
from .eigenvectors import (
    AlignmentPrediction,
    compute_alpha,
    kernel_vector,
    predict_alignment,
)
from .asymptotics import (
    ExpansionCheck,
    ExpansionConstants,
    alias_expansion,
    bias_expansion,
    check_alias,
    check_bias,
    check_eigenvector_bias,
    compute_c,
    eigenvector_bias_expansion,
    w_direction,
)
from .montecarlo import (
    ComparisonReport,
    EmpiricalSummary,
    SimulationConfig,
    extract_empirical_outliers,
    manova_estimate,
    ordered_dist,
    ordered_dist_padded,
    run_experiment,
    simulate_alpha,
    simulate_outcome,
)
from .configio import RunConfig, load_config, read_matrix, write_matrix
