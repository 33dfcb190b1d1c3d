"""Sparse-signature CDMA multi-user detection with belief propagation, plus
the asymptotic analysis toolkit: density evolution, GEXIT curves and the
replica-symmetric (Tanaka) formula, cross-checked by brute-force MAP oracles
at desk scale."""

from .ensemble import (
    DegreeDistribution,
    SparseSignatureMatrix,
    TransmissionInstance,
    conditional_entropy_mc,
    generate_signatures,
    make_degree_distribution,
    transmit,
)
from .detectors import (
    DetectionResult,
    MessageSet,
    ber_monte_carlo,
    bp_detect,
    chip_message,
    map_exact,
    matched_filter,
)
from .density_evolution import (
    DeParams,
    Population,
    de_ber,
    de_run,
    de_step,
    gexit_bp_mc,
    initial_population,
    symmetry_test,
)
from .dense_limit import (
    LambdaTrajectory,
    RsState,
    ber_dense,
    entropy_sandwich,
    gauss_expect,
    gexit_dense,
    h_rs,
    lambda_recursion,
    solve_stationary_all,
    spinodal_alpha,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
