"""Basic and spatial Fay-Herriot small area estimation.

Variance-component estimation (ML, REML, moments, Fay-Herriot iterative),
EBLUP/SEBLUP prediction, analytic and bootstrap MSE estimation, two-step
nearest-neighbor proximity matrices and a simulation harness.
"""

__version__ = "0.1.0"

from .core import (AreaRecord, Dataset, FitResult, Method, assemble_V, gls_beta,  # noqa: E402
                   ols_beta)
from .errors import (BootstrapError, ConfigError, DataError, DomainError,  # noqa: E402
                     FayHerriotError, InsufficientAreasError, RankDeficientError,
                     SingularCovarianceError)
from .variance import (VarianceMethod, estimate, estimate_fh_iterative,  # noqa: E402
                       estimate_ml, estimate_moments, estimate_reml, loglik_ml, loglik_reml)
from .spatial import (ProximityMatrix, SpatialConfig, SpatialParams,  # noqa: E402
                      estimate_spatial, rho_validity_interval, sar_covariance, spatial_loglik)
from .predict import PredictionTable, direct_table, eblup, gamma, seblup  # noqa: E402
from .mse import (g1_basic, g1_g2_spatial, g2_basic, g3_pr, g4_datta,  # noqa: E402
                  mse_datta, mse_prasad_rao, mse_spatial_reml)
from .bootstrap import (BootstrapConfig, BootstrapResult, mse_bootstrap_combined,  # noqa: E402
                        nonparametric_bootstrap_g3, parametric_bootstrap_g3, run_bootstrap)
from .neighbors import (SweepResult, geo_distance, sensitivity_sweep,  # noqa: E402
                        two_step_neighbors)
from .simulate import SimDesign, empirical_mse, generate  # noqa: E402

__all__ = [
    "AreaRecord", "Dataset", "FitResult", "Method", "assemble_V", "gls_beta", "ols_beta",
    "BootstrapError", "ConfigError", "DataError", "DomainError", "FayHerriotError",
    "InsufficientAreasError", "RankDeficientError", "SingularCovarianceError",
    "VarianceMethod", "estimate", "estimate_fh_iterative", "estimate_ml", "estimate_moments",
    "estimate_reml", "loglik_ml", "loglik_reml",
    "ProximityMatrix", "SpatialConfig", "SpatialParams", "estimate_spatial",
    "rho_validity_interval", "sar_covariance", "spatial_loglik",
    "PredictionTable", "direct_table", "eblup", "gamma", "seblup",
    "g1_basic", "g1_g2_spatial", "g2_basic", "g3_pr", "g4_datta", "mse_datta",
    "mse_prasad_rao", "mse_spatial_reml",
    "BootstrapConfig", "BootstrapResult", "mse_bootstrap_combined",
    "nonparametric_bootstrap_g3", "parametric_bootstrap_g3", "run_bootstrap",
    "SweepResult", "geo_distance", "sensitivity_sweep", "two_step_neighbors",
    "SimDesign", "empirical_mse", "generate",
]
