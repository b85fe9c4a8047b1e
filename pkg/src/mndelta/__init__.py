"""Direct estimation of sparse structural changes between two Markov networks.

The change between two pairwise networks is fit in one shot: the ratio of
the two densities is modeled with the difference parameters only, fit by a
group-penalized density-ratio objective, and the nonzero blocks read off the
changed edges.  A covariance-precision matching estimator, synthetic
Gaussian generators, ROC benchmarking, theory diagnostics, and an image
change-detection pipeline round out the toolkit.
"""

from .exceptions import (
    ConfigError,
    DataError,
    DivergenceError,
    GenerationError,
    InfeasibleError,
    MnDeltaError,
    NumericError,
    ShapeError,
    SizeCapError,
)
from .features import (
    Dataset,
    DeltaParams,
    EdgeSet,
    FeatureMap,
    FeatureTensor,
    build_edge_set,
    delta_to_matrix,
    empirical_normalizer,
    eval_features,
    full_edge_count,
    load_csv,
    matrix_to_delta,
    ratio_hat,
    save_csv,
)
from .kliep import gradient, hessian, loss
from .solvers import (
    SolveReport,
    SolverOptions,
    group_soft_threshold,
    lambda_grid,
    lambda_max,
    reg_path,
    solve_group_lasso,
)
from .cpmatch import (
    AdmmOptions,
    AdmmReport,
    CovariancePair,
    quasi_residual,
    sample_covariance,
    solve_cp,
    threshold,
)
from .synthgen import (
    GaussianMN,
    build_precision,
    changed_edges,
    gen_lattice_graph,
    gen_random_graph,
    ground_truth_to_json,
    lattice_change_pair,
    perturb_remove_edges,
    random_change_pair,
    sample_gaussian,
    true_delta,
)
from .evaluation import (
    BenchmarkConfig,
    BenchmarkResult,
    DiagnosticRecord,
    RocCurve,
    auc,
    diagnose_assumptions,
    illustrative_recovery,
    roc_from_path,
    run_benchmark,
    tpr_tnr,
)
from .imagediff import (
    ImageDiffConfig,
    ImageDiffReport,
    WindowGrid,
    detect_changes,
    load_image,
    neighbor_edges,
    save_image,
    tile_windows,
)

__version__ = "0.1.0"

__all__ = [
    "AdmmOptions",
    "AdmmReport",
    "BenchmarkConfig",
    "BenchmarkResult",
    "ConfigError",
    "CovariancePair",
    "DataError",
    "Dataset",
    "DeltaParams",
    "DiagnosticRecord",
    "DivergenceError",
    "EdgeSet",
    "FeatureMap",
    "FeatureTensor",
    "GaussianMN",
    "GenerationError",
    "ImageDiffConfig",
    "ImageDiffReport",
    "InfeasibleError",
    "MnDeltaError",
    "NumericError",
    "RocCurve",
    "ShapeError",
    "SizeCapError",
    "SolveReport",
    "SolverOptions",
    "WindowGrid",
    "auc",
    "build_edge_set",
    "build_precision",
    "changed_edges",
    "delta_to_matrix",
    "detect_changes",
    "diagnose_assumptions",
    "empirical_normalizer",
    "eval_features",
    "full_edge_count",
    "gen_lattice_graph",
    "gen_random_graph",
    "gradient",
    "ground_truth_to_json",
    "group_soft_threshold",
    "hessian",
    "illustrative_recovery",
    "lambda_grid",
    "lambda_max",
    "lattice_change_pair",
    "load_csv",
    "load_image",
    "loss",
    "matrix_to_delta",
    "neighbor_edges",
    "perturb_remove_edges",
    "quasi_residual",
    "random_change_pair",
    "ratio_hat",
    "reg_path",
    "roc_from_path",
    "run_benchmark",
    "sample_covariance",
    "sample_gaussian",
    "save_csv",
    "save_image",
    "solve_cp",
    "solve_group_lasso",
    "threshold",
    "tile_windows",
    "tpr_tnr",
    "true_delta",
]
