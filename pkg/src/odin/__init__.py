"""Outlier detection for populations of binary networks on a shared node set.

Workflow: build or load an :class:`Atlas` and a :class:`NetworkDataset`,
derive the edge design with :func:`build_design`, estimate the hierarchical
logistic model with :func:`fit`, compute per-subject influence scores with
:func:`influence_scores`, and threshold them with :func:`flag_outliers`.
The :mod:`odin.synthetic` and :mod:`odin.evaluation` modules provide seeded
generators and study drivers; ``odin`` is also a command-line tool.
"""

from .errors import ConfigError, DataError, FormatError, NumericalError, OdinError
from .evaluation import (
    ConfusionSummary,
    DetectionResult,
    ScalingReport,
    StabilityRow,
    TableRow,
    bench_scaling,
    confusion,
    detect_outliers,
    subsample_stability,
    table1_experiment,
    table2_experiment,
)
from .estimator import (
    FitConfig,
    ModelFit,
    fit,
    gradient,
    linear_predictor,
    load_fit,
    mm_precompute,
    objective,
    probabilities,
    save_fit,
)
from .influence import (
    CurvatureOperator,
    InfluenceScores,
    curvature_operator,
    im1_scores,
    im2_scores,
    influence_scores,
    newton_loo_delta,
)
from .networks import (
    Atlas,
    DesignMatrix,
    EdgeIndex,
    NetworkDataset,
    build_design,
    devectorize,
    read_atlas,
    read_dataset,
    vectorize,
    write_atlas,
    write_dataset,
)
from .synthetic import (
    LabeledDataset,
    SimConfig,
    TnpcaModel,
    balanced_atlas,
    simulate_model,
    simulate_tnpca,
    tnpca_fit,
)
from .thresholds import (
    OutlierFlags,
    ThresholdResult,
    flag_outliers,
    kneedle,
    quantile_curve,
)

__version__ = "0.1.0"

__all__ = [
    "Atlas",
    "ConfigError",
    "ConfusionSummary",
    "CurvatureOperator",
    "DataError",
    "DesignMatrix",
    "DetectionResult",
    "EdgeIndex",
    "FitConfig",
    "FormatError",
    "InfluenceScores",
    "LabeledDataset",
    "ModelFit",
    "NetworkDataset",
    "NumericalError",
    "OdinError",
    "OutlierFlags",
    "ScalingReport",
    "SimConfig",
    "StabilityRow",
    "TableRow",
    "ThresholdResult",
    "TnpcaModel",
    "balanced_atlas",
    "bench_scaling",
    "build_design",
    "confusion",
    "curvature_operator",
    "detect_outliers",
    "devectorize",
    "fit",
    "flag_outliers",
    "gradient",
    "im1_scores",
    "im2_scores",
    "influence_scores",
    "kneedle",
    "linear_predictor",
    "load_fit",
    "mm_precompute",
    "newton_loo_delta",
    "objective",
    "probabilities",
    "quantile_curve",
    "read_atlas",
    "read_dataset",
    "save_fit",
    "simulate_model",
    "simulate_tnpca",
    "subsample_stability",
    "table1_experiment",
    "table2_experiment",
    "tnpca_fit",
    "vectorize",
    "write_atlas",
    "write_dataset",
]
