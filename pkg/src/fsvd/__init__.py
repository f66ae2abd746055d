"""Functional singular value decomposition for noisy, irregular curves."""

from .core import (
    FunctionalDataset,
    ScalingInfo,
    SubjectSeries,
    ValidationReport,
    emit_long_csv,
    ingest_long_csv,
    make_dataset,
    validate_dataset,
)
from .decomposition import (
    FitConfig,
    FsvdComponent,
    FsvdModel,
    fit_rank_one,
    fsvd,
    initialize_vector,
    objective,
    residualize,
)
from .selection import CvResult, cv_select_nu, select_rank_aic, select_rank_ratio
from .spline import (
    SplineBasis,
    SplineFunction,
    build_basis,
    default_knots,
    evaluate,
    l2_inner,
    l2_norm,
    roughness,
    solve_penalized_wls,
)
from .tasks import cluster, complete, factor_model, regress

__version__ = "0.1.0"

__all__ = [
    "FunctionalDataset", "ScalingInfo", "SubjectSeries", "ValidationReport",
    "emit_long_csv", "ingest_long_csv", "make_dataset", "validate_dataset",
    "FitConfig", "FsvdComponent", "FsvdModel", "fit_rank_one", "fsvd",
    "initialize_vector", "objective", "residualize",
    "CvResult", "cv_select_nu", "select_rank_aic", "select_rank_ratio",
    "SplineBasis", "SplineFunction", "build_basis", "default_knots",
    "evaluate", "l2_inner", "l2_norm", "roughness", "solve_penalized_wls",
    "cluster", "complete", "factor_model", "regress",
]
