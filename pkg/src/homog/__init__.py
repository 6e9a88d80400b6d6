"""Homogeneity pursuit for panel single-index models.

Each individual ``i`` follows ``y_it = g_i(X_it' beta_i) + e_it``.  Stage 1
fits every individual with a B-spline link; binary segmentation of the
sorted coefficient estimates groups index coefficients and spline
coefficients that look equal; Stage 3 refits the panel with those groups
tied.  Group counts are chosen by cross-validation.
"""

from .bspline import SplineBasis, default_K
from .changepoint import (SegmentationResult, binary_segment, binary_segment_count,
                          delta_stat, post_process)
from .estimator import (ConstrainedSpec, EmpiricalCDF, Stage1Result, cdf_transform_fit,
                        init_values, predict, predict_panel, stage1_fit, stage3_fit)
from .exceptions import DataError, HomogError, NumericalError
from .homogeneity import FitConfig, FitterVariant, VariantFit, fit_variant
from .lm import LeastSquaresProblem, LMResult, LMSettings, LMStatus, lm_minimize
from .metrics import MetricReport, mise_g, mse_beta, nmi, score_variant
from .panel import (IndexVector, PanelDataset, PanelFit, PanelSchema, Partition,
                    load_panel_csv, partition_from_labels)
from .simgen import SimConfig, SimTruth, generate, run_replicates
from .tuning import CVGrid, CVSurface, cv_select_iid, cv_select_rolling, one_se_rule

__version__ = "0.1.0"

__all__ = [
    "CVGrid", "CVSurface", "ConstrainedSpec", "DataError", "EmpiricalCDF", "FitConfig",
    "FitterVariant", "HomogError", "IndexVector", "LMResult", "LMSettings", "LMStatus",
    "LeastSquaresProblem", "MetricReport", "NumericalError", "PanelDataset", "PanelFit",
    "PanelSchema", "Partition", "SegmentationResult", "SimConfig", "SimTruth", "SplineBasis",
    "Stage1Result", "VariantFit", "binary_segment", "binary_segment_count", "cdf_transform_fit",
    "cv_select_iid", "cv_select_rolling", "default_K", "delta_stat", "fit_variant", "generate",
    "init_values", "lm_minimize", "load_panel_csv", "mise_g", "mse_beta", "nmi", "one_se_rule",
    "partition_from_labels", "post_process", "predict", "predict_panel", "run_replicates",
    "score_variant", "stage1_fit", "stage3_fit",
]
