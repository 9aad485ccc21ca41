"""Least squares inference with network-dependent errors.

The coefficient covariance is estimated by a sandwich whose meat keeps
residual cross-products only between nodes within graph distance ``m``;
``m`` is picked per hypothesis by residual permutation.
"""

__version__ = "0.1.0"

from .exceptions import FitError, InputError, NetOLSError, NumericError, SchemaError
from .graph import (
    Graph,
    GrowthReport,
    NeighborhoodIndex,
    build_graph,
    build_neighborhoods,
    degree_normalize,
    growth_report,
    read_edge_list,
)
from .ols import ContrastSpec, Design, RegressionFit, contrast_direction, fit_ols
from .sandwich import SandwichFamily, VarianceCurve, delta_series, sandwich_family, variance_curve
from .selection import PermutationEnsemble, SelectionResult, permutation_ensemble, select_m
from .inference import Report, TestResult, analyze, run_pipeline, wald_test
