"""Tensor denoising with higher-order Vitali total-variation trend filtering."""

from .active_sets import ActiveSet, MeshGrid, Tessellation, enlarge, mesh_grid, regular_grid, tessellate
from .diff_ops import DiffSpec, total_diff, total_diff_adjoint, vitali_tv
from .dictionary import (
    Dictionary1D,
    MarginKey,
    anova_decompose,
    axis_dictionaries,
    build_dictionary,
    margin_expand,
    margin_flatten,
    product_atom,
    project_margin,
)
from .estimators import MarginTrendFilter, TensorDenoiser
from .solver import (
    ConvergenceError,
    FitConfig,
    FitResult,
    fit_all_margins,
    fit_margin,
    kkt_check,
    lambda_max,
    universal_lambda,
)
from .tensor import inner_product, l1_norm, outer_product, read_vtf, write_vtf

__all__ = [
    "ActiveSet",
    "ConvergenceError",
    "DiffSpec",
    "Dictionary1D",
    "FitConfig",
    "FitResult",
    "MarginKey",
    "MarginTrendFilter",
    "MeshGrid",
    "TensorDenoiser",
    "Tessellation",
    "anova_decompose",
    "axis_dictionaries",
    "build_dictionary",
    "enlarge",
    "fit_all_margins",
    "fit_margin",
    "inner_product",
    "kkt_check",
    "l1_norm",
    "lambda_max",
    "margin_expand",
    "margin_flatten",
    "mesh_grid",
    "outer_product",
    "product_atom",
    "project_margin",
    "read_vtf",
    "regular_grid",
    "tessellate",
    "total_diff",
    "total_diff_adjoint",
    "universal_lambda",
    "vitali_tv",
    "write_vtf",
]

__version__ = "0.1.0"
