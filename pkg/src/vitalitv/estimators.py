"""Scikit-learn style estimator facade.

Both estimators take a single noisy tensor as ``X`` in fit/transform
(its axes are the grid, not samples-by-features), inherit
get_params/set_params from BaseEstimator, and validate inputs through
the shared tensor checks so they compose with pipelines that pass
ndarray-likes through.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .diff_ops import OrderError
from .solver import FitConfig, fit_all_margins, fit_margin
from .tensor import check_tensor


def validate_tensor_input(X, k, name="X"):
    """Finite float64 array with every axis long enough for order k."""
    arr = check_tensor(X, name=name)
    if k < 1:
        raise OrderError(f"order k={k} must be >= 1")
    short = [n for n in arr.shape if n < k + 1]
    if short:
        raise OrderError(f"order k={k} needs every axis extent >= {k + 1}, got shape {arr.shape}")
    return arr


class MarginTrendFilter(TransformerMixin, BaseEstimator):
    """Denoise the free margin of a tensor by l1-penalized trend filtering.

    Parameters mirror FitConfig; lam=None uses the universal noise level
    for the given sigma.  After fit, the solution is available as
    ``fitted_margin_`` with its synthesis coefficients ``coefficients_``.
    """

    def __init__(self, k=1, lam=None, sigma=1.0, lambda_scale=1.0,
                 solver_kind="coordinate-descent", tol=None, max_iters=200_000):
        self.k = k
        self.lam = lam
        self.sigma = sigma
        self.lambda_scale = lambda_scale
        self.solver_kind = solver_kind
        self.tol = tol
        self.max_iters = max_iters

    def _config(self):
        return FitConfig(
            lam=self.lam, sigma=self.sigma, lambda_scale=self.lambda_scale,
            solver_kind=self.solver_kind, tol=self.tol, max_iters=self.max_iters,
        )

    def fit(self, X, y=None):
        X = validate_tensor_input(X, self.k)
        res = fit_margin(X, self.k, self._config())
        self.coefficients_ = res.coefficients
        self.fitted_margin_ = res.fitted
        self.objective_ = res.objective
        self.kkt_residual_ = res.kkt_residual
        self.n_iter_ = res.iterations
        self.lam_ = res.lam
        self.n_features_in_ = X.size
        return self

    def transform(self, X):
        """Denoised free margin of ``X`` (stateless apart from parameters)."""
        X = validate_tensor_input(X, self.k)
        return fit_margin(X, self.k, self._config()).fitted


class TensorDenoiser(TransformerMixin, BaseEstimator):
    """Full tensor denoiser: fit every margin and assemble the estimate.

    ``lam`` may be a scalar applied to all penalized margins or None for
    the per-margin default rule (driven by sigma, grid_size and
    lambda_scale).  After fit, ``denoised_`` holds the assembled tensor
    and ``margins_`` the per-margin fit results.
    """

    def __init__(self, k=1, lam=None, sigma=1.0, lambda_scale=1.0, grid_size=1,
                 margin_scale="consistent", solver_kind="coordinate-descent",
                 tol=None, max_iters=200_000):
        self.k = k
        self.lam = lam
        self.sigma = sigma
        self.lambda_scale = lambda_scale
        self.grid_size = grid_size
        self.margin_scale = margin_scale
        self.solver_kind = solver_kind
        self.tol = tol
        self.max_iters = max_iters

    def _config(self):
        return FitConfig(
            lam=self.lam, sigma=self.sigma, lambda_scale=self.lambda_scale,
            grid_size=self.grid_size, margin_scale=self.margin_scale,
            solver_kind=self.solver_kind, tol=self.tol, max_iters=self.max_iters,
        )

    def fit(self, X, y=None):
        X = validate_tensor_input(X, self.k)
        margins, assembled = fit_all_margins(X, self.k, self._config())
        self.margins_ = margins
        self.denoised_ = assembled
        self.n_features_in_ = X.size
        return self

    def transform(self, X):
        """Denoise ``X`` with the configured parameters."""
        X = validate_tensor_input(X, self.k)
        _, assembled = fit_all_margins(X, self.k, self._config())
        return assembled

    def score(self, X, y=None):
        """Negative mean squared distance between X and its denoised version."""
        X = validate_tensor_input(X, self.k)
        den = self.transform(X)
        return -float(np.mean((X - den) ** 2))
