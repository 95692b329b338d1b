"""Anchor-regularised multivariate regression.

Anchor regularisation transforms the training data with a projection onto
exogenous anchor variables, then fits a standard multivariate estimator
(MLR, ridge, reduced-rank, OPLS, PLS) on the transformed data. The strength
gamma interpolates between partialling out the anchors (gamma = 0), ordinary
fitting (gamma = 1) and the instrumental-variable limit (gamma = inf).
"""

from .anchor import AnchorTransform, fit_projection, parse_gamma, transform
from .data import DataBlock, DataError, load_csv, standardize
from .estimators import KINDS, EstimatorSpec, FittedModel, fit, fit_anchor, predict
from .metrics import anchor_residual_corr, mse, r2
from .scm import ScmSpec, make_lowrank_coefficients, perturbation_sweep, sample

__all__ = [
    "AnchorTransform",
    "DataBlock",
    "DataError",
    "EstimatorSpec",
    "FittedModel",
    "KINDS",
    "ScmSpec",
    "anchor_residual_corr",
    "fit",
    "fit_anchor",
    "fit_projection",
    "load_csv",
    "make_lowrank_coefficients",
    "mse",
    "parse_gamma",
    "perturbation_sweep",
    "predict",
    "r2",
    "sample",
    "standardize",
    "transform",
]
