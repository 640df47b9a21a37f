"""Gaussian-process late fusion."""

from .fuse import GateConfig, fuse_category_L, fuse_category_S, fuse_map, kf_gate
from .gp import (
    GpModel,
    GpNumericError,
    gp_fit,
    gp_posterior_mean,
    gp_posterior_var,
    log_marginal_likelihood,
    se_kernel,
)

__all__ = [
    "GateConfig",
    "GpModel",
    "GpNumericError",
    "fuse_category_L",
    "fuse_category_S",
    "fuse_map",
    "gp_fit",
    "gp_posterior_mean",
    "gp_posterior_var",
    "kf_gate",
    "log_marginal_likelihood",
    "se_kernel",
]
