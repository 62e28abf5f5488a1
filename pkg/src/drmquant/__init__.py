"""Quantile estimation for several samples linked by a density ratio model."""
from .errors import *  # noqa: F401,F403
from .errors import __all__ as _error_names
from .model import (BasisSpec, DrmFit, MultiSample, SolverOptions, eval_basis,
                    fit_mele, hessian, log_profile_el, score)
from .estimation import FittedCdf, QuantileEstimate, el_cdf, el_quantile, em_cdf, em_quantile
from .asymptotics import (CovarianceKernel, QuadratureGrid, build_kernel,
                          build_kernel_oracle, omega, sigma_el, sigma_em)
from .inference import (ElInference, IntervalEstimate, KdeSpec, ci_quantile,
                        ci_quantile_diff, kde_density, quantile_variance,
                        silverman_bandwidth)

__version__ = "0.1.0"

__all__ = [
    "BasisSpec", "DrmFit", "MultiSample", "SolverOptions", "eval_basis", "fit_mele",
    "hessian", "log_profile_el", "score",
    "FittedCdf", "QuantileEstimate", "el_cdf", "el_quantile", "em_cdf", "em_quantile",
    "CovarianceKernel", "QuadratureGrid", "build_kernel", "build_kernel_oracle",
    "omega", "sigma_el", "sigma_em",
    "ElInference", "IntervalEstimate", "KdeSpec", "ci_quantile", "ci_quantile_diff",
    "kde_density", "quantile_variance", "silverman_bandwidth",
    *_error_names,
]
