"""Bayesian functional time-series model for size-resolved particle counts.

The outcome ``y = log(count + 10)`` over size bins and time is modeled as a
B-spline curve in particle size whose coefficients carry a population mean,
a window-specific engine-on trend, run-level random effects and AR(1)
residuals with a size-varying innovation variance.
"""
from .data import (DataError, Dataset, Run, inverse_outcome, load_dataset,
                   transform_outcome, validate, write_csv)
from .design import (FIXED_VARIANTS, RANDOM_JUMP_VARIANTS, ModelSpec,
                     RandomTrendSpec, TrendSpec, mean_at, parse_variant, time_basis)
from .kernels import BACKEND
from .mcmc import (ChainDraws, ChainState, SamplerError, SamplerSettings, run_chain,
                   run_chains, whiten)
from .posterior import (dic, marginal_variance, mode_trajectory, predict_mu,
                        predictive_curve, residuals, trend_components)
from .priors import PriorConfig
from .splines import BSplineBasis, SplineDomainError, basis_matrix, eval_basis, make_basis

__version__ = "0.1.0"
