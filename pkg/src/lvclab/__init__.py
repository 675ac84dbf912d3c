"""Numerical laboratory for the scalar-channel decoupling of random linear
vector channels: replica-symmetric fixed points, decoupled-joint predictions,
and exact finite-size Monte Carlo verification."""

from .errors import (CapabilityError, ConfigError, ConvergenceError,
                     LvclabError, ModulationError, QuadratureError)
from .model import (BlockPrior, ChannelModel, CustomChannel, GaussianChannel,
                    Prior, ScalarChannel, SystemShape, bernoulli_gaussian,
                    bpsk, discrete_prior, gaussian_prior, matched_model)
from .replica import (ConjugateParams, FixedPoint, OrderParams, QuadOptions,
                      SolverOptions, free_energy, solve_fixed_points)

__all__ = [
    "BlockPrior", "ChannelModel", "CustomChannel", "GaussianChannel", "Prior",
    "ScalarChannel", "SystemShape", "bernoulli_gaussian", "bpsk",
    "discrete_prior", "gaussian_prior", "matched_model",
    "ConjugateParams", "FixedPoint", "OrderParams", "QuadOptions",
    "SolverOptions", "free_energy", "solve_fixed_points",
    "CapabilityError", "ConfigError", "ConvergenceError", "LvclabError",
    "ModulationError", "QuadratureError",
]

__version__ = "0.1.0"
