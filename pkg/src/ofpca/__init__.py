"""Online functional principal component analysis on spline spaces.

Components are tensor-product B-spline expansions whose coefficients are
kept orthonormal in the Gram metric.  They are estimated by stochastic
Riemannian optimization over a stream of sparse, irregularly observed
subjects, and the roughness penalty is tuned on the fly.
"""
from .basis import SplineSpace, basis_matrix, make_space
from .config import FitConfig, load_config
from .errors import ConfigError, DataError, DomainError, NumericalError, OfpcaError
from .evaluation import FpcEstimate, fpc_rmse
from .model import ModelParams, Subject, batch_init
from .modelio import ModelFile, load_model, save_model
from .pipeline import FitResult, fit
from .simgen import gen_1d, gen_2d

__version__ = "0.1.0"

__all__ = [
    "SplineSpace",
    "make_space",
    "basis_matrix",
    "FitConfig",
    "load_config",
    "OfpcaError",
    "ConfigError",
    "DataError",
    "DomainError",
    "NumericalError",
    "FpcEstimate",
    "fpc_rmse",
    "ModelParams",
    "Subject",
    "batch_init",
    "ModelFile",
    "load_model",
    "save_model",
    "FitResult",
    "fit",
    "gen_1d",
    "gen_2d",
]
