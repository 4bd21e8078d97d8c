from .gru_gaussian import DT_MIN, GRUGaussianConfig, GRUGaussianModel
from .hawkes import FitResult, HawkesModel, fit_hawkes, fit_pair, pair_nll
from .poisson import PoissonModel, fit_poisson
from .rmtpp import RMTPPConfig, RMTPPModel

__all__ = [
    "DT_MIN", "FitResult", "GRUGaussianConfig", "GRUGaussianModel", "HawkesModel", "PoissonModel",
    "RMTPPConfig", "RMTPPModel", "fit_hawkes", "fit_pair", "fit_poisson", "pair_nll",
]
