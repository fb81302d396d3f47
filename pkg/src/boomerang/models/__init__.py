"""Concrete targets: Gaussian, separable quartic, logistic regression, diffusion bridge."""

from .bridge import (BridgeModel, FaberSchauderBasis, bridge_bound_constants,
                     bridge_partial_U, bridge_subsampled_partial, faber_schauder_eval)
from .gaussian import GaussianEnergy, SeparableQuartic, ZeroPotential, gaussian_target
from .logistic import (LogisticData, LogisticEnergy, generate_logistic_data,
                       load_logistic_csv, logistic_bound_constants, logistic_energy,
                       logistic_grad_E, logistic_hess_E, save_logistic_csv)

__all__ = [
    "BridgeModel", "FaberSchauderBasis", "bridge_bound_constants", "bridge_partial_U",
    "bridge_subsampled_partial", "faber_schauder_eval", "GaussianEnergy",
    "SeparableQuartic", "ZeroPotential", "gaussian_target", "LogisticData",
    "LogisticEnergy", "generate_logistic_data", "load_logistic_csv",
    "logistic_bound_constants", "logistic_energy", "logistic_grad_E", "logistic_hess_E",
    "save_logistic_csv",
]
