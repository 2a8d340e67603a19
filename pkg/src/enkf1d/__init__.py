"""Scalar ensemble Kalman filter laboratory."""

__version__ = "0.1.0"

from .model import ModelParams, Trajectory, new_model, simulate_trajectory  # noqa: E402
from .riccati import RiccatiCoeffs, coeffs_from_model, phi, phi_n_closed_form  # noqa: E402
from .kalman import KalmanState, run_kalman, stability_product, steady_state_variance  # noqa: E402
from .enkf import Ensemble, run_enkf  # noqa: E402

__all__ = [
    "__version__",
    "ModelParams",
    "Trajectory",
    "new_model",
    "simulate_trajectory",
    "RiccatiCoeffs",
    "coeffs_from_model",
    "phi",
    "phi_n_closed_form",
    "KalmanState",
    "run_kalman",
    "stability_product",
    "steady_state_variance",
    "Ensemble",
    "run_enkf",
]
