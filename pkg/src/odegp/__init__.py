"""Learning ODE dynamics with Gaussian processes on integrator-transformed data."""

from .dynsys import TimeGrid, Trajectory, get_system, load_csv, save_csv, simulate_reference
from .gpcore import TrainConfig, TrainedModel, mean_field, posterior, train
from .integrate import PredictSpec, ds_rollout_ensemble, rk45, rollout_multistep, rollout_taylor
from .mscoef import SchemeKind, generate_scheme
from .sampler import SampledDynamics, draw

__all__ = [
    "PredictSpec",
    "SampledDynamics",
    "SchemeKind",
    "TimeGrid",
    "TrainConfig",
    "TrainedModel",
    "Trajectory",
    "draw",
    "ds_rollout_ensemble",
    "generate_scheme",
    "get_system",
    "load_csv",
    "mean_field",
    "posterior",
    "rk45",
    "rollout_multistep",
    "rollout_taylor",
    "save_csv",
    "simulate_reference",
    "train",
]
