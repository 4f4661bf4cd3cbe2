"""Learning eco-epidemic dynamics: simulators, sparse regression, neural and KAN ODEs, hybrid reaction-diffusion."""

from .errors import (ConfigError, DataError, DimensionError, EcoLearnError, GridError, MetricError,
                     NumericalBlowup, SolveError)
from .integrator import RK4, TimeGrid, Trajectory, add_noise, integrate, simulate, split
from .models import ModelKind, StateVector, default_model, rhs

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "DimensionError", "EcoLearnError", "GridError", "MetricError",
           "NumericalBlowup", "SolveError", "RK4", "TimeGrid", "Trajectory", "add_noise", "integrate",
           "simulate", "split", "ModelKind", "StateVector", "default_model", "rhs"]
