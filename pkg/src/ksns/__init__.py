"""Pseudo-spectral simulator for the stochastic Keller-Segel-Navier-Stokes system on a 2D torus."""

from .errors import ConfigError, ContractError, StreamError
from .fields import ExponentSet, State, make_initial_state, x_norms
from .functionals import GammaParams, compute_diagnostics, free_energy, modified_energy
from .noise import NoiseSpec, WienerPath, make_noise_spec
from .spectral import Grid, make_grid
from .stepper import Simulation, StepperConfig, StoppingEvent

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "StreamError",
    "ExponentSet",
    "State",
    "make_initial_state",
    "x_norms",
    "GammaParams",
    "compute_diagnostics",
    "free_energy",
    "modified_energy",
    "NoiseSpec",
    "WienerPath",
    "make_noise_spec",
    "Grid",
    "make_grid",
    "Simulation",
    "StepperConfig",
    "StoppingEvent",
]
