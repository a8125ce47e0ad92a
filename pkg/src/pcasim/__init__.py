"""Phase-field simulator of prostate cancer growth under therapy."""

__version__ = "0.1.0"

from .model import ModelParameters, TherapySchedule, validate_scenario
from .scenarios import Scenario, preset, preset_names
from .splines import SplineSpace2D, build_space, l2_project
from .assembly import GalerkinSystem, SystemState
from .timestepping import (AlphaParams, StepControls, advance_step,
                           alpha_from_rho_inf, run_simulation)

__all__ = [
    "ModelParameters", "TherapySchedule", "validate_scenario",
    "Scenario", "preset", "preset_names",
    "SplineSpace2D", "build_space", "l2_project",
    "GalerkinSystem", "SystemState",
    "AlphaParams", "StepControls", "advance_step", "alpha_from_rho_inf",
    "run_simulation",
]
