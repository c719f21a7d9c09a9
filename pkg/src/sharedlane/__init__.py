"""Shared human-automation longitudinal control for lane changes."""

from .linmjls import Equilibrium, LinearMJLS, find_equilibrium, linearize
from .markov import HiddenRates, JointGenerator, ObservationParams, build_joint_generator, sample_path
from .models import DesiredSpeedCurve, DriverModel, FollowerModel, PlantState, TaskDifficultyParams
from .scenario import Scenario, bundled
from .sim import CompletionCriterion, PulseProfile, ReplayProfile, SimConfig, run
from .synthesis import ControllerGains, certify_dissipation, synthesize

__version__ = "0.1.0"

__all__ = [
    "CompletionCriterion", "ControllerGains", "DesiredSpeedCurve", "DriverModel", "Equilibrium", "FollowerModel",
    "HiddenRates", "JointGenerator", "LinearMJLS", "ObservationParams", "PlantState", "PulseProfile",
    "ReplayProfile", "Scenario", "SimConfig", "TaskDifficultyParams", "build_joint_generator", "bundled",
    "certify_dissipation", "find_equilibrium", "linearize", "run", "sample_path", "synthesize",
]
