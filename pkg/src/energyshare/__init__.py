"""Learned energy sharing for small energy-harvesting sensor networks."""

from .env import (
    CENTRALIZED, NO_SHARING, SHARING, ArrivalModel, EnvConfig, NetworkState, SensorNetworkEnv,
    StepStats, conversion_bits, critical_rate, project_action, step, trim_allocation,
)
from .agents import DdpgAgent, DqnAgent, TabularQAgent
from .harness import ExperimentSpec, Metrics, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "SHARING", "NO_SHARING", "CENTRALIZED", "ArrivalModel", "EnvConfig", "NetworkState",
    "SensorNetworkEnv", "StepStats", "conversion_bits", "critical_rate", "project_action", "step",
    "trim_allocation",
    "DdpgAgent", "DqnAgent", "TabularQAgent", "ExperimentSpec", "Metrics", "evaluate", "train",
]
