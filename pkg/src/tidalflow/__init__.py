"""Tidal-flow lane management: reversible lanes, signal timing and plan search."""

from .errors import TidalflowError
from .network import ControlPlan, LaneAllocation, Network, Timing
from .scenario import Scenario, load_scenario

__all__ = [
    "ControlPlan",
    "LaneAllocation",
    "Network",
    "Scenario",
    "TidalflowError",
    "Timing",
    "load_scenario",
]
__version__ = "0.1.0"
