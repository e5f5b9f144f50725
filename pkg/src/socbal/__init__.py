"""Distributed SoC balancing and total-power tracking for battery fleets,
driven by two prespecified-time distributed observers."""

from .battery import BatteryUnit, Mode, StateBounds
from .scenario_io import load_preset, load_scenario, parse_scenario
from .simulation import RunMetrics, Scenario, TimeSeries, run, validate_parameters
from .topology import Topology, build_topology

__all__ = [
    "BatteryUnit",
    "Mode",
    "RunMetrics",
    "Scenario",
    "StateBounds",
    "TimeSeries",
    "Topology",
    "build_topology",
    "load_preset",
    "load_scenario",
    "parse_scenario",
    "run",
    "validate_parameters",
]
__version__ = "0.1.0"
