"""Endurance-aware mapping of spiking neural network clusters onto RRAM crossbars."""

__version__ = "0.1.0"

from .crossbar import (  # noqa: E402
    CrossbarConfig,
    DelayMap,
    EnduranceMap,
    TechnologyNode,
    VoltageMap,
    build_delay_map,
    build_endurance_maps,
    default_config,
    solve_voltage_map,
)
from .device import DeviceParams, ResistanceState, hrs_transition_time, lrs_transition_time, read_endurance  # noqa: E402
from .mapping import HardwareConfig, MappingSolution, hill_climb_map, map_unlimited  # noqa: E402
from .metrics import EvaluationReport, evaluate, hardware_delay, random_baseline  # noqa: E402
from .placement import Placement, PlacementResult, optimize_placement  # noqa: E402
from .workload import Cluster, Neuron, Synapse, Workload, generate_synthetic, load_workload  # noqa: E402

__all__ = [
    "CrossbarConfig", "DelayMap", "EnduranceMap", "TechnologyNode", "VoltageMap", "build_delay_map",
    "build_endurance_maps", "default_config", "solve_voltage_map", "DeviceParams", "ResistanceState",
    "hrs_transition_time", "lrs_transition_time", "read_endurance", "HardwareConfig", "MappingSolution",
    "hill_climb_map", "map_unlimited", "EvaluationReport", "evaluate", "hardware_delay", "random_baseline",
    "Placement", "PlacementResult", "optimize_placement", "Cluster", "Neuron", "Synapse", "Workload",
    "generate_synthetic", "load_workload",
]
