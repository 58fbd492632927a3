"""Desk-scale cascade simulator for reactive-surplus blackout studies.

The package builds an augmented 39-bus case with collector-connected
renewable plants, runs a structure-preserving dynamic simulation with
overvoltage protection and UFLS, and exposes screening and verification
measures plus a scriptable CLI and a small TCP operator endpoint.
"""

from .case39 import CaseConfig, build_case39
from .devices import avr_response, hvdc_rate, reactor_injection, zip_injection
from .kernels import BACKEND
from .netmodel import (
    AvrConfig,
    Branch,
    Bus,
    Collector,
    GridCase,
    HvdcLink,
    IbrGroup,
    Load,
    Machine,
    OvervoltageRelay,
    ShuntReactor,
    UflsScheme,
    apply_topology_action,
    assemble_admittance,
    canonical_dumps,
    collector_voltage,
    fingerprint_of,
    load_case,
    save_case,
)
from .powerflow import (
    JacobianBlocks,
    LinearDae,
    PowerFlowSolution,
    SensitivityResult,
    full_jacobian,
    jacobian_blocks,
    linearize_dae,
    observe,
    solve_network,
    solve_pf,
    voltage_sensitivity,
)
from .measures import (
    MarginVerdict,
    PolicyComparison,
    RecoveryMargin,
    compare_ufls_policies,
    default_voltage_bounds,
    margin_table,
    meshing_screen,
    verify_margin,
)
from .protection import (
    TRANSMISSION_OV_LIMIT,
    RelayState,
    TripEvent,
    apply_trip,
    desync_check,
    relay_scan,
    ufls_step,
)
from .simengine import (
    ScenarioEvent,
    SimConfig,
    SimSession,
    SimTrace,
    SystemState,
    builtin_iberian_scenario,
    collector_voltages,
    detect_collapse,
    init_state,
    q_absorption_online,
    run_scenario,
    scenario_from_dict,
    scenario_to_dict,
    step,
)

__version__ = "0.1.0"

__all__ = [
    "AvrConfig",
    "BACKEND",
    "Branch",
    "Bus",
    "CaseConfig",
    "Collector",
    "GridCase",
    "HvdcLink",
    "IbrGroup",
    "JacobianBlocks",
    "LinearDae",
    "Load",
    "Machine",
    "MarginVerdict",
    "OvervoltageRelay",
    "PolicyComparison",
    "PowerFlowSolution",
    "RecoveryMargin",
    "RelayState",
    "ScenarioEvent",
    "SensitivityResult",
    "ShuntReactor",
    "SimConfig",
    "SimSession",
    "SimTrace",
    "SystemState",
    "TRANSMISSION_OV_LIMIT",
    "TripEvent",
    "UflsScheme",
    "apply_topology_action",
    "apply_trip",
    "assemble_admittance",
    "avr_response",
    "build_case39",
    "builtin_iberian_scenario",
    "canonical_dumps",
    "collector_voltage",
    "collector_voltages",
    "compare_ufls_policies",
    "default_voltage_bounds",
    "desync_check",
    "detect_collapse",
    "fingerprint_of",
    "full_jacobian",
    "hvdc_rate",
    "init_state",
    "jacobian_blocks",
    "linearize_dae",
    "load_case",
    "margin_table",
    "meshing_screen",
    "observe",
    "q_absorption_online",
    "reactor_injection",
    "relay_scan",
    "run_scenario",
    "save_case",
    "verify_margin",
    "scenario_from_dict",
    "scenario_to_dict",
    "solve_network",
    "solve_pf",
    "step",
    "ufls_step",
    "voltage_sensitivity",
    "zip_injection",
]
