"""Shared fixtures: built cases, reference traces, acceptance reporting.

The heavy artifacts (case build ~0.5 s, full cascade run ~3 s) are session
scoped; tests treat them as read-only and copy before mutating.
"""
from __future__ import annotations

import json
import pathlib

import numpy as np
import pytest

from gridcascade.case39 import CaseConfig, build_case39, load_stock_case
from gridcascade.netmodel import Branch, Bus, GridCase, Load, Machine
from gridcascade.simengine import (
    ScenarioEvent,
    SimConfig,
    builtin_iberian_scenario,
    run_scenario,
)

FIXTURES = pathlib.Path(__file__).parent / "fixtures"

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def acceptance(criterion: str, ok: bool, detail: str) -> None:
    line = f"{criterion} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="session")
def stock_case() -> GridCase:
    """The unaugmented 39-bus network as a GridCase (constant-power loads)."""
    stock = load_stock_case()
    case = GridCase(s_base=stock["baseMVA"], slack_bus=31)
    for row in stock["bus"]:
        case.buses.append(Bus(id=int(row[0]), kv=row[9]))
        if row[2] or row[3]:
            case.loads.append(
                Load(
                    id=f"LD-{int(row[0])}",
                    bus=int(row[0]),
                    p_nom=row[2] / stock["baseMVA"],
                    q_nom=row[3] / stock["baseMVA"],
                )
            )
    for k, row in enumerate(stock["branch"]):
        case.branches.append(
            Branch(
                id=f"B{k}",
                f=int(row[0]),
                t=int(row[1]),
                r=row[2],
                x=row[3],
                b=row[4],
                ratio=row[8],
                status=bool(int(row[10])),
                kind="transformer" if row[8] else "line",
            )
        )
    for row in stock["gen"]:
        bus = int(row[0])
        case.machines.append(
            Machine(
                id=f"G{bus}",
                bus=bus,
                s_n=row[6],
                p_set=row[1] / stock["baseMVA"],
                v_set=row[5],
                q_min=row[4] / row[6],
                q_max=row[3] / row[6],
                is_slack=bus == 31,
            )
        )
    return case


@pytest.fixture(scope="session")
def pf_reference() -> dict:
    return json.loads((FIXTURES / "ieee39_stock_pf.json").read_text())


@pytest.fixture(scope="session")
def builtin_parts():
    """(case, events, config) of the builtin replication study. Read-only."""
    return builtin_iberian_scenario()


@pytest.fixture(scope="session")
def builtin_case(builtin_parts) -> GridCase:
    return builtin_parts[0]


@pytest.fixture(scope="session")
def builtin_trace(builtin_parts):
    case, events, config = builtin_parts
    return run_scenario(case.copy(), list(events), config)


@pytest.fixture(scope="session")
def droop_trace(builtin_parts):
    """Same scenario with the fleet switched to compliant droop AVRs at t=0."""
    case, events, config = builtin_parts
    evs = [ScenarioEvent(0.0, "SetAvrMode", {"mode": "droop"})] + list(events)
    return run_scenario(case.copy(), evs, config)


@pytest.fixture(scope="session")
def droop_case() -> GridCase:
    """A fresh build with compliant droop AVRs (pre-scenario equilibrium)."""
    return build_case39(CaseConfig(avr_mode="droop"))


def transmission_records_ok(trace) -> bool:
    return all("v" in r for r in trace.records)


def power_balance_residual(case: GridCase, state) -> float:
    """Worst per-bus P/Q mismatch of an engine state, pu.

    Recomputes everything from first principles: network flows from the
    admittance matrix, device injections from the device laws, machine
    injections from the internal-source law. Dead (de-energized) buses are
    excluded; their equations are dropped by the solver too.
    """
    from gridcascade.devices import emf_injection
    from gridcascade.netmodel import assemble_admittance
    from gridcascade.powerflow import device_injections, energized_mask

    idx = case.index()
    y = assemble_admittance(case)
    volt = state.v * np.exp(1j * state.theta)
    s_net = volt * np.conj(y @ volt)
    hvdc_map = {lk.id: float(state.hvdc_p[i]) for i, lk in enumerate(case.hvdc)}
    p_dev, q_dev, _, _ = device_injections(case, state.v, hvdc_p=hvdc_map)
    e = state.emf_e()
    for i, m in enumerate(case.machines):
        k = idx[m.bus]
        pe, qe = emf_injection(
            e[i], state.delta[i], state.v[k], state.theta[k], m.x_sys(case.s_base)
        )
        p_dev[k] += pe
        q_dev[k] += qe
    alive = energized_mask(case)
    dp = np.abs(p_dev - s_net.real)[alive]
    dq = np.abs(q_dev - s_net.imag)[alive]
    return float(max(dp.max(), dq.max()))
