"""Partitioned time-stepping engine: integrate machine and link states,
re-solve the network each stage, scan protection, execute scheduled actions,
detect collapse, record traces.

A run owns a private copy of the case; every mutation (scheduled action,
trip, load shed) lands on that copy at a step boundary so a trace replays
bit-exactly from its event log. Events execute in scenario order, then
protection in relay order, then UFLS stages, then the desync flag.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import devices
from .netmodel import GridCase, assemble_admittance, canonical_dumps
from .powerflow import PF_TOL, observe, solve_network, solve_pf
from .protection import (
    TripEvent,
    apply_trip,
    desync_check,
    initial_relay_states,
    relay_scan,
    ufls_step,
)

SCENARIO_SCHEMA = "scenario-v1"
TRACE_SCHEMA = "simtrace-v1"

ACTIONS = (
    "MeshLine",
    "OpenLine",
    "OpenReactor",
    "CloseReactor",
    "SetHvdcMode",
    "SetHvdcPower",
    "ScaleExport",
    "TripDevice",
    "SetAvrMode",
    "InjectQDisturbance",
)


@dataclass
class ScenarioEvent:
    t: float
    action: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("event time must be non-negative")
        if self.action not in ACTIONS:
            raise ValueError(f"unknown action {self.action!r}")


@dataclass
class SimConfig:
    dt: float = 0.01
    t_end: float = 16.0
    pf_tol: float = PF_TOL
    collapse_pf_failures: int = 3
    collapse_freq_floor_hz: float = 47.5
    collapse_v_floor: float = 0.7
    decimation: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0 or self.t_end <= 0:
            raise ValueError("dt and t_end must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def scenario_to_dict(events: list[ScenarioEvent], config: SimConfig) -> dict:
    return {
        "schema": SCENARIO_SCHEMA,
        "events": [
            {"t": ev.t, "action": ev.action, "params": ev.params} for ev in events
        ],
        "config": config.to_dict(),
    }


def scenario_from_dict(d: dict) -> tuple[list[ScenarioEvent], SimConfig]:
    if d.get("schema") != SCENARIO_SCHEMA:
        raise ValueError(f"unsupported scenario schema: {d.get('schema')!r}")
    raw = d.get("events")
    if not isinstance(raw, list):
        raise ValueError("scenario events must be a list")
    events = [
        ScenarioEvent(t=e["t"], action=e["action"], params=e.get("params", {}))
        for e in raw
    ]
    cfg_d = d.get("config", {})
    known = set(SimConfig.__dataclass_fields__)
    extra = set(cfg_d) - known
    if extra:
        raise ValueError(f"unknown config fields: {sorted(extra)}")
    return events, SimConfig(**cfg_d)


@dataclass
class SystemState:
    """Everything one instant of a run carries.

    Differential: per-machine rotor angle, speed deviation, AVR lag state
    (system pu), per-link scheduled power. Algebraic: v, theta per bus.
    e0/e_gain freeze the excitation law e = e0 + e_gain * q_avr at init.
    Protection and accounting state rides along so a step is a pure
    (case, state) -> (case', state') transition.
    """

    t: float
    delta: np.ndarray
    domega: np.ndarray
    q_avr: np.ndarray
    hvdc_p: np.ndarray
    v: np.ndarray
    theta: np.ndarray
    e0: np.ndarray
    e_gain: np.ndarray
    p_m: np.ndarray
    freq_hz: float = 50.0
    relays: list = field(default_factory=list)
    ufls_fired: list = field(default_factory=list)
    desync_flagged: bool = False
    pf_failures: int = 0
    q_lost_mvar: float = 0.0

    def copy(self) -> "SystemState":
        return copy.deepcopy(self)

    def emf_e(self) -> np.ndarray:
        return self.e0 + self.e_gain * self.q_avr


def init_state(case: GridCase, sol=None) -> SystemState:
    """Equilibrium engine state from a solved power flow.

    Machine internal sources are placed so their injections reproduce the
    static solution exactly; AVR references are taken as-built, so a case
    whose machines regulate at their references starts at a true fixed
    point.
    """
    if sol is None:
        op = case.meta.get("operating_point") if isinstance(case.meta, dict) else None
        if op:
            sol = solve_pf(
                case,
                v0=np.asarray(op["v"], dtype=float),
                theta0=np.asarray(op["theta"], dtype=float),
            )
        else:
            sol = solve_pf(case)
    if not sol.converged:
        raise ValueError("power flow did not converge; cannot initialize")
    idx = case.index()
    nm = len(case.machines)
    delta = np.zeros(nm)
    e0 = np.zeros(nm)
    e_gain = np.zeros(nm)
    p_m = np.zeros(nm)
    for i, m in enumerate(case.machines):
        k = idx[m.bus]
        x = m.x_sys(case.s_base)
        p = sol.machine_p[m.id]
        q = sol.machine_q[m.id]
        e0[i], delta[i] = devices.emf_init(sol.v[k], sol.theta[k], p, q, x)
        # local Q -> E gain so q_avr acts in (approximately) injected pu
        ang = delta[i] - sol.theta[k]
        e_gain[i] = x / (sol.v[k] * np.cos(ang))
        p_m[i] = p
    return SystemState(
        t=0.0,
        delta=delta,
        domega=np.zeros(nm),
        q_avr=np.zeros(nm),
        hvdc_p=np.array([lk.p_ref for lk in case.hvdc]),
        v=sol.v.copy(),
        theta=sol.theta.copy(),
        e0=e0,
        e_gain=e_gain,
        p_m=p_m,
        freq_hz=case.f0,
        relays=initial_relay_states(case),
        ufls_fired=[False] * len(case.ufls.stages),
    )


def _rates(case: GridCase, state: SystemState, delta, domega, q_avr, hvdc_p, v, theta):
    """Time derivatives of the differential states at the given point."""
    idx = case.index()
    nm = len(case.machines)
    dd = np.zeros(nm)
    dw = np.zeros(nm)
    dq = np.zeros(nm)
    e = state.e0 + state.e_gain * q_avr
    for i, m in enumerate(case.machines):
        k = idx[m.bus]
        x = m.x_sys(case.s_base)
        p_e, _ = devices.emf_injection(e[i], delta[i], v[k], theta[k], x)
        dd[i], dw[i] = devices.swing_rates(
            m, case.s_base, case.f0, domega[i], state.p_m[i], p_e
        )
        cmd = (
            devices.avr_response(m.avr, v[k], m.s_n, q_now=q_avr[i] * case.s_base)
            / case.s_base
        )
        # deadband acts protection-like once outside the band; droop keeps
        # its regulator lag regardless of what tau the config carries
        tau = devices.AVR_TAU_MIN if m.avr.mode == "deadband" else m.avr.tau
        rate = (cmd - q_avr[i]) / max(tau, devices.AVR_TAU_MIN)
        if m.avr.mode == "deadband" and m.avr.ramp_mvar_s is not None:
            lim = m.avr.ramp_mvar_s / case.s_base
            rate = max(-lim, min(lim, rate))
        dq[i] = rate
    dp = np.zeros(len(case.hvdc))
    for li, lk in enumerate(case.hvdc):
        gap = theta[idx[lk.terminal_a]] - theta[idx[lk.terminal_b]]
        dp[li] = devices.hvdc_rate(lk, hvdc_p[li], gap)
    return dd, dw, dq, dp


def _hvdc_map(case: GridCase, hvdc_p) -> dict:
    return {lk.id: float(hvdc_p[li]) for li, lk in enumerate(case.hvdc)}


def _execute_action(case: GridCase, state: SystemState, ev: ScenarioEvent) -> dict:
    """Apply one scheduled action to the run's case copy.

    Returns the executed-event record; raises ValueError on bad targets so
    malformed scenarios die loudly instead of producing partial output.
    """
    p = ev.params
    rec = {"type": "action", "time": ev.t, "action": ev.action, "params": dict(p)}
    idx = case.index()
    if ev.action == "MeshLine":
        br = case.branch(p["branch"])
        if br.kind != "mesh":
            raise ValueError(f"{br.id} is not a mesh candidate")
        if br.status:
            raise ValueError(f"{br.id} already closed")
        br.status = True
    elif ev.action == "OpenLine":
        br = case.branch(p["branch"])
        if not br.status:
            raise ValueError(f"{br.id} already open")
        br.status = False
    elif ev.action == "OpenReactor":
        r = case.reactor(p["reactor"])
        if not r.operator_switchable:
            raise ValueError(f"{r.id} is not operator switchable")
        if not r.online:
            raise ValueError(f"{r.id} already offline")
        vk = float(state.v[idx[r.bus]])
        rec["removed_q_mvar"] = r.b_sh * vk * vk * case.s_base
        state.q_lost_mvar += rec["removed_q_mvar"]
        r.online = False
    elif ev.action == "CloseReactor":
        r = case.reactor(p["reactor"])
        if not r.operator_switchable:
            raise ValueError(f"{r.id} is not operator switchable")
        if r.online:
            raise ValueError(f"{r.id} already online")
        r.online = True
    elif ev.action == "SetHvdcMode":
        lk = next(h for h in case.hvdc if h.id == p["link"])
        mode = p["mode"]
        if mode not in ("PMODE1", "PMODE3"):
            raise ValueError(f"unknown HVDC mode {mode!r}")
        li = [h.id for h in case.hvdc].index(lk.id)
        if mode == "PMODE1":
            # fixed export: freeze the target at the current transfer
            lk.p_ref = float(state.hvdc_p[li])
            rec["frozen_p_mw"] = lk.p_ref * case.s_base
        else:
            gap = state.theta[idx[lk.terminal_a]] - state.theta[idx[lk.terminal_b]]
            lk.p0 = float(state.hvdc_p[li]) - lk.k * gap
        lk.mode = mode
    elif ev.action == "SetHvdcPower":
        lk = next(h for h in case.hvdc if h.id == p["link"])
        target = p["p_mw"] / case.s_base
        lk.p0 += target - lk.p_ref
        lk.p_ref = target
    elif ev.action == "ScaleExport":
        factor = p["factor"]
        ids = {p["link"]} if "link" in p else {h.id for h in case.hvdc}
        for lk in case.hvdc:
            if lk.id in ids:
                lk.p_ref *= factor
                lk.p0 *= factor
    elif ev.action == "TripDevice":
        rec["trip"] = _trip_device(case, state, p["device"], ev.t).to_dict()
    elif ev.action == "SetAvrMode":
        mode = p["mode"]
        if mode not in ("droop", "deadband"):
            raise ValueError(f"unknown AVR mode {mode!r}")
        target = p.get("machine", "all")
        hit = False
        for m in case.machines:
            if m.is_external and target == "all":
                continue
            if target in ("all", m.id):
                m.avr.mode = mode
                hit = True
        if not hit:
            raise ValueError(f"no machine {target}")
    elif ev.action == "InjectQDisturbance":
        bus = p["bus"]
        if bus not in idx:
            raise ValueError(f"no bus {bus}")
        # positive mvar = absorption lost = net injection added
        case.q_extra[bus] = case.q_extra.get(bus, 0.0) + p["mvar"] / case.s_base
        if p["mvar"] > 0:
            state.q_lost_mvar += p["mvar"]
            rec["removed_q_mvar"] = p["mvar"]
    else:  # pragma: no cover - guarded by ScenarioEvent validation
        raise ValueError(f"unknown action {ev.action!r}")
    return rec


def _trip_device(
    case: GridCase, state: SystemState, device: str, t: float
) -> TripEvent:
    idx = case.index()
    v_by_bus = {b.id: float(state.v[idx[b.id]]) for b in case.buses}
    for col in case.collectors:
        if col.id == device:
            ev = apply_trip(case, device, t, v_by_bus, cause="operator trip")
            state.q_lost_mvar += ev.removed_q_mvar
            return ev
    for br in case.branches:
        if br.id == device:
            br.status = False
            kind = "line" if br.kind in ("line", "mesh") else "transformer"
            return TripEvent(time=t, kind=kind, target=device, cause="operator trip")
    for li, lk in enumerate(case.hvdc):
        if lk.id == device:
            removed = float(state.hvdc_p[li])
            lk.mode = "PMODE1"
            lk.p_ref = 0.0
            lk.p0 = 0.0
            return TripEvent(
                time=t,
                kind="hvdc",
                target=device,
                removed_p_mw=removed * case.s_base,
                cause="operator trip",
            )
    raise ValueError(f"no trippable device {device!r}")


def step(
    case: GridCase,
    state: SystemState,
    dt: float,
    pending: Optional[list[ScenarioEvent]] = None,
    *,
    ybus: Optional[np.ndarray] = None,
    pf_tol: float = PF_TOL,
) -> tuple[SystemState, list[dict]]:
    """Advance one step: apply due actions, integrate, scan protection.

    Heun stepping with a network re-solve at the stage point. Solver
    failures do not raise; they increment state.pf_failures and freeze the
    algebraic part so the caller's collapse policy decides.
    """
    emitted: list[dict] = []
    st = state.copy()
    topo_dirty = ybus is None
    for ev in pending or []:
        emitted.append(_execute_action(case, st, ev))
        topo_dirty = True
    if topo_dirty:
        ybus = assemble_admittance(case)

    idx = case.index()
    t1 = st.t + dt
    y0 = (st.delta, st.domega, st.q_avr, st.hvdc_p)
    k1 = _rates(case, st, *y0, st.v, st.theta)
    y1 = tuple(a + dt * r for a, r in zip(y0, k1))
    v1, th1, _, _, ok1, _, _ = solve_network(
        case,
        st.v,
        st.theta,
        emf_e=st.e0 + st.e_gain * y1[2],
        emf_delta=y1[0],
        hvdc_p=_hvdc_map(case, y1[3]),
        tol=pf_tol,
        ybus=ybus,
    )
    if ok1:
        k2 = _rates(case, st, *y1, v1, th1)
        y2 = tuple(a + 0.5 * dt * (r1 + r2) for a, r1, r2 in zip(y0, k1, k2))
        v2, th2, _, _, ok2, _, _ = solve_network(
            case,
            v1,
            th1,
            emf_e=st.e0 + st.e_gain * y2[2],
            emf_delta=y2[0],
            hvdc_p=_hvdc_map(case, y2[3]),
            tol=pf_tol,
            ybus=ybus,
        )
    else:
        y2, v2, th2, ok2 = y1, v1, th1, False

    st.t = t1
    st.delta, st.domega, st.q_avr, st.hvdc_p = (np.asarray(a) for a in y2)
    if ok1 and ok2:
        st.v, st.theta = v2, th2
        st.pf_failures = 0
    else:
        st.pf_failures += 1  # keep last consistent algebraic state
    st.freq_hz = devices.system_frequency(case, st.domega)

    v_by_bus = {b.id: float(st.v[idx[b.id]]) for b in case.buses}
    st.relays, fired = relay_scan(case, st.relays, v_by_bus, dt, t1)
    relay_to_col = {c.relay: c for c in case.collectors}
    boundary_trip = False
    for rid in fired:
        col = relay_to_col.get(rid)
        if col is None or col.tripped:
            continue
        tev = apply_trip(case, col.id, t1, v_by_bus)
        st.q_lost_mvar += tev.removed_q_mvar
        emitted.append({"type": "trip", **tev.to_dict()})
        boundary_trip = True

    st.ufls_fired, shed_actions = ufls_step(case, st.ufls_fired, st.freq_hz, v_by_bus)
    for act in shed_actions:
        tev = TripEvent(
            time=t1,
            kind="ufls",
            target=f"stage-{act.stage + 1}",
            removed_p_mw=act.shed_p * case.s_base,
            removed_q_mvar=act.shed_q * case.s_base,
            cause=f"f={act.freq_hz:.3f} Hz"
            + (", voltage-aware ranking" if act.ranked else ""),
        )
        st.q_lost_mvar += max(0.0, tev.removed_q_mvar)
        emitted.append({"type": "trip", **tev.to_dict()})
        boundary_trip = True

    if not st.desync_flagged and len(st.delta) > 1:
        hit, spread = desync_check(st.delta)
        if hit:
            st.desync_flagged = True
            tev = TripEvent(
                time=t1,
                kind="desync",
                target="system",
                cause=f"angle spread {spread:.3f} rad",
            )
            emitted.append({"type": "trip", **tev.to_dict()})

    if boundary_trip:
        # topology changed at the boundary; restore algebraic consistency
        v3, th3, _, _, ok3, _, _ = solve_network(
            case,
            st.v,
            st.theta,
            emf_e=st.emf_e(),
            emf_delta=st.delta,
            hvdc_p=_hvdc_map(case, st.hvdc_p),
            tol=pf_tol,
        )
        if ok3:
            st.v, st.theta = v3, th3
        else:
            st.pf_failures += 1
    return st, emitted


def detect_collapse(state: SystemState, case: GridCase, config: SimConfig):
    """Terminal adjudication: None while healthy, else (reason, detail)."""
    if state.pf_failures >= config.collapse_pf_failures:
        return ("network solve diverged", f"{state.pf_failures} consecutive failures")
    if state.freq_hz < config.collapse_freq_floor_hz:
        return ("frequency floor", f"{state.freq_hz:.3f} Hz")
    idx = case.index()
    vmin = min(float(state.v[idx[b]]) for b in case.transmission_bus_ids())
    if vmin < config.collapse_v_floor:
        return ("voltage floor", f"{vmin:.4f} pu")
    return None


@dataclass
class SimTrace:
    """Time-indexed run record: snapshots, events as executed, terminal."""

    config: dict
    case_fingerprint: str
    bus_ids: list[int]
    transmission_bus_ids: list[int]
    collector_buses: dict[str, int]
    machine_ids: list[str]
    records: list[dict]
    events: list[dict]
    status: str = "completed"
    terminal_t: float = 0.0
    terminal_reason: str = ""

    def trips(self, kind: Optional[str] = None) -> list[dict]:
        out = [e for e in self.events if e["type"] == "trip"]
        if kind is not None:
            out = [e for e in out if e["kind"] == kind]
        return out

    def actions(self, action: Optional[str] = None) -> list[dict]:
        out = [e for e in self.events if e["type"] == "action"]
        if action is not None:
            out = [e for e in out if e["action"] == action]
        return out

    def max_transmission_v(self, rec: dict) -> float:
        pos = {b: i for i, b in enumerate(self.bus_ids)}
        return max(rec["v"][pos[b]] for b in self.transmission_bus_ids)

    def header_dict(self) -> dict:
        return {
            "schema": TRACE_SCHEMA,
            "config": self.config,
            "case_fingerprint": self.case_fingerprint,
            "bus_ids": self.bus_ids,
            "transmission_bus_ids": self.transmission_bus_ids,
            "collector_buses": self.collector_buses,
            "machine_ids": self.machine_ids,
        }

    def terminal_dict(self) -> dict:
        return {
            "terminal": self.status,
            "t": self.terminal_t,
            "reason": self.terminal_reason,
        }

    def to_jsonl(self) -> str:
        lines = [canonical_dumps(self.header_dict())]
        lines += [canonical_dumps(r) for r in self.records]
        lines += [canonical_dumps(e) for e in self.events]
        lines.append(canonical_dumps(self.terminal_dict()))
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_jsonl(text: str) -> "SimTrace":
        rows = [json.loads(ln) for ln in text.strip().splitlines()]
        head = rows[0]
        if head.get("schema") != TRACE_SCHEMA:
            raise ValueError(f"unsupported trace schema: {head.get('schema')!r}")
        term = rows[-1]
        return SimTrace(
            config=head["config"],
            case_fingerprint=head["case_fingerprint"],
            bus_ids=head["bus_ids"],
            transmission_bus_ids=head["transmission_bus_ids"],
            collector_buses=head["collector_buses"],
            machine_ids=head["machine_ids"],
            records=[r for r in rows[1:-1] if "v" in r],
            events=[r for r in rows[1:-1] if "type" in r],
            status=term["terminal"],
            terminal_t=term["t"],
            terminal_reason=term["reason"],
        )

    def to_csv(self) -> str:
        cols = ["t"] + [f"v_{b}" for b in self.bus_ids] + ["freq_hz", "q_lost_mvar"]
        lines = [",".join(cols)]
        for r in self.records:
            vals = [repr(r["t"])] + [repr(x) for x in r["v"]]
            vals += [repr(r["freq_hz"]), repr(r["q_lost_mvar"])]
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"


def _record(case: GridCase, state: SystemState) -> dict:
    return {
        "t": state.t,
        "v": [float(x) for x in state.v],
        "freq_hz": state.freq_hz,
        "q_lost_mvar": state.q_lost_mvar,
        "relay_timers": {r.relay: r.timer for r in state.relays},
    }


class SimSession:
    """Incremental scenario driver: the run_scenario loop, steppable.

    Owns a private case copy, the engine state, and the growing trace.
    run_scenario drives one to completion in a single call; the operator
    server advances one step at a time and may insert events between
    steps. Both paths execute the identical loop body, so a finished
    session's trace is bit-for-bit what run_scenario produces for the
    same (case, committed events, config).
    """

    def __init__(
        self,
        case: GridCase,
        events: list[ScenarioEvent],
        config: SimConfig,
        *,
        state: Optional[SystemState] = None,
    ):
        self.events = sorted(events, key=lambda e: e.t)  # stable for ties
        self.case = case.copy()
        self.config = config
        self.state = init_state(self.case) if state is None else state.copy()
        self.trace = SimTrace(
            config=config.to_dict(),
            case_fingerprint=self.case.fingerprint(),
            bus_ids=[b.id for b in self.case.buses],
            transmission_bus_ids=self.case.transmission_bus_ids(),
            collector_buses={c.id: c.bus for c in self.case.collectors},
            machine_ids=[m.id for m in self.case.machines],
            records=[_record(self.case, self.state)],
            events=[],
        )
        self.n_steps = int(round(config.t_end / config.dt))
        self.k = 0
        self.cursor = 0
        self.finished = False
        self._ybus = assemble_admittance(self.case)

    def insert_event(self, ev: ScenarioEvent) -> None:
        """Insert a not-yet-due event, keeping (t, insertion) order.

        Replaying the full event list through a fresh session applies it
        at the same step boundary, which is what keeps the committed log
        replayable.
        """
        if self.finished:
            raise ValueError("session already finished")
        if ev.t < self.state.t - 1e-9:
            raise ValueError(f"event time {ev.t} is in the past (t={self.state.t})")
        pos = self.cursor
        while pos < len(self.events) and self.events[pos].t <= ev.t + 1e-9:
            pos += 1
        self.events.insert(pos, ev)

    def advance(self, n_max: int = 1) -> list[dict]:
        """Run up to n_max steps; stop early on terminal. Returns emitted."""
        out: list[dict] = []
        for _ in range(n_max):
            if self.finished:
                break
            self.k += 1
            k = self.k
            t_start = (k - 1) * self.config.dt
            due: list[ScenarioEvent] = []
            while (
                self.cursor < len(self.events)
                and self.events[self.cursor].t <= t_start + 1e-9
            ):
                due.append(self.events[self.cursor])
                self.cursor += 1
            self.state, emitted = step(
                self.case,
                self.state,
                self.config.dt,
                due,
                ybus=None if due else self._ybus,
                pf_tol=self.config.pf_tol,
            )
            self.trace.events.extend(emitted)
            out.extend(emitted)
            if any(e["type"] == "trip" for e in emitted) or due:
                self._ybus = assemble_admittance(self.case)
            if k % max(1, self.config.decimation) == 0 or k == self.n_steps:
                self.trace.records.append(_record(self.case, self.state))
            verdict = detect_collapse(self.state, self.case, self.config)
            if verdict is not None:
                reason, detail = verdict
                self.trace.status = "collapsed"
                self.trace.terminal_t = self.state.t
                self.trace.terminal_reason = f"{reason}: {detail}"
                if self.trace.records[-1]["t"] != self.state.t:
                    self.trace.records.append(_record(self.case, self.state))
                self.finished = True
                break
            if k == self.n_steps:
                self.trace.status = "completed"
                self.trace.terminal_t = self.state.t
                self.finished = True
        return out

    def record(self) -> dict:
        return _record(self.case, self.state)


def run_scenario(
    case: GridCase,
    events: list[ScenarioEvent],
    config: SimConfig,
    *,
    state: Optional[SystemState] = None,
) -> SimTrace:
    """Execute a scenario to t_end or collapse on a private copy of case."""
    session = SimSession(case, events, config, state=state)
    while not session.finished:
        session.advance(session.n_steps)
    return session.trace


def collector_voltages(case: GridCase, state: SystemState) -> dict[str, float]:
    idx = case.index()
    return {c.id: float(state.v[idx[c.bus]]) for c in case.collectors}


def q_absorption_online(case: GridCase, state: SystemState) -> float:
    """Total shunt-reactor absorption currently connected, MVAr."""
    idx = case.index()
    total = 0.0
    for r in case.reactors:
        if r.online:
            vk = float(state.v[idx[r.bus]])
            total += r.b_sh * vk * vk * case.s_base
    return total


def builtin_iberian_scenario():
    """Calibrated case plus the scripted operator timeline and config.

    Returns (GridCase, events, SimConfig). The timeline closes four
    transmission parallels, eases the export schedule, opens both
    switchable transmission reactors, and locks the HVDC link to fixed
    power, all between 4.5 and 10 s; protection does the rest.
    """
    from .case39 import CaseConfig, build_case39

    case = build_case39(CaseConfig())
    events = [
        ScenarioEvent(4.5, "MeshLine", {"branch": "MESH-21-22"}),
        ScenarioEvent(5.2, "MeshLine", {"branch": "MESH-3-18"}),
        ScenarioEvent(6.0, "ScaleExport", {"factor": 0.85}),
        ScenarioEvent(6.8, "OpenReactor", {"reactor": "RX-1"}),
        ScenarioEvent(7.5, "MeshLine", {"branch": "MESH-15-16"}),
        ScenarioEvent(8.3, "SetHvdcMode", {"link": "HVDC-EXPORT", "mode": "PMODE1"}),
        ScenarioEvent(9.0, "MeshLine", {"branch": "MESH-14-15"}),
        ScenarioEvent(9.88, "OpenReactor", {"reactor": "RX-2"}),
    ]
    config = SimConfig(dt=0.01, t_end=16.0)
    return case, events, config


__all__ = [
    "ACTIONS",
    "ScenarioEvent",
    "SimConfig",
    "SimSession",
    "SimTrace",
    "SystemState",
    "builtin_iberian_scenario",
    "collector_voltages",
    "detect_collapse",
    "init_state",
    "observe",
    "q_absorption_online",
    "run_scenario",
    "scenario_from_dict",
    "scenario_to_dict",
    "step",
]
