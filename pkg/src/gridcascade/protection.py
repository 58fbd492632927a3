"""Protection layer: overvoltage relays with dwell timers, trip execution,
UFLS schemes, desynchronization detection."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

from .netmodel import GridCase

DESYNC_LIMIT = math.pi / 2.0
# 345 kV network ceiling; gates the voltage-aware UFLS ranking and flags
# transmission-level overvoltage in reports.
TRANSMISSION_OV_LIMIT = 1.12


@dataclass(frozen=True)
class RelayState:
    relay: str
    timer: float = 0.0  # seconds accumulated above threshold
    tripped: bool = False
    trip_time: Optional[float] = None


def initial_relay_states(case: GridCase) -> list[RelayState]:
    return [RelayState(relay=r.id) for r in case.relays]


def relay_scan(
    case: GridCase,
    states: list[RelayState],
    v_by_bus: dict[int, float],
    dt: float,
    t: float,
) -> tuple[list[RelayState], list[str]]:
    """Advance dwell timers by dt against the voltages at time t.

    A timer accumulates while the monitored bus reads above threshold and
    resets to zero on any reading at or below it; the relay trips exactly
    once, when its timer reaches the dwell. Returns updated states and the
    relay ids that tripped at t, in case declaration order.
    """
    out: list[RelayState] = []
    tripped: list[str] = []
    by_id = {r.id: r for r in case.relays}
    for st in states:
        relay = by_id[st.relay]
        if st.tripped:
            out.append(st)
            continue
        if v_by_bus[relay.bus] <= relay.threshold:
            out.append(replace(st, timer=0.0))
            continue
        timer = st.timer + dt
        if timer >= relay.dwell - 1e-9:
            out.append(replace(st, timer=timer, tripped=True, trip_time=t))
            tripped.append(relay.id)
        else:
            out.append(replace(st, timer=timer))
    return out, tripped


@dataclass
class TripEvent:
    """One disconnection, operator- or protection-initiated."""

    time: float
    kind: str  # collector | transformer | line | ufls | desync | hvdc
    target: str
    removed_p_mw: float = 0.0
    removed_q_mvar: float = 0.0  # absorption lost (loads shed count too)
    cause: str = ""

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "kind": self.kind,
            "target": self.target,
            "removed_p_mw": self.removed_p_mw,
            "removed_q_mvar": self.removed_q_mvar,
            "cause": self.cause,
        }


def apply_trip(
    case: GridCase,
    collector_id: str,
    t: float,
    v_by_bus: dict[int, float],
    cause: str = "",
) -> TripEvent:
    """Disconnect a collector group as one unit and account for it.

    The IBR group goes offline, the shunt reactor disconnects, and the GSU
    branch opens. Removed quantities reflect what the devices actually
    carried at trip time, so a reactor an operator already pulled counts
    zero.
    """
    col = case.collector(collector_id)
    if col.tripped:
        raise ValueError(f"{collector_id} already tripped")
    ibr = next(g for g in case.ibr_groups if g.id == col.ibr)
    reac = case.reactor(col.reactor)
    gsu = case.branch(col.gsu_branch)
    v = v_by_bus.get(col.bus, 1.0)
    removed_p = ibr.p_set * case.s_base if ibr.online else 0.0
    removed_q = reac.b_sh * v * v * case.s_base if reac.online else 0.0
    ibr.online = False
    reac.online = False
    gsu.status = False
    col.tripped = True
    return TripEvent(
        time=t,
        kind="collector",
        target=collector_id,
        removed_p_mw=removed_p,
        removed_q_mvar=removed_q,
        cause=cause or f"relay {col.relay}",
    )


@dataclass
class UflsAction:
    stage: int
    freq_hz: float
    policy: str
    ranked: bool  # voltage-aware ranking actually engaged
    shed: list[tuple[str, float, float]]  # (load id, dP pu, dQ pu)

    @property
    def shed_p(self) -> float:
        return sum(s[1] for s in self.shed)

    @property
    def shed_q(self) -> float:
        return sum(s[2] for s in self.shed)


def ufls_step(
    case: GridCase,
    fired: list[bool],
    freq_hz: float,
    v_by_bus: Optional[dict[int, float]] = None,
    ov_limit: float = TRANSMISSION_OV_LIMIT,
) -> tuple[list[bool], list[UflsAction]]:
    """Fire any unfired stages whose threshold the frequency has crossed.

    Shedding mutates load scale factors on the passed case. The conventional
    policy sheds the stage fraction of every sheddable load pro-rata. The
    voltage-aware policy does the same unless some transmission voltage is
    above ov_limit; then it sheds whole loads in ascending Q/P order, keeping
    the strong reactive sinks connected while meeting the stage's MW target.
    """
    over_limit = False
    if v_by_bus is not None:
        tx = set(case.transmission_bus_ids())
        over_limit = any(v > ov_limit for bid, v in v_by_bus.items() if bid in tx)
    new_fired = list(fired)
    actions: list[UflsAction] = []
    for si, stage in enumerate(case.ufls.stages):
        if new_fired[si] or freq_hz >= stage.freq_hz:
            continue
        new_fired[si] = True
        pool = [
            ld
            for ld in case.loads
            if ld.sheddable and ld.p_nom * ld.scale_p > 1e-9
        ]
        shed: list[tuple[str, float, float]] = []
        ranked = case.ufls.policy == "voltage_aware" and over_limit
        if ranked:
            target = stage.fraction * sum(ld.p_nom * ld.scale_p for ld in pool)
            order = sorted(
                pool,
                key=lambda ld: (ld.q_nom * ld.scale_q) / (ld.p_nom * ld.scale_p),
            )
            left = target
            for ld in order:
                if left <= 1e-12:
                    break
                avail_p = ld.p_nom * ld.scale_p
                cut = min(avail_p, left)
                frac = cut / avail_p
                dq = ld.q_nom * ld.scale_q * frac
                ld.scale_p *= 1.0 - frac
                ld.scale_q *= 1.0 - frac
                shed.append((ld.id, cut, dq))
                left -= cut
        else:
            for ld in pool:
                dp = ld.p_nom * ld.scale_p * stage.fraction
                dq = ld.q_nom * ld.scale_q * stage.fraction
                ld.scale_p *= 1.0 - stage.fraction
                ld.scale_q *= 1.0 - stage.fraction
                shed.append((ld.id, dp, dq))
        actions.append(
            UflsAction(
                stage=si,
                freq_hz=freq_hz,
                policy=case.ufls.policy,
                ranked=ranked,
                shed=shed,
            )
        )
    return new_fired, actions


def desync_check(delta_by_machine, limit: float = DESYNC_LIMIT) -> tuple[bool, float]:
    """Max pairwise rotor-angle spread against the synchronism limit.

    The spread is mean-invariant, so no explicit reference-frame shift is
    needed.
    """
    spread = float(max(delta_by_machine) - min(delta_by_machine))
    return spread > limit, spread
