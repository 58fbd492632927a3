"""Network model: buses, branches, devices, admittance assembly, topology edits.

All quantities are per-unit on the case MVA base unless a name says otherwise
(`*_mvar`, `*_mw`). Bus ids are stable integers; positions in solution vectors
come from `GridCase.index()`.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

GRIDCASE_SCHEMA = "gridcase-v1"


def canonical_dumps(obj) -> str:
    """Canonical JSON: sorted keys, no whitespace, round-trip float repr."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def fingerprint_of(obj) -> str:
    return hashlib.sha256(canonical_dumps(obj).encode()).hexdigest()


@dataclass
class Bus:
    id: int
    kv: float = 345.0
    kind: str = "transmission"  # "transmission" | "collector"


@dataclass
class Branch:
    id: str
    f: int
    t: int
    r: float
    x: float
    b: float = 0.0
    # Fixed off-nominal ratio on the from side; 0 means nominal (1.0).
    ratio: float = 0.0
    status: bool = True
    kind: str = "line"  # "line" | "transformer" | "gsu" | "mesh"
    # Step-up tap bookkeeping (gsu branches only); effective ratio is
    # n_nom * (1 + alpha * k_tap), frozen after case construction.
    n_nom: float = 1.0
    alpha: float = 0.0125
    k_tap: int = 0
    k_min: int = -10
    k_max: int = 10

    def effective_ratio(self) -> float:
        if self.kind == "gsu":
            return self.n_nom * (1.0 + self.alpha * self.k_tap)
        return self.ratio if self.ratio else 1.0


@dataclass
class Load:
    id: str
    bus: int
    p_nom: float
    q_nom: float
    # ZIP shares, summing to 1; applied to both P and Q.
    z: float = 0.0
    i: float = 0.0
    p: float = 1.0
    # Remaining fraction after shedding (UFLS or manual), per component.
    scale_p: float = 1.0
    scale_q: float = 1.0
    sheddable: bool = True


@dataclass
class AvrConfig:
    mode: str = "droop"  # "droop" | "deadband"
    v_ref: float = 1.0
    k_q: float = 0.05  # droop slope, pu voltage per pu reactive
    tau: float = 0.5  # response lag; deadband acts without one by default
    band_lo: float = 1.0125
    band_hi: float = 1.025
    q_lim: float = 0.5  # pu on machine rating, response ceiling
    ramp_mvar_s: Optional[float] = None  # None = unlimited


@dataclass
class Machine:
    id: str
    bus: int
    s_n: float  # MVA rating
    p_set: float  # pu on system base
    v_set: float = 1.0
    h: float = 2.5  # s, on s_n
    d: float = 1.0  # pu on s_n
    x_d: float = 0.30  # transient reactance, pu on s_n
    q_min: float = -0.6  # pu on s_n
    q_max: float = 0.6
    avr: AvrConfig = field(default_factory=AvrConfig)
    is_slack: bool = False
    is_external: bool = False  # aggregated neighbour grid: excluded from the
    # domestic frequency COI and from fleet-wide AVR experiments

    def x_sys(self, s_base: float) -> float:
        return self.x_d * s_base / self.s_n


@dataclass
class IbrGroup:
    id: str
    bus: int  # collector bus
    p_set: float
    q_set: float = 0.0
    online: bool = True
    # volt-var curve: q = q_set - vv_k * (v - vv_ref), clipped to +-vv_lim.
    # vv_k == 0 keeps the park at constant power factor.
    vv_k: float = 0.0
    vv_ref: float = 1.0
    vv_lim: float = 0.0


@dataclass
class ShuntReactor:
    id: str
    bus: int
    b_sh: float  # pu; absorbs b_sh * v^2
    online: bool = True
    operator_switchable: bool = False


@dataclass
class HvdcLink:
    """Export link drawing p_set at terminal_a.

    The shipped power leaves the modeled system; terminal_b only supplies the
    far-area angle for the PMODE3 feedback (the stock case's aggregated
    external-equivalent bus stands in for the receiving area).
    """

    id: str
    terminal_a: int
    terminal_b: int
    mode: str = "PMODE3"  # "PMODE1" | "PMODE3"
    p_ref: float = 10.0  # pu export target (PMODE1)
    p0: float = 10.0  # pu schedule anchor (PMODE3)
    k: float = 2.0  # pu per rad (PMODE3)
    t_resp: float = 0.5  # s (PMODE3); PMODE1 tracks p_ref at t_track
    t_track: float = 0.05


@dataclass
class OvervoltageRelay:
    id: str
    bus: int  # monitored (collector) bus
    threshold: float
    dwell: float = 0.2


@dataclass
class UflsStage:
    freq_hz: float
    fraction: float


@dataclass
class UflsScheme:
    stages: list[UflsStage] = field(
        default_factory=lambda: [
            UflsStage(49.0, 0.10),
            UflsStage(48.7, 0.10),
            UflsStage(48.4, 0.15),
        ]
    )
    policy: str = "conventional"  # "conventional" | "voltage_aware"


@dataclass
class Collector:
    """Ties a plant's pieces together so a trip removes them as one unit."""

    id: str
    bus: int
    host_bus: int
    gsu_branch: str
    ibr: str
    reactor: str
    relay: str
    tripped: bool = False


@dataclass
class GridCase:
    s_base: float = 100.0
    f0: float = 50.0
    slack_bus: int = 31
    buses: list[Bus] = field(default_factory=list)
    branches: list[Branch] = field(default_factory=list)
    loads: list[Load] = field(default_factory=list)
    machines: list[Machine] = field(default_factory=list)
    ibr_groups: list[IbrGroup] = field(default_factory=list)
    reactors: list[ShuntReactor] = field(default_factory=list)
    hvdc: list[HvdcLink] = field(default_factory=list)
    relays: list[OvervoltageRelay] = field(default_factory=list)
    collectors: list[Collector] = field(default_factory=list)
    ufls: UflsScheme = field(default_factory=UflsScheme)
    # Extra fixed bus injections (pu), e.g. screening disturbances.
    p_extra: dict[int, float] = field(default_factory=dict)
    q_extra: dict[int, float] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def index(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    def n_bus(self) -> int:
        return len(self.buses)

    def bus(self, bus_id: int) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(f"no bus {bus_id}")

    def branch(self, branch_id: str) -> Branch:
        for br in self.branches:
            if br.id == branch_id:
                return br
        raise KeyError(f"no branch {branch_id}")

    def reactor(self, reactor_id: str) -> ShuntReactor:
        for r in self.reactors:
            if r.id == reactor_id:
                return r
        raise KeyError(f"no reactor {reactor_id}")

    def machine(self, machine_id: str) -> Machine:
        for m in self.machines:
            if m.id == machine_id:
                return m
        raise KeyError(f"no machine {machine_id}")

    def collector(self, collector_id: str) -> Collector:
        for c in self.collectors:
            if c.id == collector_id:
                return c
        raise KeyError(f"no collector {collector_id}")

    def copy(self) -> "GridCase":
        return copy.deepcopy(self)

    def transmission_bus_ids(self) -> list[int]:
        return [b.id for b in self.buses if b.kind == "transmission"]

    def to_dict(self) -> dict:
        def plain(obj):
            if isinstance(obj, list):
                return [plain(o) for o in obj]
            if hasattr(obj, "__dataclass_fields__"):
                return {f.name: plain(getattr(obj, f.name)) for f in fields(obj)}
            return obj

        lines = [br for br in self.branches if br.kind in ("line", "mesh")]
        xfmrs = [br for br in self.branches if br.kind not in ("line", "mesh")]
        d = {
            "schema": GRIDCASE_SCHEMA,
            "s_base": self.s_base,
            "f0": self.f0,
            "slack_bus": self.slack_bus,
            "buses": plain(self.buses),
            "branches": plain(lines),
            "transformers": plain(xfmrs),
            "loads": plain(self.loads),
            "generators": plain(self.machines),
            "ibr_groups": plain(self.ibr_groups),
            "reactors": plain(self.reactors),
            "hvdc": plain(self.hvdc),
            "relays": plain(self.relays),
            "collectors": plain(self.collectors),
            "ufls": plain(self.ufls),
            "p_extra": {str(k): v for k, v in sorted(self.p_extra.items())},
            "q_extra": {str(k): v for k, v in sorted(self.q_extra.items())},
            "meta": self.meta,
        }
        return d

    @staticmethod
    def from_dict(d: dict) -> "GridCase":
        if d.get("schema") != GRIDCASE_SCHEMA:
            raise ValueError(f"unsupported case schema: {d.get('schema')!r}")
        case = GridCase(
            s_base=d["s_base"],
            f0=d["f0"],
            slack_bus=d["slack_bus"],
            buses=[Bus(**b) for b in d["buses"]],
            branches=[Branch(**b) for b in d["branches"]]
            + [Branch(**b) for b in d.get("transformers", [])],
            loads=[Load(**b) for b in d["loads"]],
            machines=[
                Machine(**{**m, "avr": AvrConfig(**m["avr"])}) for m in d["generators"]
            ],
            ibr_groups=[IbrGroup(**g) for g in d["ibr_groups"]],
            reactors=[ShuntReactor(**r) for r in d["reactors"]],
            hvdc=[HvdcLink(**h) for h in d["hvdc"]],
            relays=[OvervoltageRelay(**r) for r in d["relays"]],
            collectors=[Collector(**c) for c in d["collectors"]],
            ufls=UflsScheme(
                stages=[UflsStage(**s) for s in d["ufls"]["stages"]],
                policy=d["ufls"]["policy"],
            ),
            p_extra={int(k): v for k, v in d.get("p_extra", {}).items()},
            q_extra={int(k): v for k, v in d.get("q_extra", {}).items()},
            meta=d.get("meta", {}),
        )
        return case

    def fingerprint(self) -> str:
        return fingerprint_of(self.to_dict())


def save_case(case: GridCase, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(case.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_case(path: str) -> GridCase:
    with open(path) as fh:
        return GridCase.from_dict(json.load(fh))


def assemble_admittance(case: GridCase) -> np.ndarray:
    """Dense complex bus admittance matrix in case bus order.

    Pi-model branches; an off-nominal ratio a on the from side contributes
    (y + jb/2)/a^2 to the from diagonal and -y/a to both off-diagonals, so the
    matrix stays symmetric for real taps. Online shunt reactors add -j*b_sh.
    """
    idx = case.index()
    n = case.n_bus()
    y = np.zeros((n, n), dtype=complex)
    for br in case.branches:
        if not br.status:
            continue
        i, j = idx[br.f], idx[br.t]
        ys = 1.0 / complex(br.r, br.x)
        ysh = 0.5j * br.b
        a = br.effective_ratio()
        y[i, i] += (ys + ysh) / (a * a)
        y[j, j] += ys + ysh
        y[i, j] -= ys / a
        y[j, i] -= ys / a
    for r in case.reactors:
        if r.online:
            k = idx[r.bus]
            y[k, k] += -1j * r.b_sh
    return y


def collector_voltage(v_transmission: float, gsu: Branch) -> float:
    """Ideal collector-side magnitude through the frozen step-up tap."""
    return v_transmission / (gsu.n_nom * (1.0 + gsu.alpha * gsu.k_tap))


def apply_topology_action(case: GridCase, action: str, **params) -> GridCase:
    """Return a new case with one topology edit applied.

    Actions: MeshLine {branch} (mesh candidates only), OpenLine {branch},
    OpenReactor / CloseReactor {reactor}, TripDevice {device: collector id}.
    A target already in the requested status raises: that is an operator
    double-command, not a no-op.
    """
    new = case.copy()
    if action == "MeshLine":
        br = new.branch(params["branch"])
        if br.kind != "mesh":
            raise ValueError(f"{br.id} is not a mesh candidate")
        if br.status:
            raise ValueError(f"{br.id} already closed")
        br.status = True
    elif action == "OpenLine":
        br = new.branch(params["branch"])
        if not br.status:
            raise ValueError(f"{br.id} already open")
        br.status = False
    elif action == "OpenReactor":
        r = new.reactor(params["reactor"])
        if not r.operator_switchable:
            raise ValueError(f"{r.id} is not operator switchable")
        if not r.online:
            raise ValueError(f"{r.id} already offline")
        r.online = False
    elif action == "CloseReactor":
        r = new.reactor(params["reactor"])
        if not r.operator_switchable:
            raise ValueError(f"{r.id} is not operator switchable")
        if r.online:
            raise ValueError(f"{r.id} already online")
        r.online = True
    elif action == "TripDevice":
        coll = new.collector(params["device"])
        if coll.tripped:
            raise ValueError(f"{coll.id} already tripped")
        coll.tripped = True
        new.branch(coll.gsu_branch).status = False
        new.reactor(coll.reactor).online = False
        for g in new.ibr_groups:
            if g.id == coll.ibr:
                g.online = False
    else:
        raise ValueError(f"unknown topology action {action!r}")
    return new


def build_case39(cfg=None) -> GridCase:
    """Augmented 39-bus case; see case39.CaseConfig for the knobs."""
    from .case39 import build_case39 as _build

    return _build(cfg)
