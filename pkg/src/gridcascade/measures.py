"""Operator decision-support measures built on the cascade engine.

Three tools with one common question behind them: before committing a
switching action, does the system keep enough reactive room to ride out a
standardized disturbance without waking the collector relays?

- :func:`verify_margin` answers it with a linearized feasibility check
  (fast, advisory near the stability boundary).
- :func:`meshing_screen` answers it with full nonlinear simulation and a
  bisection on the disturbance size (slow, trustworthy by construction).
- :func:`compare_ufls_policies` runs the same incident under both load
  shedding policies and reports which one keeps voltages lower.

Sign convention throughout: reactive quantities are absorption deltas,
matching :func:`gridcascade.powerflow.voltage_sensitivity`. A negative
entry means absorption was lost (a net reactive surplus appears) and
voltages rise. Scenario-level ``InjectQDisturbance`` uses the opposite,
injection-positive convention; the bisection helpers translate.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import linprog

from .netmodel import GridCase
from .powerflow import COND_LIMIT, jacobian_blocks, solve_pf
from .protection import TRANSMISSION_OV_LIMIT
from .simengine import ScenarioEvent, SimConfig, SimTrace, init_state, run_scenario
from .simengine import _execute_action

log = logging.getLogger("gridcascade.measures")

TopologyAction = ScenarioEvent

# device response window for the feasibility check; the linearization is
# only trusted over a horizon where angles barely move
DEFAULT_HORIZON_S = 2.0

# bisection defaults: collector reactors are worth 150-200 MVAr each, so
# an 800 MVAr bracket saturates only on genuinely unconstrained cases
SCREEN_UPPER_MVAR = 800.0
SCREEN_RESOLUTION_MVAR = 5.0
SCREEN_MAX_ITER = 12

_BIND_TOL = 1e-7


@dataclass
class MarginVerdict:
    """Outcome of the linearized reactive-dispatch feasibility check."""

    feasible: bool
    binding: list[str]
    slack: Optional[float]
    cond: float
    ill_conditioned: bool
    cause: Optional[str] = None
    best_dispatch: list[dict[str, float]] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "binding": list(self.binding),
            "slack": self.slack,
            "cond": self.cond,
            "ill_conditioned": self.ill_conditioned,
            "cause": self.cause,
            "best_dispatch": [dict(d) for d in self.best_dispatch],
            "metadata": dict(self.metadata),
        }


@dataclass
class RecoveryMargin:
    """Largest standardized absorption loss survived without a relay trip."""

    candidate_id: str
    probe_bus: int
    margin_mvar: float
    horizon_s: float
    bracket_low: float
    bracket_high: float
    iterations: int
    saturated: bool = False
    cause: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "candidate_id": self.candidate_id,
            "probe_bus": self.probe_bus,
            "margin_mvar": self.margin_mvar,
            "horizon_s": self.horizon_s,
            "bracket_low": self.bracket_low,
            "bracket_high": self.bracket_high,
            "iterations": self.iterations,
            "saturated": self.saturated,
            "cause": self.cause,
        }


@dataclass
class PolicyComparison:
    """Paired-run comparison of the two load shedding policies."""

    traces: dict[str, SimTrace]
    summary: dict[str, dict]

    def to_dict(self) -> dict:
        return {"summary": {k: dict(v) for k, v in self.summary.items()}}


def default_voltage_bounds(
    case: GridCase, *, lo: float = 0.9, tx_hi: float = TRANSMISSION_OV_LIMIT
) -> dict[int, tuple[float, float]]:
    """Acceptable voltage intervals: relay settings where relays exist."""
    bounds = {bid: (lo, tx_hi) for bid in case.transmission_bus_ids()}
    for relay in case.relays:
        bounds[relay.bus] = (lo, relay.threshold)
    return bounds


def _as_actions(action) -> list[ScenarioEvent]:
    if action is None:
        return []
    if isinstance(action, ScenarioEvent):
        return [action]
    return list(action)


def _apply_static(case: GridCase, actions: Sequence[ScenarioEvent]):
    """Apply actions to a case copy outside any run and re-solve.

    Returns (case copy, solution or None). Event times are ignored; the
    caller is asking about the end state, not the path.
    """
    work = case.copy()
    try:
        state = init_state(work)
    except ValueError:
        return work, None
    for ev in actions:
        _execute_action(work, state, ev)
    sol = solve_pf(work, v0=state.v, theta0=state.theta)
    if not sol.converged:
        return work, None
    return work, sol


def verify_margin(
    case: GridCase,
    action: Union[None, ScenarioEvent, Sequence[ScenarioEvent]] = None,
    disturbances: Sequence[dict[int, float]] = (),
    bounds: Optional[dict[int, tuple[float, float]]] = None,
    *,
    horizon_s: float = DEFAULT_HORIZON_S,
) -> MarginVerdict:
    """Can the fleet re-dispatch vars to hold voltages through each disturbance?

    The candidate action is applied to a copy and the network re-solved and
    re-linearized there. For every disturbance (bus -> MVAr absorption
    delta, negative = absorption lost) a linear program searches for a
    machine reactive dispatch, limited by remaining capability and by what
    each AVR can slew within the horizon, that keeps every bounded bus
    voltage inside its interval under the linearized response. Feasible
    means every disturbance admits such a dispatch.

    The verdict is advisory when the reduced Jacobian is ill-conditioned:
    near the nose the linear map is not trustworthy either way.
    """
    actions = _as_actions(action)
    work, sol = _apply_static(case, actions)
    if sol is None:
        return MarginVerdict(
            feasible=False,
            binding=[],
            slack=None,
            cond=float("inf"),
            ill_conditioned=True,
            cause="post-action infeasible",
            metadata={"linearization": "post-action", "horizon_s": horizon_s},
        )
    blocks = jacobian_blocks(work, sol)
    q_rows = blocks.q_rows
    row_of = {bid: i for i, bid in enumerate(q_rows)}
    idx = work.index()
    sb = work.s_base

    schur = blocks.j_qv - blocks.j_qth @ np.linalg.solve(blocks.j_pth, blocks.j_pv)
    cond = float(np.linalg.cond(schur))
    sens = -np.linalg.inv(schur)  # dv = sens @ (absorption delta, pu)

    # dispatchable fleet: domestic machines, each bounded by remaining
    # capability and by ramp * horizon (or the full command limit when the
    # AVR has no ramp cap configured)
    devs = []
    for m in work.machines:
        if m.is_external:
            continue
        q_now = sol.machine_q.get(m.id)
        if q_now is None:
            continue
        q_lo = m.q_min * m.s_n / sb
        q_hi = m.q_max * m.s_n / sb
        if m.avr.ramp_mvar_s is not None:
            resp = m.avr.ramp_mvar_s * horizon_s / sb
        else:
            resp = m.avr.q_lim * m.s_n / sb
        # x > 0 means the machine absorbs more (its injection drops)
        x_hi = min(max(q_now - q_lo, 0.0), resp)
        x_lo = -min(max(q_hi - q_now, 0.0), resp)
        devs.append((m.id, idx[m.bus], x_lo, x_hi))

    col = np.zeros((len(q_rows), len(devs)))
    for j, (_, pos, _, _) in enumerate(devs):
        bid = work.buses[pos].id
        if bid in row_of:
            col[row_of[bid], j] = 1.0
    resp_mat = sens @ col

    bnds = default_voltage_bounds(work) if bounds is None else bounds
    rows = [(bid, *bnds[bid]) for bid in q_rows if bid in bnds]
    v0 = np.array([sol.v[idx[bid]] for bid, _, _ in rows])
    sel = [row_of[bid] for bid, _, _ in rows]

    dist_list = list(disturbances) if disturbances else [{}]
    feasible = True
    slack_all: Optional[float] = None
    binding: list[str] = []
    dispatches: list[dict[str, float]] = []
    for dist in dist_list:
        dvec = np.zeros(len(q_rows))
        for bus, mvar in dist.items():
            if bus in row_of:
                dvec[row_of[bus]] = mvar / sb
            # absorption deltas at regulated buses are soaked locally by
            # the regulating machine; they do not enter the reduced map
        base = v0 + (sens @ dvec)[sel]
        n_x = len(devs)
        # maximize the worst-case distance s to any bound:
        #   lo + s <= v0 + R x <= hi - s
        a_ub = np.zeros((2 * len(rows), n_x + 1))
        b_ub = np.zeros(2 * len(rows))
        for i, (bid, lo, hi) in enumerate(rows):
            a_ub[2 * i, :n_x] = -resp_mat[sel[i]]
            a_ub[2 * i, n_x] = 1.0
            b_ub[2 * i] = base[i] - lo
            a_ub[2 * i + 1, :n_x] = resp_mat[sel[i]]
            a_ub[2 * i + 1, n_x] = 1.0
            b_ub[2 * i + 1] = hi - base[i]
        c = np.zeros(n_x + 1)
        c[n_x] = -1.0
        lp_bounds = [(x_lo, x_hi) for _, _, x_lo, x_hi in devs] + [(None, None)]
        res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=lp_bounds, method="highs")
        if not res.success:  # pragma: no cover - s is free, LP always solvable
            raise RuntimeError(f"margin LP failed: {res.message}")
        s_opt = float(-res.fun)
        x_opt = res.x[:n_x]
        dispatches.append(
            {devs[j][0]: float(x_opt[j] * sb) for j in range(n_x) if abs(x_opt[j]) > 1e-12}
        )
        if s_opt < -_BIND_TOL:
            feasible = False
        slack_all = s_opt if slack_all is None else min(slack_all, s_opt)
        if s_opt < _BIND_TOL:
            v_new = base + resp_mat[sel] @ x_opt
            for i, (bid, lo, hi) in enumerate(rows):
                if v_new[i] - lo < _BIND_TOL or hi - v_new[i] < _BIND_TOL:
                    tag = f"bus:{bid}"
                    if tag not in binding:
                        binding.append(tag)
            for j, (mid, _, x_lo, x_hi) in enumerate(devs):
                if min(x_opt[j] - x_lo, x_hi - x_opt[j]) < 1e-9:
                    tag = f"device:{mid}"
                    if tag not in binding:
                        binding.append(tag)
    return MarginVerdict(
        feasible=feasible,
        binding=binding,
        slack=slack_all,
        cond=cond,
        ill_conditioned=cond > COND_LIMIT,
        best_dispatch=dispatches,
        metadata={
            "linearization": "post-action",
            "horizon_s": horizon_s,
            "n_devices": len(devs),
            "n_disturbances": len(dist_list),
        },
    )


def _mesh_case(case: GridCase, candidate) -> tuple[GridCase, Optional[object], str]:
    # candidate None screens the case as-is, giving the pre-mesh baseline
    if candidate is None:
        work, sol = _apply_static(case, [])
        return work, sol, "baseline"
    if isinstance(candidate, ScenarioEvent):
        branch_id = candidate.params["branch"]
    else:
        branch_id = str(candidate)
    ev = ScenarioEvent(0.0, "MeshLine", {"branch": branch_id})
    work, sol = _apply_static(case, [ev])
    return work, sol, branch_id


def disturbance_survives(
    case: GridCase,
    probe_bus: int,
    mvar: float,
    horizon_s: float,
    config: SimConfig,
) -> bool:
    """Nonlinear oracle: step absorption loss at the probe, watch the relays.

    Survival means the run completes the horizon with no collector relay
    trip. InjectQDisturbance is injection-positive, so an absorption loss
    of ``mvar`` enters with a positive sign.
    """
    events = [ScenarioEvent(0.0, "InjectQDisturbance", {"bus": probe_bus, "mvar": mvar})]
    cfg = SimConfig(dt=config.dt, t_end=horizon_s, pf_tol=config.pf_tol, seed=config.seed)
    tr = run_scenario(case, events, cfg)
    return tr.status == "completed" and not tr.trips("collector")


def meshing_screen(
    case: GridCase,
    candidate,
    horizon_s: float,
    probe_bus: int,
    config: SimConfig,
    *,
    upper_mvar: float = SCREEN_UPPER_MVAR,
    resolution_mvar: float = SCREEN_RESOLUTION_MVAR,
    max_iter: int = SCREEN_MAX_ITER,
) -> RecoveryMargin:
    """Post-mesh recovery margin by bisection on disturbance size.

    The candidate branch is closed on a copy, then the margin is the
    largest standardized absorption loss at the probe bus that the full
    nonlinear simulation rides out over the horizon without any collector
    relay trip. Bisection runs to the stated resolution or iteration cap;
    a surviving upper bracket reports as saturated.
    """
    work, sol, branch_id = _mesh_case(case, candidate)
    if sol is None:
        return RecoveryMargin(
            candidate_id=branch_id,
            probe_bus=probe_bus,
            margin_mvar=0.0,
            horizon_s=horizon_s,
            bracket_low=0.0,
            bracket_high=0.0,
            iterations=0,
            cause="post-mesh power flow failed",
        )
    if not disturbance_survives(work, probe_bus, 0.0, horizon_s, config):
        return RecoveryMargin(
            candidate_id=branch_id,
            probe_bus=probe_bus,
            margin_mvar=0.0,
            horizon_s=horizon_s,
            bracket_low=0.0,
            bracket_high=0.0,
            iterations=0,
            cause="relay trip with no disturbance",
        )
    lo, hi = 0.0, float(upper_mvar)
    if disturbance_survives(work, probe_bus, hi, horizon_s, config):
        return RecoveryMargin(
            candidate_id=branch_id,
            probe_bus=probe_bus,
            margin_mvar=hi,
            horizon_s=horizon_s,
            bracket_low=hi,
            bracket_high=hi,
            iterations=0,
            saturated=True,
        )
    iters = 0
    while hi - lo > resolution_mvar and iters < max_iter:
        mid = 0.5 * (lo + hi)
        if disturbance_survives(work, probe_bus, mid, horizon_s, config):
            lo = mid
        else:
            hi = mid
        iters += 1
    log.debug(
        "meshing screen %s probe %s: margin %.1f MVAr in %d iterations",
        branch_id,
        probe_bus,
        lo,
        iters,
    )
    return RecoveryMargin(
        candidate_id=branch_id,
        probe_bus=probe_bus,
        margin_mvar=lo,
        horizon_s=horizon_s,
        bracket_low=lo,
        bracket_high=hi,
        iterations=iters,
    )


def _screen_job(args) -> dict:
    case, candidate, probe, horizon_s, config = args
    return meshing_screen(case, candidate, horizon_s, probe, config).to_dict()


def margin_table(
    case: GridCase,
    candidates: Sequence[str],
    probe_buses: Sequence[int],
    horizon_s: float,
    config: SimConfig,
    *,
    workers: int = 1,
) -> list[dict]:
    """Sweep (candidate, probe) pairs into lookup-table rows.

    Rows come back sorted by (candidate_id, probe_bus) regardless of
    worker scheduling, so the table is deterministic.
    """
    jobs = [
        (case, cand, probe, horizon_s, config)
        for cand in candidates
        for probe in probe_buses
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_screen_job, jobs))
    else:
        rows = [_screen_job(j) for j in jobs]
    rows.sort(key=lambda r: (r["candidate_id"], r["probe_bus"]))
    return rows


def compare_ufls_policies(
    case: GridCase,
    events: Sequence[ScenarioEvent],
    config: SimConfig,
) -> PolicyComparison:
    """Run the incident under both shedding policies and compare voltages.

    Peak voltage is measured over transmission buses from the first
    shedding action onward; a run that never sheds reports no peak.
    """
    traces: dict[str, SimTrace] = {}
    summary: dict[str, dict] = {}
    for policy in ("conventional", "voltage_aware"):
        work = case.copy()
        work.ufls.policy = policy
        tr = run_scenario(work, list(events), config)
        traces[policy] = tr
        ufls = tr.trips("ufls")
        peak = None
        if ufls:
            t0 = min(e["time"] for e in ufls)
            post = [r for r in tr.records if r["t"] >= t0 - 1e-9]
            peak = max(tr.max_transmission_v(r) for r in post) if post else None
        summary[policy] = {
            "status": tr.status,
            "peak_post_ufls_v": peak,
            "shed_mw": sum(e.get("removed_p_mw", 0.0) for e in ufls),
            "ufls_stages": len(ufls),
        }
    return PolicyComparison(traces=traces, summary=summary)


__all__ = [
    "MarginVerdict",
    "PolicyComparison",
    "RecoveryMargin",
    "TopologyAction",
    "compare_ufls_policies",
    "default_voltage_bounds",
    "disturbance_survives",
    "margin_table",
    "meshing_screen",
    "verify_margin",
]
