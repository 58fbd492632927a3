"""AC power flow and small-signal operations on a GridCase.

Residual convention throughout: F = calculated - specified. Jacobian blocks
are derivatives of that residual, so J_QV carries a positive diagonal on
inductive networks and the reduced sensitivity maps added absorption (dq > 0)
to a voltage drop, dv = -S^-1 dq.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .netmodel import GridCase, assemble_admittance

log = logging.getLogger("gridcascade.powerflow")

PF_TOL = 1e-8
PF_MAX_ITER = 20
COND_LIMIT = 1e8


@dataclass
class PowerFlowSolution:
    converged: bool
    v: np.ndarray
    theta: np.ndarray
    p_calc: np.ndarray
    q_calc: np.ndarray
    iterations: int
    max_mismatch: float
    bus_ids: list[int]
    pq_buses: list[int]
    pv_buses: list[int]
    slack_bus: int
    machine_q: dict[str, float] = field(default_factory=dict)
    machine_p: dict[str, float] = field(default_factory=dict)
    pv_to_pq: list[int] = field(default_factory=list)
    energized: Optional[np.ndarray] = None  # False rows are de-energized islands

    def v_at(self, bus_id: int) -> float:
        return float(self.v[self.bus_ids.index(bus_id)])


def device_injections(case: GridCase, v: np.ndarray, hvdc_p: Optional[dict] = None):
    """Non-machine device injections and their magnitude derivatives.

    Returns (p, q, dp_dv, dq_dv) as per-bus arrays; derivative arrays are the
    diagonal d(spec)/dv terms. Shunt reactors live in the admittance matrix,
    not here.
    """
    idx = case.index()
    n = case.n_bus()
    p = np.zeros(n)
    q = np.zeros(n)
    dp = np.zeros(n)
    dq = np.zeros(n)
    for ld in case.loads:
        k = idx[ld.bus]
        vk = v[k]
        shape = ld.z * vk * vk + ld.i * vk + ld.p
        dshape = 2.0 * ld.z * vk + ld.i
        p[k] -= ld.p_nom * ld.scale_p * shape
        q[k] -= ld.q_nom * ld.scale_q * shape
        dp[k] -= ld.p_nom * ld.scale_p * dshape
        dq[k] -= ld.q_nom * ld.scale_q * dshape
    for g in case.ibr_groups:
        if g.online:
            k = idx[g.bus]
            p[k] += g.p_set
            qv = g.q_set
            if g.vv_k > 0.0:
                raw = -g.vv_k * (v[k] - g.vv_ref)
                if raw > g.vv_lim:
                    qv += g.vv_lim
                elif raw < -g.vv_lim:
                    qv -= g.vv_lim
                else:
                    qv += raw
                    dq[k] -= g.vv_k
            q[k] += qv
    for link in case.hvdc:
        # export leaves at the sending terminal; the far area is outside
        k = idx[link.terminal_a]
        if hvdc_p is not None and link.id in hvdc_p:
            p[k] -= hvdc_p[link.id]
        else:
            p[k] -= link.p_ref
    for bus, val in case.p_extra.items():
        p[idx[bus]] += val
    for bus, val in case.q_extra.items():
        q[idx[bus]] += val
    return p, q, dp, dq


def _machine_limits(case: GridCase):
    """Per-bus aggregated machine reactive limits in system pu."""
    qmin: dict[int, float] = {}
    qmax: dict[int, float] = {}
    for m in case.machines:
        s = m.s_n / case.s_base
        qmin[m.bus] = qmin.get(m.bus, 0.0) + m.q_min * s
        qmax[m.bus] = qmax.get(m.bus, 0.0) + m.q_max * s
    return qmin, qmax


def energized_mask(case: GridCase) -> np.ndarray:
    """Buses with a live branch path to the slack.

    Opening a plant's step-up transformer strands its collector bus; a
    stranded bus carries no equations and reads 0 pu (de-energized).
    """
    idx = case.index()
    adj: dict[int, list[int]] = {b.id: [] for b in case.buses}
    for br in case.branches:
        if br.status:
            adj[br.f].append(br.t)
            adj[br.t].append(br.f)
    seen = {case.slack_bus}
    stack = [case.slack_bus]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    mask = np.zeros(case.n_bus(), dtype=bool)
    for bid in seen:
        mask[idx[bid]] = True
    return mask


def solve_pf(
    case: GridCase,
    *,
    v0: Optional[np.ndarray] = None,
    theta0: Optional[np.ndarray] = None,
    tol: float = PF_TOL,
    max_iter: int = PF_MAX_ITER,
    enforce_q_limits: bool = True,
    ybus: Optional[np.ndarray] = None,
) -> PowerFlowSolution:
    """Newton power flow with PV/PQ/slack bookkeeping and Q-limit switching."""
    idx = case.index()
    bus_ids = [b.id for b in case.buses]
    n = case.n_bus()
    y = assemble_admittance(case) if ybus is None else ybus
    g = np.ascontiguousarray(y.real)
    b = np.ascontiguousarray(y.imag)
    alive = energized_mask(case)

    machine_buses = sorted({m.bus for m in case.machines if alive[idx[m.bus]]})
    if case.slack_bus not in machine_buses:
        raise ValueError("slack bus has no machine")
    v_set = {m.bus: m.v_set for m in case.machines}
    p_mach = np.zeros(n)
    for m in case.machines:
        if not m.is_slack and m.bus != case.slack_bus:
            p_mach[idx[m.bus]] += m.p_set
    qmin_bus, qmax_bus = _machine_limits(case)

    if v0 is None and enforce_q_limits:
        # cold starts go through the unconstrained profile first; switching
        # straight from flat start picks solution branches erratically
        warm = solve_pf(
            case, tol=tol, max_iter=max_iter, enforce_q_limits=False, ybus=y
        )
        if warm.converged:
            v0, theta0 = warm.v, warm.theta

    v = np.ones(n) if v0 is None else v0.copy()
    theta = np.zeros(n) if theta0 is None else theta0.copy()
    if v0 is None:
        for bus, vs in v_set.items():
            v[idx[bus]] = vs

    v[~alive] = 0.0
    theta[~alive] = 0.0

    slack = idx[case.slack_bus]
    pv = [idx[bid] for bid in machine_buses if bid != case.slack_bus]
    pq = [k for k in range(n) if k != slack and k not in pv and alive[k]]
    limited_q: dict[int, float] = {}  # bus pos -> fixed machine Q (pu)
    pv_to_pq: list[int] = []

    def newton(pv_set, pq_set):
        nonlocal v, theta
        p_rows = [k for k in range(n) if k != slack and alive[k]]
        q_rows = list(pq_set)
        iters = 0
        mis = np.inf
        for iters in range(max_iter + 1):
            p_dev, q_dev, dp_dev, dq_dev = device_injections(case, v)
            p_spec = p_dev + p_mach
            q_spec = q_dev.copy()
            for pos, qfix in limited_q.items():
                p_spec[pos] = p_dev[pos] + p_mach[pos]
                q_spec[pos] = q_dev[pos] + qfix
            p_calc, q_calc = kernels.calc_injections(g, b, v, theta)
            f_p = p_calc[p_rows] - p_spec[p_rows]
            f_q = q_calc[q_rows] - q_spec[q_rows]
            mis = max(
                np.max(np.abs(f_p)) if p_rows else 0.0,
                np.max(np.abs(f_q)) if q_rows else 0.0,
            )
            if mis < tol:
                return True, iters, mis
            if iters == max_iter:
                return False, iters, mis
            dp_dth, dp_dv, dq_dth, dq_dv = kernels.calc_jacobian(
                g, b, v, theta, p_calc, q_calc
            )
            # residual derivative: subtract the spec-side magnitude terms
            dp_dv = dp_dv - np.diag(dp_dev)
            dq_dv = dq_dv - np.diag(dq_dev)
            top = np.hstack(
                [dp_dth[np.ix_(p_rows, p_rows)], dp_dv[np.ix_(p_rows, q_rows)]]
            )
            bot = np.hstack(
                [dq_dth[np.ix_(q_rows, p_rows)], dq_dv[np.ix_(q_rows, q_rows)]]
            )
            jac = np.vstack([top, bot])
            try:
                dx = np.linalg.solve(jac, np.concatenate([f_p, f_q]))
            except np.linalg.LinAlgError:
                return False, iters, mis
            if not np.all(np.isfinite(dx)):
                return False, iters, mis
            d_th = dx[: len(p_rows)]
            d_v = dx[len(p_rows) :]
            step = 1.0
            if d_th.size and np.max(np.abs(d_th)) > 0.5:
                step = min(step, 0.5 / np.max(np.abs(d_th)))
            if d_v.size and np.max(np.abs(d_v)) > 0.1:
                step = min(step, 0.1 / np.max(np.abs(d_v)))
            # backtrack while the full step makes the residual worse; heavy
            # q-limited cases walk close to the nose where full Newton
            # overshoots into the infeasible branch
            theta_prev = theta.copy()
            v_prev = v.copy()
            for _ in range(5):
                theta[p_rows] = theta_prev[p_rows] - step * d_th
                v[q_rows] = v_prev[q_rows] - step * d_v
                p_try, q_try = kernels.calc_injections(g, b, v, theta)
                pd_try, qd_try, _, _ = device_injections(case, v)
                ps = pd_try + p_mach
                qs = qd_try.copy()
                for pos, qfix in limited_q.items():
                    qs[pos] = qd_try[pos] + qfix
                m_try = max(
                    np.max(np.abs(p_try[p_rows] - ps[p_rows])) if p_rows else 0.0,
                    np.max(np.abs(q_try[q_rows] - qs[q_rows])) if q_rows else 0.0,
                )
                if m_try <= mis or step < 0.05:
                    break
                step *= 0.5
        return False, iters, mis

    converged, iters, mis = newton(pv, pq)
    total_iters = iters

    if enforce_q_limits and converged:
        for _ in range(4 * len(machine_buses) + 4):
            p_calc, q_calc = kernels.calc_injections(g, b, v, theta)
            p_dev, q_dev, _, _ = device_injections(case, v)
            switched = False
            # clamp the single worst violator per pass; switching whole
            # fleets at once jumps too far from the warm point to recover
            worst_pos, worst_fix, worst_viol = -1, 0.0, 1e-7
            for pos in list(pv):
                bid = bus_ids[pos]
                q_gen = q_calc[pos] - q_dev[pos]
                if q_gen > qmax_bus[bid] + worst_viol:
                    worst_pos, worst_fix = pos, qmax_bus[bid]
                    worst_viol = q_gen - qmax_bus[bid]
                elif q_gen < qmin_bus[bid] - worst_viol:
                    worst_pos, worst_fix = pos, qmin_bus[bid]
                    worst_viol = qmin_bus[bid] - q_gen
            if worst_pos >= 0:
                limited_q[worst_pos] = worst_fix
                pv.remove(worst_pos)
                pq.append(worst_pos)
                pq.sort()
                pv_to_pq.append(bus_ids[worst_pos])
                switched = True
                log.debug(
                    "q-limit clamp bus %s at %.4f pu (violation %.4f)",
                    bus_ids[worst_pos], worst_fix, worst_viol,
                )
            # release cleanly when regulation would come back inside limits
            for pos in list(limited_q):
                bid = bus_ids[pos]
                at_max = limited_q[pos] == qmax_bus[bid]
                if (at_max and v[pos] > v_set[bid] + 1e-9) or (
                    not at_max and v[pos] < v_set[bid] - 1e-9
                ):
                    del limited_q[pos]
                    pq.remove(pos)
                    pv.append(pos)
                    pv.sort()
                    if bid in pv_to_pq:
                        pv_to_pq.remove(bid)
                    v[pos] = v_set[bid]
                    switched = True
            if not switched:
                break
            converged, iters, mis = newton(pv, pq)
            total_iters += iters
            if not converged:
                log.debug(
                    "q-limit re-solve diverged: %d clamped, mismatch %.3g",
                    len(limited_q), mis,
                )
                break

    p_calc, q_calc = kernels.calc_injections(g, b, v, theta)
    p_dev, q_dev, _, _ = device_injections(case, v)
    machine_q: dict[str, float] = {}
    machine_p: dict[str, float] = {}
    for m in case.machines:
        pos = idx[m.bus]
        machine_q[m.id] = float(q_calc[pos] - q_dev[pos])
        if m.bus == case.slack_bus:
            machine_p[m.id] = float(p_calc[pos] - p_dev[pos])
        else:
            machine_p[m.id] = m.p_set
    return PowerFlowSolution(
        converged=converged,
        v=v,
        theta=theta,
        p_calc=p_calc,
        q_calc=q_calc,
        iterations=total_iters,
        max_mismatch=float(mis),
        bus_ids=bus_ids,
        pq_buses=[bus_ids[k] for k in sorted(pq)],
        pv_buses=[bus_ids[k] for k in sorted(pv)],
        slack_bus=case.slack_bus,
        machine_q=machine_q,
        machine_p=machine_p,
        pv_to_pq=pv_to_pq,
        energized=alive,
    )


def _emf_spec(case: GridCase, v, theta, emf_e, emf_delta):
    """Machine internal-source injections and terminal derivatives.

    Returns (p, q, dp_dth, dp_dv, dq_dth, dq_dv) as per-bus arrays; the
    derivative arrays are diagonal terms at machine terminals.
    """
    from .devices import emf_injection, emf_terminal_jacobian

    idx = case.index()
    n = case.n_bus()
    p = np.zeros(n)
    q = np.zeros(n)
    dpt = np.zeros(n)
    dpv = np.zeros(n)
    dqt = np.zeros(n)
    dqv = np.zeros(n)
    for i, m in enumerate(case.machines):
        k = idx[m.bus]
        x = m.x_sys(case.s_base)
        pe, qe = emf_injection(emf_e[i], emf_delta[i], v[k], theta[k], x)
        a, bb, c, d = emf_terminal_jacobian(emf_e[i], emf_delta[i], v[k], theta[k], x)
        p[k] += pe
        q[k] += qe
        dpt[k] += a
        dpv[k] += bb
        dqt[k] += c
        dqv[k] += d
    return p, q, dpt, dpv, dqt, dqv


def solve_network(
    case: GridCase,
    v0: np.ndarray,
    theta0: np.ndarray,
    *,
    emf_e: np.ndarray,
    emf_delta: np.ndarray,
    hvdc_p: dict[str, float],
    tol: float = PF_TOL,
    max_iter: int = PF_MAX_ITER,
    ybus: Optional[np.ndarray] = None,
):
    """Algebraic network solve for the dynamic engine.

    Machines appear as internal sources (emf_e, emf_delta per machine, case
    order) behind their transient reactance, so both angle and magnitude are
    unknown at every bus; the source injections anchor the angles. Returns
    (v, theta, p_calc, q_calc, converged, iterations, mismatch).
    """
    y = assemble_admittance(case) if ybus is None else ybus
    g = np.ascontiguousarray(y.real)
    b = np.ascontiguousarray(y.imag)
    rows = np.flatnonzero(energized_mask(case))
    m = rows.size

    v = v0.copy()
    theta = theta0.copy()
    dead = np.ones(len(v), dtype=bool)
    dead[rows] = False
    v[dead] = 0.0
    theta[dead] = 0.0

    mis = np.inf
    for it in range(max_iter + 1):
        p_dev, q_dev, dp_dev, dq_dev = device_injections(case, v, hvdc_p=hvdc_p)
        pe, qe, dpt, dpv, dqt, dqv = _emf_spec(case, v, theta, emf_e, emf_delta)
        p_calc, q_calc = kernels.calc_injections(g, b, v, theta)
        f_p = (p_calc - (p_dev + pe))[rows]
        f_q = (q_calc - (q_dev + qe))[rows]
        mis = max(float(np.max(np.abs(f_p))), float(np.max(np.abs(f_q))))
        if mis < tol:
            return v, theta, p_calc, q_calc, True, it, mis
        if it == max_iter:
            return v, theta, p_calc, q_calc, False, it, mis
        dp_dth, dp_dv, dq_dth, dq_dv = kernels.calc_jacobian(
            g, b, v, theta, p_calc, q_calc
        )
        # residual derivative: subtract every spec-side dependence
        dp_dth = dp_dth - np.diag(dpt)
        dp_dv = dp_dv - np.diag(dp_dev + dpv)
        dq_dth = dq_dth - np.diag(dqt)
        dq_dv = dq_dv - np.diag(dq_dev + dqv)
        ij = np.ix_(rows, rows)
        jac = np.vstack(
            [np.hstack([dp_dth[ij], dp_dv[ij]]), np.hstack([dq_dth[ij], dq_dv[ij]])]
        )
        try:
            dx = np.linalg.solve(jac, np.concatenate([f_p, f_q]))
        except np.linalg.LinAlgError:
            return v, theta, p_calc, q_calc, False, it, mis
        if not np.all(np.isfinite(dx)):
            return v, theta, p_calc, q_calc, False, it, mis
        d_th = dx[:m]
        d_v = dx[m:]
        # clamp the update so topology shocks cannot overshoot into v<=0
        step = 1.0
        if np.max(np.abs(d_th)) > 0.5:
            step = min(step, 0.5 / float(np.max(np.abs(d_th))))
        if np.max(np.abs(d_v)) > 0.1:
            step = min(step, 0.1 / float(np.max(np.abs(d_v))))
        theta[rows] -= step * d_th
        v[rows] -= step * d_v
        if np.any(v[rows] <= 1e-3):
            return v, theta, p_calc, q_calc, False, it, mis
    return v, theta, p_calc, q_calc, False, max_iter, mis


@dataclass
class JacobianBlocks:
    """Residual-derivative blocks in solve_pf bookkeeping.

    P rows over non-slack buses, Q rows over PQ buses; theta columns over
    non-slack buses, magnitude columns over PQ buses.
    """

    j_pth: np.ndarray
    j_pv: np.ndarray
    j_qth: np.ndarray
    j_qv: np.ndarray
    p_rows: list[int]  # bus ids
    q_rows: list[int]


def jacobian_blocks(
    case: GridCase, sol: PowerFlowSolution, ybus: Optional[np.ndarray] = None
) -> JacobianBlocks:
    idx = case.index()
    y = assemble_admittance(case) if ybus is None else ybus
    g = np.ascontiguousarray(y.real)
    b = np.ascontiguousarray(y.imag)
    p_calc, q_calc = kernels.calc_injections(g, b, sol.v, sol.theta)
    dp_dth, dp_dv, dq_dth, dq_dv = kernels.calc_jacobian(
        g, b, sol.v, sol.theta, p_calc, q_calc
    )
    _, _, dp_dev, dq_dev = device_injections(case, sol.v)
    dp_dv = dp_dv - np.diag(dp_dev)
    dq_dv = dq_dv - np.diag(dq_dev)
    p_rows = [bid for bid in sol.bus_ids if bid != sol.slack_bus]
    q_rows = list(sol.pq_buses)
    pr = [idx[bid] for bid in p_rows]
    qr = [idx[bid] for bid in q_rows]
    return JacobianBlocks(
        j_pth=dp_dth[np.ix_(pr, pr)],
        j_pv=dp_dv[np.ix_(pr, qr)],
        j_qth=dq_dth[np.ix_(qr, pr)],
        j_qv=dq_dv[np.ix_(qr, qr)],
        p_rows=p_rows,
        q_rows=q_rows,
    )


def full_jacobian(
    case: GridCase,
    v: np.ndarray,
    theta: np.ndarray,
    *,
    hvdc_p: Optional[dict] = None,
    emf: Optional[tuple] = None,
    ybus: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Residual Jacobian over every bus: rows [P; Q], columns [theta; v].

    All device magnitude terms are folded in. Pass emf = (e, delta) arrays
    (machine order) to add the internal-source terminal terms the dynamic
    solve linearizes against; omit it for the static device set.
    """
    y = assemble_admittance(case) if ybus is None else ybus
    g = np.ascontiguousarray(y.real)
    b = np.ascontiguousarray(y.imag)
    p_calc, q_calc = kernels.calc_injections(g, b, v, theta)
    dp_dth, dp_dv, dq_dth, dq_dv = kernels.calc_jacobian(
        g, b, v, theta, p_calc, q_calc
    )
    _, _, dp_dev, dq_dev = device_injections(case, v, hvdc_p=hvdc_p)
    dp_dv = dp_dv - np.diag(dp_dev)
    dq_dv = dq_dv - np.diag(dq_dev)
    if emf is not None:
        e_arr, d_arr = emf
        _, _, dpt, dpv, dqt, dqv = _emf_spec(case, v, theta, e_arr, d_arr)
        dp_dth = dp_dth - np.diag(dpt)
        dp_dv = dp_dv - np.diag(dpv)
        dq_dth = dq_dth - np.diag(dqt)
        dq_dv = dq_dv - np.diag(dqv)
    return np.vstack([np.hstack([dp_dth, dp_dv]), np.hstack([dq_dth, dq_dv])])


@dataclass
class SensitivityResult:
    dv: dict[int, float]
    cond: float
    ill_conditioned: bool

    def __getitem__(self, bus_id: int) -> float:
        return self.dv[bus_id]


def voltage_sensitivity(blocks: JacobianBlocks, dq) -> SensitivityResult:
    """Linear voltage response to a reactive disturbance.

    dq maps bus id to a change in reactive absorption (positive = more
    absorption, negative = absorption lost / net reactive deficit), pu.
    Returns dv = -S^-1 dq over the PQ buses, where S is the Schur-reduced
    Q-V block with active power held; a deficit therefore raises voltage.
    """
    if isinstance(dq, dict):
        vec = np.zeros(len(blocks.q_rows))
        for bus, val in dq.items():
            vec[blocks.q_rows.index(bus)] = val
    else:
        vec = np.asarray(dq, dtype=float)
        if vec.shape != (len(blocks.q_rows),):
            raise ValueError("dq length does not match Q rows")
    s = blocks.j_qv - blocks.j_qth @ np.linalg.solve(blocks.j_pth, blocks.j_pv)
    cond = float(np.linalg.cond(s))
    dv = -np.linalg.solve(s, vec)
    return SensitivityResult(
        dv={bus: float(x) for bus, x in zip(blocks.q_rows, dv)},
        cond=cond,
        ill_conditioned=cond > COND_LIMIT,
    )


@dataclass
class ScadaView:
    """Operator-visible snapshot: transmission buses only, optional noise."""

    t: float
    bus_ids: list[int]
    v: dict[int, float]


def observe(
    case: GridCase,
    v: np.ndarray,
    *,
    t: float = 0.0,
    sigma: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> ScadaView:
    idx = case.index()
    visible = case.transmission_bus_ids()
    vals = {}
    for bid in visible:
        x = float(v[idx[bid]])
        if sigma > 0.0:
            if rng is None:
                rng = np.random.default_rng(0)
            x += float(rng.normal(0.0, sigma))
        vals[bid] = x
    return ScadaView(t=t, bus_ids=visible, v=vals)


@dataclass
class LinearDae:
    """E xdot = A x + B_u u + B_w w around an operating point.

    x = [x_d; x_a]: differential states then algebraic states. Index maps
    name every entry. E is singular with rank n_d (identity over x_d).
    """

    e: np.ndarray
    a: np.ndarray
    b_u: np.ndarray
    b_w: np.ndarray
    x_d_names: list[str]
    x_a_names: list[str]
    u_names: list[str]
    w_names: list[str]

    @property
    def n_d(self) -> int:
        return len(self.x_d_names)

    def blocks(self):
        nd = self.n_d
        return (
            self.a[:nd, :nd],
            self.a[:nd, nd:],
            self.a[nd:, :nd],
            self.a[nd:, nd:],
        )


def linearize_dae(case: GridCase, state) -> LinearDae:
    """Linearized partitioned DAE at the given engine state.

    Differential states: per machine delta, domega, q_avr; per HVDC link
    p_set. Algebraic: theta then v at every bus. Inputs u: per-machine v_ref
    and p_m, per-link p_ref and p0; disturbances w: per-bus P and Q
    injections. Deadband AVRs contribute zero voltage gain in-band; droop
    gain is zeroed at a binding capability limit.
    """
    from .devices import AVR_TAU_MIN, emf_state_jacobian, emf_terminal_jacobian

    idx = case.index()
    n = case.n_bus()
    bus_ids = [b.id for b in case.buses]
    machines = case.machines
    links = case.hvdc

    x_d_names = []
    for m in machines:
        x_d_names += [f"delta:{m.id}", f"domega:{m.id}", f"qavr:{m.id}"]
    x_d_names += [f"psched:{lk.id}" for lk in links]
    x_a_names = [f"theta:{bid}" for bid in bus_ids] + [f"v:{bid}" for bid in bus_ids]
    u_names = [f"vref:{m.id}" for m in machines] + [f"pm:{m.id}" for m in machines]
    for lk in links:
        u_names += [f"pref:{lk.id}", f"p0:{lk.id}"]
    w_names = [f"p:{bid}" for bid in bus_ids] + [f"q:{bid}" for bid in bus_ids]

    nd = len(x_d_names)
    na = len(x_a_names)
    v = state.v
    theta = state.theta
    e_arr = state.e0 + state.e_gain * state.q_avr
    hvdc_p = dict(zip([lk.id for lk in links], state.hvdc_p))

    a = np.zeros((nd + na, nd + na))
    b_u = np.zeros((nd + na, len(u_names)))
    b_w = np.zeros((nd + na, len(w_names)))
    e = np.zeros((nd + na, nd + na))
    e[:nd, :nd] = np.eye(nd)

    col_th = nd  # theta columns start; v columns at nd + n
    a[nd:, nd:] = full_jacobian(
        case, v, theta, hvdc_p=hvdc_p, emf=(e_arr, state.delta)
    )

    w0 = 2.0 * np.pi * case.f0
    for i, m in enumerate(machines):
        pos = idx[m.bus]
        x = m.x_sys(case.s_base)
        rd, rw, rq = 3 * i, 3 * i + 1, 3 * i + 2
        h_sys = 2.0 * m.h * m.s_n / case.s_base
        d_sys = m.d * m.s_n / case.s_base
        dp_dd, dq_dd, dp_de, dq_de = emf_state_jacobian(
            e_arr[i], state.delta[i], v[pos], theta[pos], x
        )
        dp_dt, dp_dv, dq_dt, dq_dv = emf_terminal_jacobian(
            e_arr[i], state.delta[i], v[pos], theta[pos], x
        )
        ci = state.e_gain[i]
        # delta_dot = w0 * domega
        a[rd, rw] = w0
        # domega_dot = (p_m - p_e - d*domega) / h_sys with p_e the source
        # injection, a function of (delta, q_avr via E, terminal theta, v)
        a[rw, rw] = -d_sys / h_sys
        a[rw, rd] = -dp_dd / h_sys
        a[rw, rq] = -dp_de * ci / h_sys
        a[rw, col_th + pos] = -dp_dt / h_sys
        a[rw, col_th + n + pos] = -dp_dv / h_sys
        b_u[rw, len(machines) + i] = 1.0 / h_sys
        # q_avr lag toward the AVR command (pu on the system base)
        tau = max(m.avr.tau, AVR_TAU_MIN)
        a[rq, rq] = -1.0 / tau
        if m.avr.mode == "droop":
            cmd = -(v[pos] - m.avr.v_ref) / m.avr.k_q
            if abs(cmd) < m.avr.q_lim:  # clamp kills the local gain
                gain = (m.s_n / case.s_base) / m.avr.k_q
                a[rq, col_th + n + pos] = -gain / tau
                b_u[rq, i] = gain / tau
        # deadband: zero gain at interior points
        # algebraic rows at the terminal: residual = calc - spec picks up
        # -d(spec)/d(state) from the source injection
        a[nd + pos, rd] += -dp_dd
        a[nd + pos, rq] += -dp_de * ci
        a[nd + n + pos, rd] += -dq_dd
        a[nd + n + pos, rq] += -dq_de * ci

    for li, lk in enumerate(links):
        r = 3 * len(machines) + li
        pos_a = idx[lk.terminal_a]
        pos_b = idx[lk.terminal_b]
        ucol = 2 * len(machines) + 2 * li
        if lk.mode == "PMODE1":
            a[r, r] = -1.0 / lk.t_track
            b_u[r, ucol] = 1.0 / lk.t_track
        else:
            a[r, r] = -1.0 / lk.t_resp
            b_u[r, ucol + 1] = 1.0 / lk.t_resp
            a[r, col_th + pos_a] += lk.k / lk.t_resp
            a[r, col_th + pos_b] += -lk.k / lk.t_resp
        # spec side carries -p_set at the sending end: residual gains +1
        a[nd + pos_a, r] += 1.0

    for k in range(n):
        b_w[nd + k, k] = -1.0
        b_w[nd + n + k, n + k] = -1.0

    return LinearDae(
        e=e,
        a=a,
        b_u=b_u,
        b_w=b_w,
        x_d_names=x_d_names,
        x_a_names=x_a_names,
        u_names=u_names,
        w_names=w_names,
    )
