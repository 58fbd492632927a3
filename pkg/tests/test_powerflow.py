"""Solver, Jacobians, sensitivities, SCADA mask, linearized DAE."""
from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from gridcascade.netmodel import (
    Branch,
    Bus,
    GridCase,
    Load,
    Machine,
    assemble_admittance,
)
from gridcascade.powerflow import (
    COND_LIMIT,
    device_injections,
    full_jacobian,
    jacobian_blocks,
    linearize_dae,
    observe,
    solve_pf,
    voltage_sensitivity,
)
from gridcascade.simengine import init_state, step

from conftest import power_balance_residual


def network_injections(y: np.ndarray, v: np.ndarray, theta: np.ndarray):
    """Independent S = diag(V) conj(Y V) evaluation for oracle use."""
    volt = v * np.exp(1j * theta)
    s = volt * np.conj(y @ volt)
    return s.real, s.imag


def pf_solution_residual(case: GridCase, sol) -> float:
    """Worst P/Q mismatch of a static solution, machine outputs included."""
    idx = case.index()
    y = assemble_admittance(case)
    p_net, q_net = network_injections(y, sol.v, sol.theta)
    p_dev, q_dev, _, _ = device_injections(case, sol.v)
    for m in case.machines:
        k = idx[m.bus]
        p_dev[k] += sol.machine_p[m.id]
        q_dev[k] += sol.machine_q[m.id]
    alive = (
        sol.energized
        if sol.energized is not None
        else np.ones(case.n_bus(), dtype=bool)
    )
    dp = np.abs(p_dev - p_net)[alive]
    dq = np.abs(q_dev - q_net)[alive]
    return float(max(dp.max(), dq.max()))


class TestSolver:
    def test_flat_case_is_trivial_fixed_point(self):
        case = GridCase(slack_bus=1)
        case.buses = [Bus(id=1), Bus(id=2), Bus(id=3)]
        case.branches = [
            Branch(id="L12", f=1, t=2, r=0.01, x=0.1),
            Branch(id="L23", f=2, t=3, r=0.01, x=0.1),
        ]
        case.machines = [Machine(id="G1", bus=1, s_n=100, p_set=0.0, is_slack=True)]
        sol = solve_pf(case)
        assert sol.converged
        assert sol.iterations <= 1
        np.testing.assert_allclose(sol.v, 1.0, atol=1e-12)
        np.testing.assert_allclose(sol.theta, 0.0, atol=1e-12)

    def test_stock_case_matches_independent_reference(
        self, stock_case, pf_reference
    ):
        sol = solve_pf(stock_case)
        assert sol.converged
        idx = stock_case.index()
        worst_vm = max(
            abs(float(sol.v[idx[b.id]]) - pf_reference["vm"][str(b.id)])
            for b in stock_case.buses
        )
        worst_va = max(
            abs(float(sol.theta[idx[b.id]]) - pf_reference["va_rad"][str(b.id)])
            for b in stock_case.buses
        )
        assert worst_vm <= 1e-3
        assert worst_va <= 1e-3

    def test_overloaded_case_reports_non_convergence(self, stock_case):
        case = stock_case.copy()
        for ld in case.loads:
            ld.p_nom *= 20.0
            ld.q_nom *= 20.0
        sol = solve_pf(case)
        assert not sol.converged

    def test_power_balance_on_accepted_solutions(self, stock_case, builtin_case):
        for case in (stock_case, builtin_case):
            sol = solve_pf(case)
            assert sol.converged
            assert pf_solution_residual(case, sol) <= 1e-8

    def test_machine_q_within_limits(self, builtin_case):
        sol = solve_pf(builtin_case)
        assert sol.converged
        for m in builtin_case.machines:
            q = sol.machine_q[m.id]
            s = m.s_n / builtin_case.s_base
            assert m.q_min * s - 1e-9 <= q <= m.q_max * s + 1e-9


class TestJacobian:
    def residual_slices(self, case, sol, ybus):
        """Central-difference block oracle around (sol.v, sol.theta)."""
        idx = case.index()
        h = 1e-6

        def residuals(v, theta):
            p_net, q_net = network_injections(ybus, v, theta)
            p_dev, q_dev, _, _ = device_injections(case, v)
            return p_net - p_dev, q_net - q_dev

        n = case.n_bus()
        dp_dth = np.zeros((n, n))
        dp_dv = np.zeros((n, n))
        dq_dth = np.zeros((n, n))
        dq_dv = np.zeros((n, n))
        for j in range(n):
            th_p, th_m = sol.theta.copy(), sol.theta.copy()
            th_p[j] += h
            th_m[j] -= h
            pp, qp = residuals(sol.v, th_p)
            pm, qm = residuals(sol.v, th_m)
            dp_dth[:, j] = (pp - pm) / (2 * h)
            dq_dth[:, j] = (qp - qm) / (2 * h)
            v_p, v_m = sol.v.copy(), sol.v.copy()
            v_p[j] += h
            v_m[j] -= h
            pp, qp = residuals(v_p, sol.theta)
            pm, qm = residuals(v_m, sol.theta)
            dp_dv[:, j] = (pp - pm) / (2 * h)
            dq_dv[:, j] = (qp - qm) / (2 * h)
        pr = [idx[b] for b in sol.bus_ids if b != sol.slack_bus]
        qr = [idx[b] for b in sol.pq_buses]
        return (
            dp_dth[np.ix_(pr, pr)],
            dp_dv[np.ix_(pr, qr)],
            dq_dth[np.ix_(qr, pr)],
            dq_dv[np.ix_(qr, qr)],
        )

    def test_blocks_match_central_differences_at_random_points(
        self, builtin_case
    ):
        base = solve_pf(builtin_case)
        assert base.converged
        ybus = assemble_admittance(builtin_case)
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(10):
            v = base.v + rng.uniform(-0.03, 0.03, base.v.shape)
            theta = base.theta + rng.uniform(-0.05, 0.05, base.theta.shape)
            sol = dataclasses.replace(base, v=v, theta=theta)
            blocks = jacobian_blocks(builtin_case, sol, ybus=ybus)
            fd = self.residual_slices(builtin_case, sol, ybus)
            for analytic, numeric in zip(
                (blocks.j_pth, blocks.j_pv, blocks.j_qth, blocks.j_qv), fd
            ):
                worst = max(worst, float(np.max(np.abs(analytic - numeric))))
        assert worst <= 1e-5

    def test_two_bus_closed_form(self):
        # lossless line x=0.1, flat point: dQ2/dV2 = (2 v2 - v1 cos(th)) / x = 10
        case = GridCase(slack_bus=1)
        case.buses = [Bus(id=1), Bus(id=2)]
        case.branches = [Branch(id="L", f=1, t=2, r=0.0, x=0.1)]
        case.machines = [Machine(id="G1", bus=1, s_n=100, p_set=0.0, is_slack=True)]
        sol = solve_pf(case)
        assert sol.converged and sol.pq_buses == [2]
        blocks = jacobian_blocks(case, sol)
        assert blocks.j_qv.shape == (1, 1)
        assert blocks.j_qv[0, 0] == pytest.approx(10.0, abs=1e-9)

    def test_disconnected_islands_give_block_diagonal_qv(self):
        case = GridCase(slack_bus=1)
        case.buses = [Bus(id=1), Bus(id=2), Bus(id=3), Bus(id=4)]
        case.branches = [
            Branch(id="A", f=1, t=2, r=0.01, x=0.1),
            Branch(id="B", f=3, t=4, r=0.01, x=0.1),
        ]
        n = 4
        v = np.array([1.0, 0.98, 1.02, 0.99])
        theta = np.array([0.0, -0.05, 0.02, 0.04])
        j = full_jacobian(case, v, theta)
        qv = j[n:, n:]
        island_a, island_b = [0, 1], [2, 3]
        assert np.all(qv[np.ix_(island_a, island_b)] == 0.0)
        assert np.all(qv[np.ix_(island_b, island_a)] == 0.0)
        assert np.any(qv[np.ix_(island_a, island_a)] != 0.0)


@pytest.fixture(scope="module")
def blocks(builtin_case):
    sol = solve_pf(builtin_case)
    assert sol.converged
    return sol, jacobian_blocks(builtin_case, sol)


class TestSensitivity:
    def test_zero_disturbance_zero_response(self, blocks):
        _, blk = blocks
        sens = voltage_sensitivity(blk, {})
        assert all(x == 0.0 for x in sens.dv.values())

    def test_absorption_loss_raises_local_voltage(self, builtin_case, blocks):
        _, blk = blocks
        host = builtin_case.collectors[0].host_bus
        sens = voltage_sensitivity(blk, {host: -0.05})
        assert sens.dv[host] > 0.0

    def test_every_bus_self_sensitivity_positive(self, blocks):
        _, blk = blocks
        s = blk.j_qv - blk.j_qth @ np.linalg.solve(blk.j_pth, blk.j_pv)
        diag = np.diag(np.linalg.inv(s))
        # a unit absorption loss raises the local voltage at every PQ bus
        assert np.all(diag > 0.0)

    def test_linear_matches_nonlinear_at_5_mvar(self, builtin_case, blocks):
        base_sol, blk = blocks
        idx = builtin_case.index()
        host = builtin_case.collectors[0].host_bus
        for dq_abs in (0.05, -0.05):
            sens = voltage_sensitivity(blk, {host: dq_abs})
            work = builtin_case.copy()
            work.q_extra[host] = work.q_extra.get(host, 0.0) - dq_abs
            sol2 = solve_pf(work, v0=base_sol.v, theta0=base_sol.theta)
            assert sol2.converged
            assert set(sol2.pv_to_pq) == set(base_sol.pv_to_pq)
            worst = max(
                abs((float(sol2.v[idx[b]]) - float(base_sol.v[idx[b]])) - dv)
                for b, dv in sens.dv.items()
            )
            assert worst <= 5e-4

    def test_healthy_case_is_well_conditioned(self, blocks):
        _, blk = blocks
        sens = voltage_sensitivity(blk, {})
        assert sens.cond < COND_LIMIT
        assert not sens.ill_conditioned


class TestObserve:
    def test_noiseless_view_is_exact_and_transmission_only(self, builtin_case):
        sol = solve_pf(builtin_case)
        view = observe(builtin_case, sol.v, t=1.5)
        idx = builtin_case.index()
        tx = builtin_case.transmission_bus_ids()
        assert view.t == 1.5
        assert sorted(view.v) == sorted(tx)
        for bid in tx:
            assert view.v[bid] == float(sol.v[idx[bid]])
        collector_buses = {c.bus for c in builtin_case.collectors}
        assert not collector_buses.intersection(view.v)

    def test_collector_overvoltage_invisible(self, builtin_case):
        sol = solve_pf(builtin_case)
        idx = builtin_case.index()
        col = builtin_case.collectors[0]
        v = sol.v.copy()
        v[idx[col.bus]] = 1.09
        v[idx[col.host_bus]] = 1.02
        view = observe(builtin_case, v)
        assert col.bus not in view.v
        assert view.v[col.host_bus] == pytest.approx(1.02)

    def test_fixed_seed_reproducible(self, builtin_case):
        sol = solve_pf(builtin_case)
        a = observe(
            builtin_case, sol.v, sigma=0.002, rng=np.random.default_rng(7)
        )
        b = observe(
            builtin_case, sol.v, sigma=0.002, rng=np.random.default_rng(7)
        )
        assert a.v == b.v
        c = observe(
            builtin_case, sol.v, sigma=0.002, rng=np.random.default_rng(8)
        )
        assert a.v != c.v


def reduced_linear_step(dae, du, dw, dt):
    """One Heun step of the index-1 reduction of E xdot = A x + B u + B w."""
    nd = dae.n_d
    a_dd, a_da, a_ad, a_aa = dae.blocks()
    b_ud, b_ua = dae.b_u[:nd], dae.b_u[nd:]
    b_wd, b_wa = dae.b_w[:nd], dae.b_w[nd:]

    def algebraic(xd):
        return -np.linalg.solve(a_aa, a_ad @ xd + b_ua @ du + b_wa @ dw)

    def rate(xd):
        return a_dd @ xd + a_da @ algebraic(xd) + b_ud @ du + b_wd @ dw

    xd0 = np.zeros(nd)
    k1 = rate(xd0)
    k2 = rate(xd0 + dt * k1)
    xd1 = xd0 + 0.5 * dt * (k1 + k2)
    return xd1, algebraic(xd1)


@pytest.fixture(scope="module")
def dae_point(droop_case):
    state = init_state(droop_case)
    return droop_case, state, linearize_dae(droop_case, state)


class TestLinearDae:
    def test_mass_matrix_structure(self, dae_point):
        _, _, dae = dae_point
        nd = dae.n_d
        np.testing.assert_array_equal(dae.e[:nd, :nd], np.eye(nd))
        assert np.all(dae.e[nd:, :] == 0.0)
        assert np.all(dae.e[:, nd:] == 0.0)

    def test_algebraic_block_is_the_full_jacobian(self, dae_point):
        case, state, dae = dae_point
        nd = dae.n_d
        hvdc_map = {
            lk.id: float(state.hvdc_p[i]) for i, lk in enumerate(case.hvdc)
        }
        expected = full_jacobian(
            case,
            state.v,
            state.theta,
            hvdc_p=hvdc_map,
            emf=(state.emf_e(), state.delta),
        )
        np.testing.assert_array_equal(dae.a[nd:, nd:], expected)

    def state_xd(self, dae, state):
        xd = []
        nm = (len(dae.x_d_names) - len(state.hvdc_p)) // 3
        for i in range(nm):
            xd += [state.delta[i], state.domega[i], state.q_avr[i]]
        xd += list(state.hvdc_p)
        return np.asarray(xd)

    def step_map_error(self, case, state, dae, du_fn, dw_fn, eps, dt=0.01):
        base_case = case.copy()
        pert_case = case.copy()
        du = np.zeros(len(dae.u_names))
        dw = np.zeros(len(dae.w_names))
        du_fn(pert_case, du, eps)
        dw_fn(pert_case, dw, eps)
        s_base, _ = step(base_case, state.copy(), dt)
        s_pert, _ = step(pert_case, state.copy(), dt)
        actual = self.state_xd(dae, s_pert) - self.state_xd(dae, s_base)
        predicted, _ = reduced_linear_step(dae, du, dw, dt)
        return float(np.max(np.abs(actual - predicted)))

    def test_vref_perturbation_matches_to_first_order(self, dae_point):
        case, state, dae = dae_point
        target = next(
            i for i, m in enumerate(case.machines) if not m.is_external
        )

        def du_fn(pert_case, du, eps):
            pert_case.machines[target].avr.v_ref += eps
            du[dae.u_names.index(f"vref:{case.machines[target].id}")] = eps

        def dw_fn(pert_case, dw, eps):
            pass

        e_big = self.step_map_error(case, state, dae, du_fn, dw_fn, 1e-3)
        e_small = self.step_map_error(case, state, dae, du_fn, dw_fn, 1e-3 / 8)
        assert e_small <= 1e-5 * 1e-3 / 8 + 1e-12
        assert e_small <= e_big / 4 + 1e-14

    def test_reactive_disturbance_matches_to_first_order(self, dae_point):
        case, state, dae = dae_point
        bus = case.collectors[0].host_bus

        def du_fn(pert_case, du, eps):
            pass

        def dw_fn(pert_case, dw, eps):
            pert_case.q_extra[bus] = pert_case.q_extra.get(bus, 0.0) + eps
            dw[dae.w_names.index(f"q:{bus}")] = eps

        e_big = self.step_map_error(case, state, dae, du_fn, dw_fn, 1e-3)
        e_small = self.step_map_error(case, state, dae, du_fn, dw_fn, 1e-3 / 8)
        assert e_small <= 1e-5 * 1e-3 / 8 + 1e-12
        assert e_small <= e_big / 4 + 1e-14


class TestEngineStatePowerBalance:
    def test_equilibrium_state_balances(self, builtin_case):
        state = init_state(builtin_case)
        assert power_balance_residual(builtin_case, state) <= 1e-8
