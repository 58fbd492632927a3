"""Network model: admittance assembly, topology edits, serialization."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridcascade.netmodel import (
    Branch,
    Bus,
    GridCase,
    ShuntReactor,
    apply_topology_action,
    assemble_admittance,
    canonical_dumps,
    collector_voltage,
    fingerprint_of,
    load_case,
    save_case,
)


def two_bus_case(**branch_kw) -> GridCase:
    case = GridCase(slack_bus=1)
    case.buses = [Bus(id=1), Bus(id=2)]
    kw = dict(id="L-1-2", f=1, t=2, r=0.0, x=0.1)
    kw.update(branch_kw)
    case.branches = [Branch(**kw)]
    return case


class TestAdmittance:
    def test_two_bus_line(self):
        y = assemble_admittance(two_bus_case())
        assert y[0, 1] == pytest.approx(10j)
        assert y[1, 0] == pytest.approx(10j)
        assert y[0, 0] == pytest.approx(-10j)
        assert y[1, 1] == pytest.approx(-10j)

    def test_reactor_lowers_diagonal_susceptance(self):
        case = two_bus_case()
        base = assemble_admittance(case)
        case.reactors.append(ShuntReactor(id="RX", bus=2, b_sh=2.0))
        y = assemble_admittance(case)
        assert (y[1, 1] - base[1, 1]).imag == pytest.approx(-2.0)
        assert (y[1, 1] - base[1, 1]).real == pytest.approx(0.0)

    def test_offline_reactor_ignored(self):
        case = two_bus_case()
        case.reactors.append(ShuntReactor(id="RX", bus=2, b_sh=2.0, online=False))
        np.testing.assert_allclose(
            assemble_admittance(case), assemble_admittance(two_bus_case())
        )

    def test_builtin_case_symmetric(self, builtin_case):
        y = assemble_admittance(builtin_case)
        assert np.max(np.abs(y - y.T)) <= 1e-12

    def test_charging_appears_on_both_diagonals(self):
        case = two_bus_case(b=0.4)
        y = assemble_admittance(case)
        assert y[0, 0].imag == pytest.approx(-10.0 + 0.2)
        assert y[1, 1].imag == pytest.approx(-10.0 + 0.2)

    def test_off_nominal_ratio_scales_from_side(self):
        case = two_bus_case(ratio=1.05, kind="transformer")
        y = assemble_admittance(case)
        ys = 1.0 / 0.1j
        assert y[0, 0] == pytest.approx(ys / 1.05**2)
        assert y[0, 1] == pytest.approx(-ys / 1.05)
        assert y[1, 1] == pytest.approx(ys)


class TestTopologyActions:
    def test_parallel_mesh_halves_equal_reactance(self):
        case = two_bus_case(x=0.02)
        case.branches.append(
            Branch(id="MESH", f=1, t=2, r=0.0, x=0.02, status=False, kind="mesh")
        )
        meshed = apply_topology_action(case, "MeshLine", branch="MESH")
        y = assemble_admittance(meshed)
        # corridor equivalent reactance: X/2 for equal parallels; the
        # off-diagonal of a lossless corridor is +j/x_eq
        x_eq = 1.0 / y[0, 1].imag
        assert x_eq == pytest.approx(0.01)

    def test_mesh_already_closed_errors(self):
        case = two_bus_case(x=0.02)
        case.branches.append(
            Branch(id="MESH", f=1, t=2, r=0.0, x=0.02, status=True, kind="mesh")
        )
        with pytest.raises(ValueError, match="already closed"):
            apply_topology_action(case, "MeshLine", branch="MESH")

    def test_mesh_non_candidate_errors(self):
        case = two_bus_case()
        with pytest.raises(ValueError, match="not a mesh candidate"):
            apply_topology_action(case, "MeshLine", branch="L-1-2")

    def test_open_reactor_removes_shunt_term(self):
        case = two_bus_case()
        case.reactors.append(
            ShuntReactor(id="RX", bus=2, b_sh=1.5, operator_switchable=True)
        )
        before = assemble_admittance(case)
        after = assemble_admittance(
            apply_topology_action(case, "OpenReactor", reactor="RX")
        )
        assert (after[1, 1] - before[1, 1]).imag == pytest.approx(1.5)

    def test_action_returns_new_case(self):
        case = two_bus_case()
        case.reactors.append(
            ShuntReactor(id="RX", bus=2, b_sh=1.5, operator_switchable=True)
        )
        out = apply_topology_action(case, "OpenReactor", reactor="RX")
        assert case.reactor("RX").online and not out.reactor("RX").online

    def test_edit_matches_from_scratch_assembly(self, builtin_case):
        mesh_id = next(
            br.id for br in builtin_case.branches if br.kind == "mesh"
        )
        edited = apply_topology_action(builtin_case, "MeshLine", branch=mesh_id)
        manual = builtin_case.copy()
        manual.branch(mesh_id).status = True
        delta = assemble_admittance(edited) - assemble_admittance(manual)
        assert np.max(np.abs(delta)) <= 1e-12

    def test_mesh_candidates_lower_corridor_reactance(self, builtin_case):
        # post-mesh equivalent is strictly below the minimum branch reactance
        for br in builtin_case.branches:
            if br.kind != "mesh":
                continue
            existing = [
                b.x
                for b in builtin_case.branches
                if b.status and {b.f, b.t} == {br.f, br.t}
            ]
            assert existing, f"no in-service circuit under {br.id}"
            x_min = min(existing + [br.x])
            x_eq = 1.0 / sum(1.0 / x for x in existing + [br.x])
            assert x_eq < x_min


class TestSerialization:
    def test_round_trip_byte_identical(self, builtin_case):
        text1 = canonical_dumps(builtin_case.to_dict())
        case2 = GridCase.from_dict(builtin_case.to_dict())
        text2 = canonical_dumps(case2.to_dict())
        assert text1 == text2

    def test_file_round_trip(self, builtin_case, tmp_path):
        path = tmp_path / "case.json"
        save_case(builtin_case, str(path))
        loaded = load_case(str(path))
        assert loaded.fingerprint() == builtin_case.fingerprint()

    def test_fingerprint_tracks_content(self, builtin_case):
        other = builtin_case.copy()
        other.branch(other.branches[0].id).status = False
        assert other.fingerprint() != builtin_case.fingerprint()

    def test_unknown_schema_rejected(self, builtin_case):
        d = builtin_case.to_dict()
        d["schema"] = "gridcase-v999"
        with pytest.raises(ValueError, match="schema"):
            GridCase.from_dict(d)

    def test_lookup_errors(self, builtin_case):
        with pytest.raises(KeyError):
            builtin_case.branch("no-such-branch")
        with pytest.raises(KeyError):
            builtin_case.bus(9999)

    @given(
        st.dictionaries(
            st.text(min_size=1, max_size=8),
            st.one_of(
                st.integers(min_value=-(10**9), max_value=10**9),
                st.floats(allow_nan=False, allow_infinity=False, width=32),
                st.text(max_size=12),
            ),
            max_size=6,
        )
    )
    @settings(max_examples=60, deadline=None)
    def test_canonical_dumps_is_stable_and_sorted(self, d):
        a = canonical_dumps(d)
        b = canonical_dumps(dict(reversed(list(d.items()))))
        assert a == b
        assert fingerprint_of(d) == fingerprint_of(dict(reversed(list(d.items()))))


class TestCollectorVoltage:
    def test_nominal_tap(self):
        gsu = Branch(id="g", f=1, t=101, r=0.0, x=0.05, kind="gsu", n_nom=1.02)
        assert collector_voltage(1.04, gsu) == pytest.approx(1.04 / 1.02)

    def test_tap_sweep_matches_closed_form(self):
        alpha = 0.0125
        for k_tap in range(-8, 9):
            gsu = Branch(
                id="g", f=1, t=101, r=0.0, x=0.05, kind="gsu",
                n_nom=1.01, alpha=alpha, k_tap=k_tap,
            )
            expected = 1.03 / (1.01 * (1.0 + alpha * k_tap))
            assert collector_voltage(1.03, gsu) == pytest.approx(expected, abs=1e-12)

    def test_stale_tap_overvoltage_on_low_class(self):
        # 418 kV on a 400 kV class through a tap frozen 4 steps low lands
        # near 242 kV on the 220 kV class
        gsu = Branch(
            id="g", f=1, t=101, r=0.0, x=0.05, kind="gsu",
            n_nom=1.0, alpha=0.0125, k_tap=-4,
        )
        v_kv = collector_voltage(418.0 / 400.0, gsu) * 220.0
        assert v_kv == pytest.approx(242.0, abs=0.6)


class TestCollectorAttachment:
    def test_each_collector_has_one_transformer_path(self, builtin_case):
        tx = set(builtin_case.transmission_bus_ids())
        for col in builtin_case.collectors:
            touching = [
                br
                for br in builtin_case.branches
                if col.bus in (br.f, br.t)
            ]
            assert len(touching) == 1
            br = touching[0]
            assert br.kind == "gsu"
            other = br.f if br.t == col.bus else br.t
            assert other in tx and other == col.host_bus
