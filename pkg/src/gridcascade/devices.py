"""Device laws: AVR response, machine EMF coupling, reactors, ZIP loads, HVDC.

Operations here are pure and single-device; the engine owns coupling and
integration. Units are explicit per function: AVR commands are MVAr on the
passed base, network quantities per-unit on the system base.
"""

from __future__ import annotations

import cmath
import math

from .netmodel import AvrConfig, HvdcLink, Load, Machine, ShuntReactor

# Floor on the AVR lag so a zero tau (deadband default: protection-like,
# effectively immediate) still integrates cleanly at 10 ms stepping.
AVR_TAU_MIN = 0.02


def avr_response(
    avr: AvrConfig, v: float, s_base: float = 100.0, q_now: float = 0.0
) -> float:
    """Reactive target for one machine, MVAr (negative = absorb).

    droop: -(v - v_ref) / k_q * s_base, clamped to +/- q_lim * s_base.
    deadband: full absorption above band_hi, full injection below band_lo;
    inside the band the target is the present output q_now - the regulator
    does not act on small deviations and it does not give back what it has
    already taken up. Response lag is applied by the engine.
    """
    if v <= 0:
        raise ValueError("voltage must be positive")
    lim = avr.q_lim * s_base
    if avr.mode == "droop":
        cmd = -(v - avr.v_ref) / avr.k_q * s_base
        return max(-lim, min(lim, cmd))
    if avr.mode == "deadband":
        if v > avr.band_hi:
            return -lim
        if v < avr.band_lo:
            return lim
        return max(-lim, min(lim, q_now))
    raise ValueError(f"unknown AVR mode {avr.mode!r}")


def emf_init(v: float, theta: float, p: float, q: float, x: float):
    """Internal source (e, delta) that injects p + jq into a terminal at
    v, theta through reactance x. All pu on one base, angles rad."""
    vt = v * cmath.exp(1j * theta)
    ef = vt + 1j * x * complex(p, q).conjugate() / vt.conjugate()
    return abs(ef), cmath.phase(ef)


def emf_injection(e: float, delta: float, v: float, theta: float, x: float):
    """(p, q) delivered to the terminal bus by a source e at angle delta
    behind reactance x."""
    ang = delta - theta
    p = e * v * math.sin(ang) / x
    q = (e * v * math.cos(ang) - v * v) / x
    return p, q


def emf_terminal_jacobian(e: float, delta: float, v: float, theta: float, x: float):
    """(dp_dth, dp_dv, dq_dth, dq_dv) of the source injection with respect
    to the terminal bus state, holding e and delta."""
    ang = delta - theta
    s, c = math.sin(ang), math.cos(ang)
    return (
        -e * v * c / x,
        e * s / x,
        e * v * s / x,
        (e * c - 2.0 * v) / x,
    )


def emf_state_jacobian(e: float, delta: float, v: float, theta: float, x: float):
    """(dp_ddelta, dq_ddelta, dp_de, dq_de): injection sensitivity to the
    source state, holding the terminal."""
    ang = delta - theta
    s, c = math.sin(ang), math.cos(ang)
    return (
        e * v * c / x,
        -e * v * s / x,
        v * s / x,
        v * c / x,
    )


def reactor_injection(reactor: ShuntReactor, v: float) -> float:
    """Reactive injection of a shunt reactor, pu (negative = absorption)."""
    return -reactor.b_sh * v * v


def reactor_voltage_gain(reactor: ShuntReactor, v: float) -> float:
    """d(injection)/dV = -2 b_sh V: absorption grows with voltage."""
    return -2.0 * reactor.b_sh * v


def zip_injection(load: Load, v: float) -> tuple[float, float]:
    """Injection of a ZIP load at magnitude v, pu (negative = consumption)."""
    shape = load.z * v * v + load.i * v + load.p
    return (
        -load.p_nom * load.scale_p * shape,
        -load.q_nom * load.scale_q * shape,
    )


def hvdc_rate(link: HvdcLink, p_set: float, angle_gap: float) -> float:
    """dp_set/dt for the link's current mode.

    PMODE1 tracks p_ref through a fast lag and ignores the grid. PMODE3
    follows the schedule plus a proportional term on the angle spread
    angle_gap = theta(terminal_a) - theta(terminal_b), rad.
    """
    if link.mode == "PMODE1":
        return (link.p_ref - p_set) / link.t_track
    if link.mode == "PMODE3":
        return (link.p0 + link.k * angle_gap - p_set) / link.t_resp
    raise ValueError(f"unknown HVDC mode {link.mode!r}")


def hvdc_step(link: HvdcLink, p_set: float, angle_gap: float, dt: float) -> float:
    """One Heun step of the setpoint law with the angle gap held."""
    k1 = hvdc_rate(link, p_set, angle_gap)
    k2 = hvdc_rate(link, p_set + dt * k1, angle_gap)
    return p_set + 0.5 * dt * (k1 + k2)


def swing_rates(
    machine: Machine,
    s_base: float,
    f0: float,
    domega: float,
    p_m: float,
    p_e: float,
) -> tuple[float, float]:
    """(ddelta/dt, ddomega/dt) for 2H domega' = p_m - p_e - D domega.

    domega is per-unit speed deviation; powers are pu on the system base.
    """
    h_sys = 2.0 * machine.h * machine.s_n / s_base
    d_sys = machine.d * machine.s_n / s_base
    ddelta = 2.0 * math.pi * f0 * domega
    ddomega = (p_m - p_e - d_sys * domega) / h_sys
    return ddelta, ddomega


def swing_step(
    machine: Machine,
    s_base: float,
    f0: float,
    delta: float,
    domega: float,
    p_m: float,
    p_e: float,
    dt: float,
) -> tuple[float, float]:
    """One Heun step of the swing pair with electrical power held."""
    d1, w1 = swing_rates(machine, s_base, f0, domega, p_m, p_e)
    d2, w2 = swing_rates(machine, s_base, f0, domega + dt * w1, p_m, p_e)
    return delta + 0.5 * dt * (d1 + d2), domega + 0.5 * dt * (w1 + w2)


def system_frequency(case, domega_by_machine) -> float:
    """Inertia-weighted mean frequency of the domestic fleet, Hz.

    External equivalents are left out: underfrequency relays inside the
    area respond to the area's own centre of inertia, not the neighbour's.
    """
    num = 0.0
    den = 0.0
    for m, dw in zip(case.machines, domega_by_machine):
        if m.is_external:
            continue
        w = m.h * m.s_n
        num += w * dw
        den += w
    if den == 0.0:
        return case.f0
    return case.f0 * (1.0 + num / den)
