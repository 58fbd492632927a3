#!/usr/bin/env python3
"""Regenerate the frozen stock-network power-flow reference.

The reference is computed by a deliberately independent route: rectangular
voltage coordinates, a complex power-mismatch residual, and MINPACK's hybrid
trust-region root finder (scipy.optimize.root) with a numerically
differenced Jacobian. The package solver uses polar Newton with analytic
Jacobian blocks, so agreement between the two is a real cross-check, not a
tautology.

Run once from the repository root:

    python3 tools/make_pf_fixture.py

Output is committed at tests/fixtures/ieee39_stock_pf.json.
"""
from __future__ import annotations

import json
import pathlib
import re

import numpy as np
from scipy.optimize import root

HERE = pathlib.Path(__file__).resolve().parent
DATA = HERE.parent / "src" / "gridcascade" / "data" / "ieee39.m"
OUT = HERE.parent / "tests" / "fixtures" / "ieee39_stock_pf.json"


def read_matrix(text: str, name: str) -> list[list[float]]:
    body = re.search(rf"mpc\.{name}\s*=\s*\[(.*?)\];", text, re.S).group(1)
    rows = []
    for line in body.strip().splitlines():
        line = line.split("%")[0].strip().rstrip(";")
        if line:
            rows.append([float(tok) for tok in line.split()])
    return rows


def main() -> None:
    text = DATA.read_text()
    base = float(re.search(r"mpc\.baseMVA\s*=\s*([0-9.]+)", text).group(1))
    bus = read_matrix(text, "bus")
    gen = read_matrix(text, "gen")
    branch = read_matrix(text, "branch")

    ids = [int(r[0]) for r in bus]
    pos = {b: k for k, b in enumerate(ids)}
    n = len(ids)

    y = np.zeros((n, n), dtype=complex)
    for r, row in enumerate(branch):
        if int(row[10]) != 1:
            continue
        i, j = pos[int(row[0])], pos[int(row[1])]
        ys = 1.0 / complex(row[2], row[3])
        ysh = 0.5j * row[4]
        a = row[8] if row[8] != 0.0 else 1.0
        y[i, i] += (ys + ysh) / (a * a)
        y[j, j] += ys + ysh
        y[i, j] -= ys / a
        y[j, i] -= ys / a
    for row in bus:
        k = pos[int(row[0])]
        y[k, k] += complex(row[4], row[5]) / base

    p_spec = np.array([-row[2] / base for row in bus])
    q_spec = np.array([-row[3] / base for row in bus])
    vg = {}
    for row in gen:
        if int(row[7]) != 1:
            continue
        k = pos[int(row[0])]
        p_spec[k] += row[1] / base
        vg[k] = row[5]

    slack = pos[next(int(row[0]) for row in bus if int(row[1]) == 3)]
    pv = sorted(k for k in vg if k != slack)
    pq = sorted(k for k in range(n) if k not in vg)
    free = [k for k in range(n) if k != slack]

    def residual(x: np.ndarray) -> np.ndarray:
        volt = np.empty(n, dtype=complex)
        volt[slack] = vg[slack]
        volt[free] = x[: n - 1] + 1j * x[n - 1 :]
        s = volt * np.conj(y @ volt)
        out = []
        for k in pv:
            out.append(p_spec[k] - s[k].real)
            out.append(vg[k] ** 2 - abs(volt[k]) ** 2)
        for k in pq:
            out.append(p_spec[k] - s[k].real)
            out.append(q_spec[k] - s[k].imag)
        return np.asarray(out)

    x0 = np.concatenate(
        [np.array([vg.get(k, 1.0) for k in free]), np.zeros(n - 1)]
    )
    sol = root(residual, x0, method="hybr", tol=1e-13)
    if not sol.success:
        raise SystemExit(f"reference solve failed: {sol.message}")
    worst = float(np.max(np.abs(residual(sol.x))))
    if worst > 1e-9:
        raise SystemExit(f"reference residual too large: {worst:.3e}")

    volt = np.empty(n, dtype=complex)
    volt[slack] = vg[slack]
    volt[free] = sol.x[: n - 1] + 1j * sol.x[n - 1 :]
    s = volt * np.conj(y @ volt)
    qg_mvar = {
        ids[k]: (s[k].imag - q_spec[k] + (0.0 if k != slack else 0.0)) * base
        for k in sorted(vg)
    }

    payload = {
        "source": "ieee39.m, all branches in service, constant-power loads",
        "method": "rectangular mismatch + scipy.optimize.root(method='hybr')",
        "max_residual_pu": worst,
        "slack_bus": ids[slack],
        "vm": {str(ids[k]): round(float(abs(volt[k])), 10) for k in range(n)},
        "va_rad": {
            str(ids[k]): round(float(np.angle(volt[k])), 10) for k in range(n)
        },
        "gen_q_mvar": {str(b): round(float(q), 4) for b, q in qg_mvar.items()},
    }
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    print(f"wrote {OUT} (max residual {worst:.2e})")
    lims = {int(row[0]): (row[4], row[3]) for row in gen}
    for b, q in qg_mvar.items():
        lo, hi = lims[b]
        flag = "" if lo - 1e-6 <= q <= hi + 1e-6 else "  <-- OUTSIDE LIMITS"
        print(f"  gen bus {b}: Q = {q:9.2f} MVAr in [{lo}, {hi}]{flag}")


if __name__ == "__main__":
    main()
