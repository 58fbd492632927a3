"""Command-line front end: runs, counterfactuals, screens, verifications.

Exit codes are part of the contract: 0 for a completed run or feasible
verdict, 10 when the simulation collapsed (a valid result, not a crash),
20 for an infeasible verdict, 1 for any input problem. Outputs are written
only after all inputs validate, so a failed invocation leaves no partial
files behind.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

from . import __version__
from .case39 import CaseConfig, build_case39
from .measures import margin_table, verify_margin, compare_ufls_policies
from .netmodel import GridCase, canonical_dumps, fingerprint_of, load_case
from .simengine import (
    ACTIONS,
    ScenarioEvent,
    SimConfig,
    SimTrace,
    builtin_iberian_scenario,
    run_scenario,
    scenario_to_dict,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_COLLAPSED = 10
EXIT_INFEASIBLE = 20

BUILTINS = ("iberian",)

log = logging.getLogger("gridcascade.cli")


class InputError(Exception):
    """Bad user input; maps to exit code 1 with the message on stderr."""


def _check(cond: bool, pointer: str, msg: str) -> None:
    if not cond:
        raise InputError(f"{pointer}: {msg}")


def load_scenario_file(path: str) -> tuple[list[ScenarioEvent], SimConfig]:
    """Parse and validate a scenario-v1 file.

    Violations are reported with JSON-pointer-style paths so the offending
    element is addressable, e.g. /events/3/t.
    """
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise InputError(f"cannot read scenario {path}: {e}") from e
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: malformed JSON: {e}") from e
    _check(isinstance(d, dict), "/", "scenario root must be an object")
    _check(
        d.get("schema") == "scenario-v1",
        "/schema",
        f"expected 'scenario-v1', got {d.get('schema')!r}",
    )
    raw = d.get("events")
    _check(isinstance(raw, list), "/events", "must be a list")
    events = []
    for i, e in enumerate(raw):
        _check(isinstance(e, dict), f"/events/{i}", "must be an object")
        t = e.get("t")
        _check(
            isinstance(t, (int, float)) and not isinstance(t, bool) and t >= 0,
            f"/events/{i}/t",
            "must be a non-negative number",
        )
        action = e.get("action")
        _check(
            action in ACTIONS,
            f"/events/{i}/action",
            f"unknown action {action!r}",
        )
        params = e.get("params", {})
        _check(isinstance(params, dict), f"/events/{i}/params", "must be an object")
        events.append(ScenarioEvent(t=float(t), action=action, params=params))
    cfg_d = d.get("config", {})
    _check(isinstance(cfg_d, dict), "/config", "must be an object")
    known = set(SimConfig.__dataclass_fields__)
    for key in cfg_d:
        _check(key in known, f"/config/{key}", "unknown config field")
    try:
        config = SimConfig(**cfg_d)
    except (TypeError, ValueError) as e:
        raise InputError(f"/config: {e}") from e
    return events, config


def _parse_set(items: list[str]) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise InputError(f"--set expects key=value, got {item!r}")
        key, _, val = item.partition("=")
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
    return out


def _resolve_inputs(args) -> tuple[GridCase, list[ScenarioEvent], SimConfig, dict]:
    """Pick the case/scenario per flags and apply overrides, validating all."""
    overrides = _parse_set(args.set or [])
    case_keys = set(CaseConfig.__dataclass_fields__)
    sim_keys = set(SimConfig.__dataclass_fields__)
    unknown = set(overrides) - case_keys - sim_keys
    if unknown:
        raise InputError(f"--set: unknown keys {sorted(unknown)}")
    case_over = {k: v for k, v in overrides.items() if k in case_keys}
    sim_over = {k: v for k, v in overrides.items() if k in sim_keys}

    if args.builtin is not None:
        if args.builtin not in BUILTINS:
            raise InputError(
                f"unknown builtin {args.builtin!r}; available: {', '.join(BUILTINS)}"
            )
        if case_over:
            try:
                case = build_case39(CaseConfig(**{
                    k: tuple(v) if isinstance(v, list) else v
                    for k, v in case_over.items()
                }))
            except (TypeError, ValueError) as e:
                raise InputError(f"case override: {e}") from e
            except RuntimeError as e:
                raise InputError(f"case build failed: {e}") from e
            _, events, config = builtin_iberian_scenario()
        else:
            case, events, config = builtin_iberian_scenario()
        if getattr(args, "scenario", None):
            events, config = load_scenario_file(args.scenario)
    elif getattr(args, "case", None):
        if case_over:
            raise InputError("case config overrides need --builtin")
        try:
            case = load_case(args.case)
        except (OSError, ValueError, KeyError) as e:
            raise InputError(f"cannot load case {args.case}: {e}") from e
        if not getattr(args, "scenario", None):
            raise InputError("--case needs --scenario (or use --builtin)")
        events, config = load_scenario_file(args.scenario)
    else:
        raise InputError("need --builtin <name> or --case <path>")

    if sim_over:
        try:
            config = dataclasses.replace(config, **sim_over)
        except (TypeError, ValueError) as e:
            raise InputError(f"sim config override: {e}") from e
    if args.dt is not None:
        config = dataclasses.replace(config, dt=args.dt)
    if args.t_end is not None:
        config = dataclasses.replace(config, t_end=args.t_end)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return case, events, config, overrides


def _write_manifest(
    out: Path,
    *,
    command: str,
    case: GridCase,
    events: list[ScenarioEvent],
    config: SimConfig,
    outputs: list[str],
    extra: Optional[dict] = None,
) -> None:
    manifest = {
        "tool": "gridcascade",
        "version": __version__,
        "command": command,
        "config": config.to_dict(),
        "case_fingerprint": case.fingerprint(),
        "scenario_fingerprint": fingerprint_of(scenario_to_dict(events, config)),
        "seed": config.seed,
        "outputs": sorted(outputs),
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(canonical_dumps(manifest) + "\n")


def _write_trace(out: Path, name: str, trace: SimTrace) -> list[str]:
    (out / f"{name}.jsonl").write_text(trace.to_jsonl())
    (out / f"{name}.csv").write_text(trace.to_csv())
    return [f"{name}.jsonl", f"{name}.csv"]


def _peak_tx(trace: SimTrace) -> float:
    return max(trace.max_transmission_v(r) for r in trace.records)


def _peak_over(trace: SimTrace, buses: list[int]) -> float:
    pos = {b: i for i, b in enumerate(trace.bus_ids)}
    sel = [pos[b] for b in buses]
    return max(max(r["v"][i] for i in sel) for r in trace.records)


def _csv(rows: list[dict], cols: list[str]) -> str:
    def fmt(x):
        return repr(x) if isinstance(x, float) else str(x)

    lines = [",".join(cols)]
    lines += [",".join(fmt(r[c]) for c in cols) for r in rows]
    return "\n".join(lines) + "\n"


def cmd_run(args) -> int:
    case, events, config, _ = _resolve_inputs(args)
    trace = run_scenario(case, events, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = _write_trace(out, "trace", trace)
    _write_manifest(
        out,
        command="run",
        case=case,
        events=events,
        config=config,
        outputs=outputs + ["manifest.json"],
    )
    print(f"{trace.status} at t={trace.terminal_t:g}s; outputs in {out}")
    return EXIT_COLLAPSED if trace.status == "collapsed" else EXIT_OK


def _run_leg(job):
    name, case, events, config = job
    return name, run_scenario(case, events, config)


def _run_legs(legs, workers: int):
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(_run_leg, legs))
    else:
        results = dict(_run_leg(j) for j in legs)
    return [(name, results[name]) for name, *_ in legs]


def cmd_counterfactual(args) -> int:
    case, events, config, _ = _resolve_inputs(args)
    out = Path(args.out)
    name = args.name
    legs: list[tuple] = []
    if name == "avr_compliance":
        droop_events = [
            ScenarioEvent(0.0, "SetAvrMode", {"mode": "droop"})
        ] + list(events)
        legs = [
            ("deadband", case, events, config),
            ("droop", case, droop_events, config),
        ]
    elif name == "renewable_sweep":
        legs = [("observed-0.80-deadband", case, events, config)]
        for share in (0.6, 1.0):
            cfg = CaseConfig(renewable_share=share, avr_mode="droop")
            try:
                swept = build_case39(cfg)
            except RuntimeError as e:
                raise InputError(f"share {share} case build failed: {e}") from e
            legs.append((f"droop-{share:.2f}", swept, events, config))
    elif name == "meshing":
        unmeshed = [e for e in events if e.action != "MeshLine"]
        legs = [
            ("meshed", case, events, config),
            ("unmeshed", case, unmeshed, config),
        ]
    elif name == "ufls_policy":
        pass  # paired runs handled by the measures helper below
    else:
        raise InputError(
            f"unknown counterfactual {name!r}; available: avr_compliance, "
            "renewable_sweep, meshing, ufls_policy"
        )

    out.mkdir(parents=True, exist_ok=True)
    outputs: list[str] = []
    rows: list[dict] = []
    if name == "ufls_policy":
        cmp = compare_ufls_policies(case, events, config)
        for policy in ("conventional", "voltage_aware"):
            outputs += _write_trace(out, policy, cmp.traces[policy])
            s = cmp.summary[policy]
            rows.append({"policy": policy, **s})
        cols = ["policy", "status", "peak_post_ufls_v", "shed_mw", "ufls_stages"]
    else:
        for leg_name, trace in _run_legs(legs, args.workers):
            outputs += _write_trace(out, leg_name, trace)
            row = {
                "leg": leg_name,
                "status": trace.status,
                "peak_tx_v": _peak_tx(trace),
                "collector_trips": len(trace.trips("collector")),
                "terminal_t": trace.terminal_t,
            }
            if name == "meshing":
                corridor = sorted(
                    {b for br in case.branches if br.kind == "mesh"
                     for b in (br.f, br.t)}
                )
                row["peak_corridor_v"] = _peak_over(trace, corridor)
            rows.append(row)
        cols = list(rows[0].keys())
    (out / "summary.csv").write_text(_csv(rows, cols))
    outputs.append("summary.csv")
    _write_manifest(
        out,
        command=f"counterfactual:{name}",
        case=case,
        events=events,
        config=config,
        outputs=outputs + ["manifest.json"],
    )
    print(f"{name}: {len(rows)} legs; outputs in {out}")
    return EXIT_OK


def cmd_screen(args) -> int:
    case, events, config, _ = _resolve_inputs(args)
    candidates = (
        args.candidates.split(",")
        if args.candidates
        else sorted(br.id for br in case.branches if br.kind == "mesh")
    )
    for cand in candidates:
        try:
            br = case.branch(cand)
        except KeyError:
            raise InputError(f"unknown candidate {cand!r}")
        if br.kind != "mesh":
            raise InputError(f"candidate {cand!r} is not a mesh candidate")
    if args.probes:
        try:
            probes = [int(x) for x in args.probes.split(",")]
        except ValueError as e:
            raise InputError(f"--probes: {e}") from e
        known = {b.id for b in case.buses}
        bad = [p for p in probes if p not in known]
        if bad:
            raise InputError(f"--probes: unknown buses {bad}")
    else:
        probes = sorted({c.host_bus for c in case.collectors})
    rows = margin_table(
        case, candidates, probes, args.horizon, config, workers=args.workers
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cols = ["candidate_id", "probe_bus", "margin_mvar", "horizon_s"]
    (out / "margins.csv").write_text(
        _csv([{c: r[c] for c in cols} for r in rows], cols)
    )
    (out / "margins.json").write_text(canonical_dumps(rows) + "\n")
    _write_manifest(
        out,
        command="screen",
        case=case,
        events=events,
        config=config,
        outputs=["margins.csv", "margins.json", "manifest.json"],
        extra={"candidates": candidates, "probes": probes, "horizon_s": args.horizon},
    )
    print(f"screened {len(candidates)} candidates x {len(probes)} probes; outputs in {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    case, events, config, _ = _resolve_inputs(args)
    actions = None
    if args.actions:
        actions, _ = load_scenario_file(args.actions)
    disturbances = []
    for item in args.disturbance or []:
        if "=" not in item:
            raise InputError(f"--disturbance expects BUS=MVAR, got {item!r}")
        bus_s, _, mvar_s = item.partition("=")
        try:
            disturbances.append({int(bus_s): float(mvar_s)})
        except ValueError as e:
            raise InputError(f"--disturbance: {e}") from e
    verdict = verify_margin(
        case, action=actions, disturbances=disturbances, horizon_s=args.horizon
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "verdict.json").write_text(canonical_dumps(verdict.to_dict()) + "\n")
    _write_manifest(
        out,
        command="verify",
        case=case,
        events=actions or [],
        config=config,
        outputs=["verdict.json", "manifest.json"],
    )
    word = "feasible" if verdict.feasible else "infeasible"
    slack = "n/a" if verdict.slack is None else f"{verdict.slack:.5f}"
    print(f"{word} (slack {slack}); verdict in {out}")
    return EXIT_OK if verdict.feasible else EXIT_INFEASIBLE


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="gridcascade",
        description="cascade simulator and operator decision-support tools",
    )
    ap.add_argument("--version", action="version", version=f"gridcascade {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, scenario=True):
        p.add_argument("--case", help="case JSON file (gridcase-v1)")
        if scenario:
            p.add_argument("--scenario", help="scenario JSON file (scenario-v1)")
        p.add_argument("--builtin", help="built-in study name (iberian)")
        p.add_argument("--out", default="gridcascade-out", help="output directory")
        p.add_argument("--dt", type=float, help="integration step, seconds")
        p.add_argument("--t-end", dest="t_end", type=float, help="sim horizon, seconds")
        p.add_argument("--seed", type=int, help="run seed recorded in the manifest")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override a case or sim config field (JSON value or string)",
        )
        p.add_argument("--workers", type=int, default=1, help="parallel sessions")

    p_run = sub.add_parser("run", help="run a scenario and write trace outputs")
    common(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_cf = sub.add_parser("counterfactual", help="paired/swept comparison runs")
    p_cf.add_argument(
        "name",
        help="avr_compliance | renewable_sweep | meshing | ufls_policy",
    )
    common(p_cf)
    p_cf.set_defaults(fn=cmd_counterfactual)

    p_scr = sub.add_parser("screen", help="recovery-margin lookup table")
    common(p_scr, scenario=False)
    p_scr.add_argument("--candidates", help="comma list of mesh branch ids")
    p_scr.add_argument("--probes", help="comma list of probe bus ids")
    p_scr.add_argument("--horizon", type=float, default=2.0, help="seconds")
    p_scr.set_defaults(fn=cmd_screen)

    p_ver = sub.add_parser("verify", help="linearized reactive-margin verdict")
    common(p_ver, scenario=False)
    p_ver.add_argument("--actions", help="scenario file of actions to apply first")
    p_ver.add_argument(
        "--disturbance",
        action="append",
        metavar="BUS=MVAR",
        help="absorption delta at a bus (negative = absorption lost)",
    )
    p_ver.add_argument("--horizon", type=float, default=2.0, help="seconds")
    p_ver.set_defaults(fn=cmd_verify)
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    level = os.environ.get("GRIDCASCADE_LOG")
    if level:
        logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO))
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
