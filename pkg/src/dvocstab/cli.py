"""Command-line front end.

Subcommands: certify, simulate, sweep, reduce, selftest.  Exit codes form
a stable contract: 0 success/certified, 1 evaluated-but-negative, 2 input
error, 3 numerical failure.  All commands are deterministic under a fixed
seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import scenario_io
from .certifier import certify
from .equilibrium import solve_equilibrium
from .network import NetworkNotPassiveError, build_reduced_network
from .scenario_io import ScenarioError, load_scenario
from .selftest import run_selftest
from .simulator import (
    EquilibriumNotFoundError,
    quasi_static_virtual_impedance,
    scenario_network,
    segment_nu_violations,
    simulate,
    simulate_unrotated,
    overcurrent_scan,
)
from .network import augment_virtual_impedance

EXIT_OK = 0
EXIT_NEGATIVE = 1
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


def _parse_override(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"override {text!r} must look like path=value")
    path, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def _parse_values(text: str) -> list[float]:
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError("grid must be start:stop:count or a comma list")
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        return [float(v) for v in np.linspace(start, stop, count)]
    return [float(v) for v in text.split(",")]


def _load_with_overrides(path: str, overrides):
    doc = json.loads(Path(path).read_text())
    for key, value in overrides or []:
        doc = scenario_io.apply_override(doc, key, value)
    return load_scenario(doc)


def _fmt(x) -> str:
    return "{:.15g}".format(float(x))


def _cmd_certify(args) -> int:
    try:
        scenario = _load_with_overrides(args.scenario, args.override)
        net, params = scenario_network(scenario)
    except (ScenarioError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    eq = solve_equilibrium(
        net, params, scenario.omega_delta, scenario.v_g_nominal, seed=args.seed
    )
    try:
        report = certify(net, params, eq if (args.full_delta and eq.converged) else None)
    except NetworkNotPassiveError as exc:
        print(f"not certified: {exc}", file=sys.stderr)
        return EXIT_NEGATIVE
    if not eq.converged:
        report.conditional = True
        report.notes = report.notes + (f"equilibrium solve failed: {eq.message}",)
    else:
        report.equilibrium = eq
        report.conditional = False
        report.notes = tuple(
            n for n in report.notes if "conditional on equilibrium" not in n
        )

    reports = [("scenario", report)]
    if args.fault_mode:
        reports += _fault_mode_reports(scenario, args.full_delta)

    for label, rep in reports:
        verdict = "CERTIFIED" if rep.certified else "NOT CERTIFIED"
        print(
            f"{label}: {verdict}  eps_net={_fmt(rep.epsilon_net)}  "
            f"min_margin={_fmt(rep.min_margin)}"
        )
    if args.out:
        scenario_io.write_report(report, args.out, fmt="json")
    if args.text:
        scenario_io.write_report(report, args.text, fmt="text")
    return EXIT_OK if all(rep.certified for _, rep in reports) else EXIT_NEGATIVE


def _fault_mode_reports(scenario, full_delta: bool):
    """Re-certify against every event-modified network."""
    out = []
    topo = scenario.topology
    params = scenario.converters
    for ev in scenario.events:
        if ev.kind == "grid_impedance_switch":
            topo = topo.with_grid_impedance(ev.z_new)
            net = build_reduced_network(topo, scenario.phi_network, scenario.v_g_nominal)
            out.append((f"after impedance switch at t={ev.time:g}s", certify(net, params)))
        elif ev.kind == "voltage_dip":
            net = build_reduced_network(topo, scenario.phi_network, scenario.v_g_nominal)
            v_g_dip = ev.depth * scenario.v_g_nominal
            eq = solve_equilibrium(net, params, scenario.omega_delta, v_g_dip)
            rep = certify(net, params, eq if (full_delta and eq.converged) else None)
            out.append((f"during dip at t={ev.time:g}s (same network)", rep))
            if scenario.limiter_enabled and eq.converged:
                z_v = quasi_static_virtual_impedance(net, eq.v_s, v_g_dip, params)
                if np.any(z_v != 0):
                    aug = augment_virtual_impedance(net, z_v)
                    out.append(
                        (
                            f"during dip at t={ev.time:g}s (virtual impedance)",
                            certify(aug, params),
                        )
                    )
    return out


def _merge_segment_spans(traj):
    spans = []
    for seg in traj.segments:
        row = {
            "v_g": seg.v_g,
            "certified": seg.certified,
            "epsilon_net": seg.epsilon_net,
            "min_margin": seg.min_margin,
            "limiter_engaged": seg.limiter_engaged,
            "monitored": seg.monitored,
        }
        if spans and all(spans[-1][k] == row[k] for k in row):
            spans[-1]["t_end"] = seg.t_end
        else:
            spans.append({"t_start": seg.t_start, "t_end": seg.t_end, **row})
    return spans


def _cmd_simulate(args) -> int:
    try:
        scenario = _load_with_overrides(args.scenario, args.override)
        if args.limiter is not None:
            doc = scenario_io.scenario_to_dict(scenario)
            doc = scenario_io.apply_override(doc, "limiter_enabled", args.limiter == "on")
            scenario = load_scenario(doc)
    except (ScenarioError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    try:
        traj = (
            simulate_unrotated(scenario) if args.unrotated_model else simulate(scenario)
        )
    except EquilibriumNotFoundError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    params = scenario.converters
    final_dev = None
    for seg in reversed(traj.segments):
        if seg.monitored and seg.equilibrium is not None:
            final_dev = float(np.max(np.abs(traj.v[-1] - seg.equilibrium.v_s)))
            break
    violations = segment_nu_violations(traj, params)
    over = overcurrent_scan(traj, [p.i_max for p in params])

    summary = {
        "scenario": scenario.name,
        "model": "unrotated" if args.unrotated_model else "rotated",
        "aborted": traj.aborted,
        "abort_time": traj.abort_time,
        "samples": int(traj.times.size),
        "final_deviation_from_equilibrium": final_dev,
        "nu_monotone": len(violations) == 0,
        "nu_violations": len(violations),
        "peak_currents": {
            cid: float(np.max(np.abs(traj.i[:, k])))
            for k, cid in enumerate(traj.converter_ids)
        },
        "overcurrent": [
            {"converter": r.converter_id, "first_time": r.first_time, "peak": r.peak}
            for r in over
        ],
        "segments": _merge_segment_spans(traj),
    }
    if args.csv:
        scenario_io.write_trajectory_csv(traj, args.csv, outputs=scenario.outputs)
    text = json.dumps(summary, indent=2, sort_keys=True)
    if args.summary:
        Path(args.summary).write_text(text + "\n")
    print(text)
    if traj.aborted:
        print(f"numerical failure: trajectory aborted at t={traj.abort_time}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _sweep_point(payload):
    """One sweep grid point; module-level so worker processes can pickle it."""
    doc, axis, value, do_simulate = payload
    row = {"value": value}
    try:
        base = load_scenario(doc)
        scenario = scenario_io.scenario_with_axis(base, axis, value)
        net, params = scenario_network(scenario)
        report = certify(net, params)
        row.update(
            epsilon_net=report.epsilon_net,
            min_margin=report.min_margin,
            certified=report.certified,
        )
        if do_simulate:
            traj = simulate(scenario)
            row["aborted"] = traj.aborted
            if traj.aborted:
                row["recovered"] = False
            else:
                final_dev = None
                for seg in reversed(traj.segments):
                    if seg.monitored and seg.equilibrium is not None:
                        final_dev = float(np.max(np.abs(traj.v[-1] - seg.equilibrium.v_s)))
                        break
                row["final_deviation"] = final_dev
                row["recovered"] = final_dev is not None and final_dev < 1e-3
                row["nu_monotone"] = len(segment_nu_violations(traj, scenario.converters)) == 0
                row["peak_current"] = float(np.max(np.abs(traj.i)))
    except Exception as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


_SWEEP_COLUMNS = [
    "value",
    "epsilon_net",
    "min_margin",
    "certified",
    "recovered",
    "final_deviation",
    "nu_monotone",
    "peak_current",
    "aborted",
    "error",
]


def _cmd_sweep(args) -> int:
    try:
        doc = json.loads(Path(args.scenario).read_text())
        for key, value in args.override or []:
            doc = scenario_io.apply_override(doc, key, value)
        load_scenario(doc)  # validate up front so input errors exit 2
        values = args.values
    except (ScenarioError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    payloads = [(doc, args.axis, v, args.simulate) for v in values]
    workers = args.workers or int(os.environ.get("DVOCSTAB_WORKERS", "1"))
    if workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, payloads))
    else:
        rows = [_sweep_point(p) for p in payloads]

    def cell(row, col):
        if col not in row or row[col] is None:
            return ""
        v = row[col]
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            return _fmt(v)
        return str(v)

    lines = [",".join(_SWEEP_COLUMNS)]
    for row in rows:
        lines.append(",".join(cell(row, c) for c in _SWEEP_COLUMNS))
    table = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(table)
    print(table, end="")
    return EXIT_OK


def _cmd_reduce(args) -> int:
    try:
        scenario = _load_with_overrides(args.scenario, args.override)
        net, _ = scenario_network(scenario)
    except (ScenarioError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    from .network import gscr, network_passivity_index

    eps = network_passivity_index(net)
    doc = {
        "converter_ids": list(net.converter_ids),
        "phi_network": net.phi,
        "epsilon_net": eps,
        "gscr": gscr(net),
        "impedance_angle_spread": net.angle_spread,
        "impedance_angles": [float(a) for a in net.impedance_angles],
        "y_matrix": [
            [[net.y_matrix[r, c].real, net.y_matrix[r, c].imag] for c in range(net.n_converters)]
            for r in range(net.n_converters)
        ],
        "y_grid": [[y.real, y.imag] for y in net.y_grid],
    }
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK if eps > 0 else EXIT_NEGATIVE


def _cmd_selftest(args) -> int:
    checks = run_selftest(seed=args.seed, verbose_print=print)
    failed = [c for c in checks if not c.ok]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_OK if not failed else EXIT_NEGATIVE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dvocstab",
        description=(
            "Decentralized transient-stability certification and time-domain "
            "simulation for dVOC grid-forming converter plants"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=True):
        if scenario:
            p.add_argument("scenario", help="scenario JSON file")
            p.add_argument(
                "--override",
                "-O",
                action="append",
                type=_parse_override,
                metavar="PATH=VALUE",
                help="dotted-path override into the scenario document (repeatable)",
            )
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("certify", help="evaluate the decentralized stability condition")
    common(p)
    p.add_argument("--out", help="write machine-readable report (JSON)")
    p.add_argument("--text", help="write human-readable report")
    p.add_argument(
        "--full-delta",
        action="store_true",
        help="use the equilibrium-informed node index instead of the conservative one",
    )
    p.add_argument(
        "--fault-mode",
        action="store_true",
        help="also certify every event-modified network",
    )
    p.set_defaults(func=_cmd_certify)

    p = sub.add_parser("simulate", help="run the scenario and export the trajectory")
    common(p)
    p.add_argument("--csv", help="trajectory CSV output path")
    p.add_argument("--summary", help="summary JSON output path")
    p.add_argument(
        "--unrotated-model",
        action="store_true",
        help="integrate the unrotated formulation (equivalence check)",
    )
    p.add_argument("--limiter", choices=("on", "off"), help="force limiter mode")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sweep", help="certify (and optionally simulate) along an axis")
    common(p)
    p.add_argument("--axis", required=True, help="derived axis or dotted override path")
    p.add_argument(
        "--values", required=True, type=_parse_values, help="start:stop:count or comma list"
    )
    p.add_argument("--simulate", action="store_true", help="also simulate each point")
    p.add_argument("--out", help="table CSV output path")
    p.add_argument(
        "--workers",
        type=int,
        default=None,
        help="worker processes (default: DVOCSTAB_WORKERS or 1)",
    )
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("reduce", help="print the reduced network and its indices")
    common(p)
    p.add_argument("--out", help="JSON output path")
    p.set_defaults(func=_cmd_reduce)

    p = sub.add_parser("selftest", help="run the built-in invariant suite")
    common(p, scenario=False)
    p.set_defaults(func=_cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
