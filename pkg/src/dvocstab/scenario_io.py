"""Scenario file loading, validation, and result serialization.

Scenarios are JSON documents with a versioned ``schema`` field.  Units are
carried in the key names (``r_pu``, ``r_ohm``, ``r_ohm_per_km``,
``l_h_per_km``, ``length_km``, ``phi_rad``, ``phi_deg``); angles are
stored internally in radians.  Per-unit conversion of physical line
constants happens here, at load time:

    r = R_per_km * length / Z_base
    x = 2 pi f0 * L_per_km * length / Z_base,   Z_base = V_base^2 / S_base

Rotation angles may be given literally or as ``"match-impedance-angle"``,
which resolves to the driving-point impedance angle seen from each
converter terminal (for the network angle: the mean over terminals).

Output writers are deterministic: identical inputs yield byte-identical
files.
"""

from __future__ import annotations

import cmath
import copy
import json
import math
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .certifier import CertificationReport
from .network import Branch, Bus, PlantTopology, SystemBase, build_reduced_network
from .node import DvocParams
from .simulator import Event, Scenario, SolverSettings, Trajectory

__all__ = [
    "ScenarioError",
    "SCENARIO_SCHEMA",
    "load_scenario",
    "scenario_to_dict",
    "apply_override",
    "scenario_with_axis",
    "write_trajectory_csv",
    "write_report",
    "read_report",
    "random_setpoints",
    "bundled_scenario_path",
]

SCENARIO_SCHEMA = "dvocstab-scenario/1"
REPORT_SCHEMA = "dvocstab-report/1"
MATCH_ANGLE = "match-impedance-angle"

_FLOAT_FMT = "{:.15g}"


class ScenarioError(ValueError):
    """Scenario document failed validation; carries the offending field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def bundled_scenario_path(name: str) -> Path:
    """Path of a scenario shipped with the package (e.g. 'single_converter')."""
    path = Path(__file__).parent / "scenarios" / f"{name}.json"
    if not path.exists():
        available = sorted(p.stem for p in path.parent.glob("*.json"))
        raise ScenarioError("scenario", f"no bundled scenario {name!r}; have {available}")
    return path


def _expect(doc: dict, field: str, types, where: str):
    if field not in doc:
        raise ScenarioError(f"{where}.{field}", "missing required field")
    value = doc[field]
    if not isinstance(value, types):
        raise ScenarioError(
            f"{where}.{field}",
            f"expected {getattr(types, '__name__', types)}, got {type(value).__name__}",
        )
    return value


def _number(doc: dict, field: str, where: str) -> float:
    value = _expect(doc, field, (int, float), where)
    if isinstance(value, bool) or not math.isfinite(float(value)):
        raise ScenarioError(f"{where}.{field}", "expected a finite number")
    return float(value)


def _angle(doc: dict, where: str, base_key: str = "phi"):
    """Angle from ``<key>_rad``/``<key>_deg`` or the match-angle keyword."""
    rad_key, deg_key = f"{base_key}_rad", f"{base_key}_deg"
    given = [k for k in (rad_key, deg_key, base_key) if k in doc]
    if len(given) != 1:
        raise ScenarioError(
            f"{where}.{base_key}",
            f"give exactly one of {rad_key}, {deg_key}, or {base_key}: '{MATCH_ANGLE}'",
        )
    key = given[0]
    if key == base_key:
        if doc[key] != MATCH_ANGLE:
            raise ScenarioError(
                f"{where}.{base_key}", f"untagged angle; use {rad_key} or {deg_key}"
            )
        return MATCH_ANGLE
    value = _number(doc, key, where)
    return value if key == rad_key else math.radians(value)


def _branch_impedance(doc: dict, where: str, base: SystemBase) -> complex:
    has_pu = "r_pu" in doc or "x_pu" in doc
    has_ohm = "r_ohm" in doc or "x_ohm" in doc
    has_line = any(k in doc for k in ("r_ohm_per_km", "l_h_per_km", "length_km"))
    if sum((has_pu, has_ohm, has_line)) != 1:
        raise ScenarioError(
            where,
            "impedance must use exactly one unit family: "
            "(r_pu,x_pu), (r_ohm,x_ohm), or (r_ohm_per_km,l_h_per_km,length_km)",
        )
    if has_pu:
        return complex(_number(doc, "r_pu", where), _number(doc, "x_pu", where))
    if has_ohm:
        return complex(
            _number(doc, "r_ohm", where) / base.z_base,
            _number(doc, "x_ohm", where) / base.z_base,
        )
    length = _number(doc, "length_km", where)
    r = _number(doc, "r_ohm_per_km", where) * length / base.z_base
    x = base.omega0 * _number(doc, "l_h_per_km", where) * length / base.z_base
    return complex(r, x)


_GRID_BUS = "grid"


def load_scenario(source: Union[str, Path, dict]) -> Scenario:
    """Load and fully validate a scenario document (path or dict)."""
    if isinstance(source, (str, Path)):
        try:
            doc = json.loads(Path(source).read_text())
        except json.JSONDecodeError as exc:
            raise ScenarioError("document", f"invalid JSON: {exc}") from exc
    else:
        doc = copy.deepcopy(source)
    if not isinstance(doc, dict):
        raise ScenarioError("document", "scenario must be a JSON object")
    schema = doc.get("schema")
    if schema != SCENARIO_SCHEMA:
        raise ScenarioError("schema", f"expected {SCENARIO_SCHEMA!r}, got {schema!r}")

    base_doc = _expect(doc, "base", dict, "scenario")
    base = SystemBase(
        s_va=_number(base_doc, "s_base_va", "base"),
        v_volt=_number(base_doc, "v_base_v", "base"),
        f0_hz=_number(base_doc, "f0_hz", "base"),
    )

    topo_doc = _expect(doc, "topology", dict, "scenario")
    buses: list[Bus] = []
    for i, bus_doc in enumerate(_expect(topo_doc, "buses", list, "topology")):
        where = f"topology.buses.{i}"
        bid = _expect(bus_doc, "id", str, where)
        kind = _expect(bus_doc, "kind", str, where)
        if bid == _GRID_BUS:
            raise ScenarioError(where, f"bus id {_GRID_BUS!r} is reserved for the grid bus")
        if kind not in ("converter", "interior"):
            raise ScenarioError(where, f"bus kind must be converter or interior, got {kind!r}")
        buses.append(Bus(bid, kind))
    buses.append(Bus(_GRID_BUS, "grid"))

    branches: list[Branch] = []
    for i, br_doc in enumerate(topo_doc.get("branches", [])):
        where = f"topology.branches.{i}"
        frm = _expect(br_doc, "from", str, where)
        to = _expect(br_doc, "to", str, where)
        branches.append(Branch(frm, to, _branch_impedance(br_doc, where, base)))

    grid_doc = _expect(doc, "grid", dict, "scenario")
    attach = _expect(grid_doc, "attach", str, "grid")
    z_grid = _branch_impedance(grid_doc, "grid", base)
    branches.append(Branch(attach, _GRID_BUS, z_grid))
    v_g = _number(grid_doc, "v_g", "grid")
    omega_delta = _number(grid_doc, "omega_delta", "grid") if "omega_delta" in grid_doc else 0.0

    try:
        topology = PlantTopology(tuple(buses), tuple(branches), base)
    except Exception as exc:
        raise ScenarioError("topology", str(exc)) from exc

    conv_docs = _expect(doc, "converters", list, "scenario")
    if not conv_docs:
        raise ScenarioError("converters", "at least one converter required")
    conv_buses = []
    for i, c in enumerate(conv_docs):
        conv_buses.append(_expect(c, "bus", str, f"converters.{i}"))
    if tuple(conv_buses) != topology.converter_ids:
        raise ScenarioError(
            "converters",
            "converter bus assignments must list every converter bus in topology "
            f"order {topology.converter_ids}, got {tuple(conv_buses)}",
        )

    # impedance angles are needed before phi values can be resolved
    probe = build_reduced_network(topology, phi=0.0, v_g=v_g)
    terminal_angles = {
        bus: float(ang) for bus, ang in zip(probe.converter_ids, probe.impedance_angles)
    }

    phi_net = _angle(grid_doc, "grid")
    if phi_net == MATCH_ANGLE:
        phi_net = float(np.mean(list(terminal_angles.values())))

    converters: list[DvocParams] = []
    for i, c in enumerate(conv_docs):
        where = f"converters.{i}"
        phi = _angle(c, where)
        if phi == MATCH_ANGLE:
            phi = terminal_angles[conv_buses[i]]
        limiter = c.get("limiter", {})
        if not isinstance(limiter, dict):
            raise ScenarioError(f"{where}.limiter", "expected an object")
        kwargs = {}
        if "k_v" in limiter:
            kwargs["k_v"] = _number(limiter, "k_v", f"{where}.limiter")
        if any(k.startswith("theta_v") for k in limiter):
            kwargs["theta_v"] = _angle(limiter, f"{where}.limiter", base_key="theta_v")
        try:
            converters.append(
                DvocParams(
                    eta=_number(c, "eta", where),
                    alpha=_number(c, "alpha", where),
                    phi=phi,
                    p_star=_number(c, "p_star", where),
                    q_star=_number(c, "q_star", where),
                    v_star=_number(c, "v_star", where) if "v_star" in c else 1.0,
                    omega0=base.omega0,
                    i_max=_number(c, "i_max", where) if "i_max" in c else 1.2,
                    **kwargs,
                )
            )
        except ValueError as exc:
            raise ScenarioError(where, str(exc)) from exc

    events: list[Event] = []
    for i, e in enumerate(doc.get("events", [])):
        where = f"events.{i}"
        kind = _expect(e, "kind", str, where)
        t = _number(e, "t", where)
        try:
            if kind == "voltage_dip":
                events.append(
                    Event(
                        time=t,
                        kind=kind,
                        depth=_number(e, "depth", where),
                        duration=_number(e, "duration", where),
                    )
                )
            elif kind == "grid_impedance_switch":
                events.append(Event(time=t, kind=kind, z_new=_branch_impedance(e, where, base)))
            elif kind == "limiter_mode":
                events.append(Event(time=t, kind=kind, on=bool(_expect(e, "on", bool, where))))
            else:
                raise ScenarioError(where, f"unknown event kind {kind!r}")
        except ValueError as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(where, str(exc)) from exc

    solver_doc = doc.get("solver", {})
    try:
        solver = SolverSettings(
            method=solver_doc.get("method", "rk4"),
            h=float(solver_doc.get("h", 1e-4)),
            rtol=float(solver_doc.get("rtol", 1e-8)),
            atol=float(solver_doc.get("atol", 1e-10)),
            limiter_dt=float(solver_doc.get("limiter_dt", 1e-3)),
        )
    except ValueError as exc:
        raise ScenarioError("solver", str(exc)) from exc

    initial_voltage = None
    if "initial_voltage" in doc:
        pairs = _expect(doc, "initial_voltage", list, "scenario")
        initial_voltage = tuple(complex(float(re), float(im)) for re, im in pairs)

    try:
        return Scenario(
            topology=topology,
            converters=tuple(converters),
            converter_buses=tuple(conv_buses),
            phi_network=float(phi_net),
            v_g_nominal=v_g,
            omega_delta=omega_delta,
            events=tuple(events),
            t_end=_number(doc, "t_end", "scenario"),
            solver=solver,
            outputs=tuple(doc.get("outputs", ("v", "i", "nu"))),
            limiter_enabled=bool(doc.get("limiter_enabled", False)),
            initial_voltage=initial_voltage,
            name=str(doc.get("name", "")),
        )
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError("scenario", str(exc)) from exc


def scenario_to_dict(scenario: Scenario) -> dict:
    """Canonical document for a validated scenario (angles in radians).

    ``load_scenario(scenario_to_dict(s))`` reproduces ``s`` exactly.
    """
    base = scenario.topology.base
    gid = scenario.topology.grid_id
    grid_branches = [
        br for br in scenario.topology.branches if gid in (br.from_bus, br.to_bus)
    ]
    if len(grid_branches) != 1:
        raise ScenarioError("topology", "serialization expects a single grid branch")
    grid_branch = grid_branches[0]
    attach = grid_branch.from_bus if grid_branch.to_bus == gid else grid_branch.to_bus

    doc: dict = {
        "schema": SCENARIO_SCHEMA,
        "name": scenario.name,
        "base": {"s_base_va": base.s_va, "v_base_v": base.v_volt, "f0_hz": base.f0_hz},
        "topology": {
            "buses": [
                {"id": b.id, "kind": b.kind}
                for b in scenario.topology.buses
                if b.kind != "grid"
            ],
            "branches": [
                {
                    "from": br.from_bus,
                    "to": br.to_bus,
                    "r_pu": br.z.real,
                    "x_pu": br.z.imag,
                }
                for br in scenario.topology.branches
                if br is not grid_branch
            ],
        },
        "grid": {
            "attach": attach,
            "r_pu": grid_branch.z.real,
            "x_pu": grid_branch.z.imag,
            "v_g": scenario.v_g_nominal,
            "omega_delta": scenario.omega_delta,
            "phi_rad": scenario.phi_network,
        },
        "converters": [
            {
                "bus": bus,
                "eta": p.eta,
                "alpha": p.alpha,
                "phi_rad": p.phi,
                "p_star": p.p_star,
                "q_star": p.q_star,
                "v_star": p.v_star,
                "i_max": p.i_max,
                "limiter": {"k_v": p.k_v, "theta_v_rad": p.theta_v},
            }
            for bus, p in zip(scenario.converter_buses, scenario.converters)
        ],
        "events": [],
        "solver": {
            "method": scenario.solver.method,
            "h": scenario.solver.h,
            "rtol": scenario.solver.rtol,
            "atol": scenario.solver.atol,
            "limiter_dt": scenario.solver.limiter_dt,
        },
        "t_end": scenario.t_end,
        "outputs": list(scenario.outputs),
        "limiter_enabled": scenario.limiter_enabled,
    }
    for ev in scenario.events:
        if ev.kind == "voltage_dip":
            doc["events"].append(
                {"t": ev.time, "kind": ev.kind, "depth": ev.depth, "duration": ev.duration}
            )
        elif ev.kind == "grid_impedance_switch":
            doc["events"].append(
                {"t": ev.time, "kind": ev.kind, "r_pu": ev.z_new.real, "x_pu": ev.z_new.imag}
            )
        else:
            doc["events"].append({"t": ev.time, "kind": ev.kind, "on": ev.on})
    if scenario.initial_voltage is not None:
        doc["initial_voltage"] = [[v.real, v.imag] for v in scenario.initial_voltage]
    return doc


def apply_override(doc: dict, path: str, value) -> dict:
    """Set a dotted path (e.g. ``converters.0.p_star``) in a document copy."""
    out = copy.deepcopy(doc)
    parts = path.split(".")
    node = out
    for i, part in enumerate(parts[:-1]):
        if isinstance(node, list):
            try:
                node = node[int(part)]
            except (ValueError, IndexError):
                raise ScenarioError(".".join(parts[: i + 1]), "bad list index in override")
        elif isinstance(node, dict):
            if part not in node:
                node[part] = {}
            node = node[part]
        else:
            raise ScenarioError(".".join(parts[: i + 1]), "override path descends into a scalar")
    leaf = parts[-1]
    if isinstance(node, list):
        try:
            node[int(leaf)] = value
        except (ValueError, IndexError):
            raise ScenarioError(path, "bad list index in override")
    elif isinstance(node, dict):
        node[leaf] = value
    else:
        raise ScenarioError(path, "override path descends into a scalar")
    return out


_DERIVED_AXES = ("p_star_scale", "q_star_scale", "grid_impedance_scale", "dip_depth")


def scenario_with_axis(scenario: Scenario, axis: str, value: float) -> Scenario:
    """Scenario copy with a sweep axis applied.

    Derived axes: ``p_star_scale``, ``q_star_scale`` (multiply every
    setpoint), ``grid_impedance_scale`` (scale the grid branch), and
    ``dip_depth`` (set the depth of every voltage dip event).  Any other
    axis is treated as a dotted override path into the document.
    """
    doc = scenario_to_dict(scenario)
    if axis == "p_star_scale":
        for i, p in enumerate(scenario.converters):
            doc = apply_override(doc, f"converters.{i}.p_star", p.p_star * value)
    elif axis == "q_star_scale":
        for i, p in enumerate(scenario.converters):
            doc = apply_override(doc, f"converters.{i}.q_star", p.q_star * value)
    elif axis == "grid_impedance_scale":
        doc = apply_override(doc, "grid.r_pu", doc["grid"]["r_pu"] * value)
        doc = apply_override(doc, "grid.x_pu", doc["grid"]["x_pu"] * value)
    elif axis == "dip_depth":
        dips = [i for i, e in enumerate(doc["events"]) if e["kind"] == "voltage_dip"]
        if not dips:
            raise ScenarioError("events", "dip_depth axis needs at least one voltage dip")
        for i in dips:
            doc = apply_override(doc, f"events.{i}.depth", value)
    else:
        doc = apply_override(doc, axis, value)
    return load_scenario(doc)


def _fmt(x: float) -> str:
    return _FLOAT_FMT.format(x)


def write_trajectory_csv(
    traj: Trajectory, path: Union[str, Path], outputs: Optional[Sequence[str]] = None
) -> None:
    """Write the trajectory with 15 significant digits per value.

    Full channel set gives the header
    ``t,v_d_1,v_q_1,...,i_d_1,i_q_1,...,nu`` (1 + 4N + 1 columns); the
    ``outputs`` selection drops whole channel blocks.
    """
    channels = tuple(outputs) if outputs is not None else ("v", "i", "nu")
    n = traj.v.shape[1]
    header = ["t"]
    if "v" in channels:
        for k in range(1, n + 1):
            header += [f"v_d_{k}", f"v_q_{k}"]
    if "i" in channels:
        for k in range(1, n + 1):
            header += [f"i_d_{k}", f"i_q_{k}"]
    if "nu" in channels:
        header.append("nu")
    lines = [",".join(header)]
    for row in range(traj.times.size):
        cells = [_fmt(float(traj.times[row]))]
        if "v" in channels:
            for k in range(n):
                cells += [_fmt(float(traj.v[row, k].real)), _fmt(float(traj.v[row, k].imag))]
        if "i" in channels:
            for k in range(n):
                cells += [_fmt(float(traj.i[row, k].real)), _fmt(float(traj.i[row, k].imag))]
        if "nu" in channels:
            cells.append(_fmt(float(traj.nu[row])))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def write_report(
    report: CertificationReport, path: Union[str, Path], fmt: str = "json"
) -> None:
    """Serialize a certification report as machine JSON or human text."""
    path = Path(path)
    if fmt == "json":
        path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        return
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    lines = [
        "transient stability certificate",
        f"  network passivity index (gSCR): {report.epsilon_net:.6f}",
        f"  network rotation angle: {report.phi_network:.6f} rad",
        f"  node index mode: {'conservative' if report.conservative else 'full'}",
        "",
        f"  {'converter':<12}{'delta':>14}{'margin':>14}{'eps-|delta|':>14}",
    ]
    for k, cid in enumerate(report.converter_ids):
        d = float(report.delta[k])
        m = float(report.margins[k])
        alt = f"{report.epsilon_net - abs(d):>14.6f}" if d < 0 else f"{'-':>14}"
        lines.append(f"  {cid:<12}{d:>14.6f}{m:>14.6f}{alt}")
    lines.append("")
    lines.append(f"  certified: {'YES' if report.certified else 'NO'}")
    if report.conditional:
        lines.append("  note: certificate is conditional on equilibrium existence")
    for note in report.notes:
        lines.append(f"  note: {note}")
    path.write_text("\n".join(lines) + "\n")


def read_report(path: Union[str, Path]) -> CertificationReport:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != REPORT_SCHEMA:
        raise ScenarioError("schema", f"expected {REPORT_SCHEMA!r}, got {doc.get('schema')!r}")
    return CertificationReport.from_dict(doc)


def random_setpoints(n: int, seed: int) -> list[tuple[float, float]]:
    """Random (p*, q*) pairs: uniform on [0, sqrt(2)] each, rescaled so the
    apparent power is exactly 1.0 whenever it exceeds 1.0."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        p, q = rng.uniform(0.0, math.sqrt(2.0), size=2)
        s = math.hypot(p, q)
        if s > 1.0:
            p, q = p / s, q / s
        out.append((float(p), float(q)))
    return out
