"""Decentralized transient-stability certification.

The certificate is a per-converter test: the system is asymptotically
stable around its equilibrium when delta_k + epsilon_net > 0 for every
converter, where delta_k is the node passivity index and epsilon_net the
network passivity index.  No system-wide model is needed beyond the
reduced admittance matrix, which is what makes the test decentralized.

Certification defaults to the conservative delta estimate (no equilibrium
information); passing a converged equilibrium upgrades delta to the full
index, which can only enlarge the margins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .equilibrium import EquilibriumPoint
from .network import (
    PASSIVITY_TOL,
    NetworkNotPassiveError,
    ReducedNetwork,
    network_passivity_index,
)
from .node import DvocParams, node_passivity_index

__all__ = ["CertificationReport", "certify", "margin_sweep", "SweepPoint", "SweepResult"]

PHI_MISMATCH_TOL = 1e-9


@dataclass
class CertificationReport:
    epsilon_net: float
    delta: np.ndarray  # (N,)
    margins: np.ndarray  # (N,), delta + epsilon_net
    certified: bool
    conservative: bool
    converter_ids: tuple[str, ...]
    phi_network: float
    equilibrium: Optional[EquilibriumPoint] = None
    conditional: bool = False  # equilibrium existence not established
    notes: tuple[str, ...] = ()

    @property
    def min_margin(self) -> float:
        return float(np.min(self.margins)) if self.margins.size else math.inf

    def to_dict(self) -> dict:
        eq = None
        if self.equilibrium is not None:
            eq = {
                "v_s": [[float(v.real), float(v.imag)] for v in self.equilibrium.v_s],
                "i_phi_s": [
                    [float(i.real), float(i.imag)] for i in self.equilibrium.i_phi_s
                ],
                "residual_norm": float(self.equilibrium.residual_norm),
                "converged": bool(self.equilibrium.converged),
                "iterations": int(self.equilibrium.iterations),
                "message": self.equilibrium.message,
                "unique_among_starts": self.equilibrium.unique_among_starts,
            }
        return {
            "schema": "dvocstab-report/1",
            "epsilon_net": float(self.epsilon_net),
            "gscr": float(self.epsilon_net),
            "delta": [float(d) for d in self.delta],
            "margins": [float(m) for m in self.margins],
            "certified": bool(self.certified),
            "conservative": bool(self.conservative),
            "converter_ids": list(self.converter_ids),
            "phi_network": float(self.phi_network),
            "conditional": bool(self.conditional),
            "notes": list(self.notes),
            "equilibrium": eq,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CertificationReport":
        eq = None
        if doc.get("equilibrium") is not None:
            e = doc["equilibrium"]
            eq = EquilibriumPoint(
                v_s=np.array([complex(re, im) for re, im in e["v_s"]]),
                i_phi_s=np.array([complex(re, im) for re, im in e["i_phi_s"]]),
                residual_norm=float(e["residual_norm"]),
                converged=bool(e["converged"]),
                iterations=int(e.get("iterations", 0)),
                message=e.get("message", ""),
                unique_among_starts=e.get("unique_among_starts"),
            )
        return cls(
            epsilon_net=float(doc["epsilon_net"]),
            delta=np.array(doc["delta"], dtype=float),
            margins=np.array(doc["margins"], dtype=float),
            certified=bool(doc["certified"]),
            conservative=bool(doc["conservative"]),
            converter_ids=tuple(doc["converter_ids"]),
            phi_network=float(doc["phi_network"]),
            equilibrium=eq,
            conditional=bool(doc.get("conditional", False)),
            notes=tuple(doc.get("notes", ())),
        )


def certify(
    net: ReducedNetwork,
    params: Sequence[DvocParams],
    equilibrium: Optional[EquilibriumPoint] = None,
) -> CertificationReport:
    """Evaluate the decentralized stability condition.

    Uses the conservative node index unless a converged equilibrium is
    supplied, in which case the full index (with the equilibrium voltage
    magnitudes) is used.  Raises :class:`NetworkNotPassiveError` when the
    network index is not positive, since the method's premise fails there.
    """
    n = net.n_converters
    if len(params) != n:
        raise ValueError(f"got {len(params)} parameter records for {n} converters")
    if n == 0:
        return CertificationReport(
            epsilon_net=math.inf,
            delta=np.empty(0),
            margins=np.empty(0),
            certified=True,
            conservative=True,
            converter_ids=(),
            phi_network=net.phi,
        )
    eps = network_passivity_index(net)
    if eps <= PASSIVITY_TOL:
        raise NetworkNotPassiveError(eps)

    full = equilibrium is not None and equilibrium.converged
    if full and equilibrium.v_s.shape != (n,):
        raise ValueError("equilibrium dimension does not match the network")
    if full:
        delta = np.array(
            [
                node_passivity_index(p, abs(equilibrium.v_s[k]))
                for k, p in enumerate(params)
            ]
        )
    else:
        delta = np.array([node_passivity_index(p) for p in params])

    margins = delta + eps
    certified = bool(np.all(margins > 0.0))  # vacuously true for an empty plant

    notes = []
    mismatched = [
        net.converter_ids[k]
        for k, p in enumerate(params)
        if abs(p.phi - net.phi) > PHI_MISMATCH_TOL
    ]
    if mismatched:
        notes.append(
            "converter rotation angle differs from the network rotation for "
            f"{mismatched}; indices mix two rotations"
        )
    if net.angle_spread > 1e-6:
        notes.append(
            f"branch impedance angle spread is {net.angle_spread:.4g} rad across terminals"
        )
    conditional = not (equilibrium is not None and equilibrium.converged)
    if conditional and n > 0:
        notes.append("certificate is conditional on equilibrium existence")

    return CertificationReport(
        epsilon_net=eps,
        delta=delta,
        margins=margins,
        certified=certified,
        conservative=not full,
        converter_ids=net.converter_ids,
        phi_network=net.phi,
        equilibrium=equilibrium,
        conditional=conditional,
        notes=tuple(notes),
    )


@dataclass
class SweepPoint:
    value: float
    epsilon_net: Optional[float] = None
    min_margin: Optional[float] = None
    certified: Optional[bool] = None
    error: Optional[str] = None


@dataclass
class SweepResult:
    axis: str
    points: list[SweepPoint]
    crossing: Optional[tuple[float, float]] = None  # brackets first certification loss


def margin_sweep(
    scenario,
    axis: str,
    values: Sequence[float],
    use_equilibrium: bool = False,
) -> SweepResult:
    """Certify the scenario once per axis value.

    ``axis`` is either a dotted override path into the scenario document
    (e.g. ``converters.0.alpha``) or one of the derived axes
    ``p_star_scale``, ``q_star_scale``, ``grid_impedance_scale``,
    ``dip_depth``.  Per-point failures are recorded and the sweep
    continues.  If certification flips exactly once along the grid, the
    crossing is bracketed at the grid resolution.
    """
    # local import: scenario handling sits above the certifier in the stack
    from .scenario_io import scenario_with_axis
    from .simulator import scenario_network

    points: list[SweepPoint] = []
    for value in values:
        value = float(value)
        if not math.isfinite(value):
            points.append(SweepPoint(value=value, error="non-finite axis value"))
            continue
        try:
            modified = scenario_with_axis(scenario, axis, value)
            net, params = scenario_network(modified)
            eq = None
            if use_equilibrium:
                from .equilibrium import solve_equilibrium

                candidate = solve_equilibrium(
                    net, params, modified.omega_delta, modified.v_g_nominal
                )
                eq = candidate if candidate.converged else None
            report = certify(net, params, eq)
            points.append(
                SweepPoint(
                    value=value,
                    epsilon_net=report.epsilon_net,
                    min_margin=report.min_margin,
                    certified=report.certified,
                )
            )
        except Exception as exc:  # per-point errors recorded, sweep continues
            points.append(SweepPoint(value=value, error=f"{type(exc).__name__}: {exc}"))

    crossing = None
    flags = [p.certified for p in points]
    for a, b in zip(range(len(flags) - 1), range(1, len(flags))):
        if flags[a] is None or flags[b] is None:
            continue
        if flags[a] != flags[b]:
            if crossing is None:
                crossing = (points[a].value, points[b].value)
            else:
                crossing = None  # more than one flip: not a monotone axis
                break
    return SweepResult(axis=axis, points=points, crossing=crossing)
