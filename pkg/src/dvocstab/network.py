"""Admittance model of the plant network.

The plant is a set of converter terminal buses, optional interior buses,
and exactly one grid bus treated as an ideal voltage source behind the
network.  Series branches (per-unit impedances) define a nodal admittance
matrix over the non-grid buses; the grid coupling is carried separately as
a vector so the grid row/column never appears.  Interior buses are
eliminated by Kron reduction (Schur complement), leaving the converter
terminals only.

The rotated network seen by the converters is ``e^{j phi} Y``; its
passivity index is the smallest eigenvalue of the real (Hermitian) part of
that rotated matrix, which for these networks coincides with the
generalized short-circuit ratio (gSCR).

Modeling limits: series branches only, no shunt elements (line charging,
transformer magnetizing) and no frequency-dependent impedances.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .numerics import DimensionError, hermitian_real_part, min_eigenvalue

__all__ = [
    "TopologyError",
    "ReductionError",
    "NetworkNotPassiveError",
    "Bus",
    "Branch",
    "SystemBase",
    "PlantTopology",
    "ReducedNetwork",
    "assemble_admittance",
    "kron_reduce",
    "build_reduced_network",
    "network_passivity_index",
    "gscr",
    "require_passive",
    "network_current",
    "network_current_unrotated",
    "augment_virtual_impedance",
    "PASSIVITY_TOL",
]

# lambda_min above this counts as positive definite
PASSIVITY_TOL = 1e-10

BUS_KINDS = ("converter", "interior", "grid")


class TopologyError(ValueError):
    """Invalid plant topology (disconnected, bad references, bad data)."""


class ReductionError(RuntimeError):
    """Kron reduction failed (singular interior block)."""


class NetworkNotPassiveError(RuntimeError):
    """The rotated network matrix is not positive definite."""

    def __init__(self, epsilon_net: float):
        super().__init__(
            f"network passivity index {epsilon_net:.6g} is not positive; "
            "the decentralized certificate premise is violated"
        )
        self.epsilon_net = epsilon_net


@dataclass(frozen=True)
class Bus:
    id: str
    kind: str  # one of BUS_KINDS

    def __post_init__(self):
        if self.kind not in BUS_KINDS:
            raise TopologyError(f"bus {self.id!r}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class Branch:
    from_bus: str
    to_bus: str
    z: complex  # series impedance, per-unit

    def __post_init__(self):
        z = complex(self.z)
        if z == 0:
            raise TopologyError(f"branch {self.from_bus}-{self.to_bus}: zero impedance")
        if not (math.isfinite(z.real) and math.isfinite(z.imag)):
            raise TopologyError(f"branch {self.from_bus}-{self.to_bus}: non-finite impedance")

    @property
    def admittance(self) -> complex:
        return 1.0 / complex(self.z)


@dataclass(frozen=True)
class SystemBase:
    s_va: float
    v_volt: float
    f0_hz: float

    def __post_init__(self):
        if self.s_va <= 0 or self.v_volt <= 0 or self.f0_hz <= 0:
            raise TopologyError("base quantities must be positive")

    @property
    def z_base(self) -> float:
        return self.v_volt**2 / self.s_va

    @property
    def omega0(self) -> float:
        return 2.0 * math.pi * self.f0_hz


@dataclass(frozen=True)
class PlantTopology:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base: SystemBase

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise TopologyError("duplicate bus ids")
        grid = [b.id for b in self.buses if b.kind == "grid"]
        if len(grid) != 1:
            raise TopologyError(f"expected exactly one grid bus, found {len(grid)}")
        if not any(b.kind == "converter" for b in self.buses):
            raise TopologyError("topology needs at least one converter bus")
        known = set(ids)
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if end not in known:
                    raise TopologyError(f"branch references unknown bus {end!r}")
            if br.from_bus == br.to_bus:
                raise TopologyError(f"branch {br.from_bus}-{br.to_bus} is a self-loop")
        # connectivity: every bus reachable from the grid bus
        adj: dict[str, set[str]] = {i: set() for i in ids}
        for br in self.branches:
            adj[br.from_bus].add(br.to_bus)
            adj[br.to_bus].add(br.from_bus)
        seen = {grid[0]}
        stack = [grid[0]]
        while stack:
            for nxt in adj[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        missing = sorted(known - seen)
        if missing:
            raise TopologyError(f"buses not connected to the grid: {missing}")

    @property
    def grid_id(self) -> str:
        return next(b.id for b in self.buses if b.kind == "grid")

    @property
    def converter_ids(self) -> tuple[str, ...]:
        return tuple(b.id for b in self.buses if b.kind == "converter")

    @property
    def interior_ids(self) -> tuple[str, ...]:
        return tuple(b.id for b in self.buses if b.kind == "interior")

    @property
    def grid_impedance(self) -> complex:
        """Impedance of the single branch incident to the grid bus."""
        gid = self.grid_id
        incident = [br for br in self.branches if gid in (br.from_bus, br.to_bus)]
        if len(incident) != 1:
            raise TopologyError(
                f"grid impedance is ambiguous: {len(incident)} branches touch the grid bus"
            )
        return complex(incident[0].z)

    def with_grid_impedance(self, z_new: complex) -> "PlantTopology":
        """Copy of the topology with the grid branch impedance replaced."""
        gid = self.grid_id
        incident = [i for i, br in enumerate(self.branches) if gid in (br.from_bus, br.to_bus)]
        if len(incident) != 1:
            raise TopologyError(
                "grid impedance switching requires exactly one branch at the grid bus"
            )
        branches = list(self.branches)
        old = branches[incident[0]]
        branches[incident[0]] = Branch(old.from_bus, old.to_bus, complex(z_new))
        return replace(self, branches=tuple(branches))


def assemble_admittance(topology: PlantTopology):
    """Nodal admittance of all non-grid buses.

    Returns ``(y_full, y_grid, bus_order)`` where ``y_full`` is the dense
    nodal matrix over converter buses first, then interior buses;
    ``y_grid[i]`` is the total branch admittance tying bus i to the grid
    bus (it enters the diagonal as well); ``bus_order`` lists the bus ids
    row by row.
    """
    gid = topology.grid_id
    order = list(topology.converter_ids) + list(topology.interior_ids)
    index = {bus_id: k for k, bus_id in enumerate(order)}
    n = len(order)
    y_full = np.zeros((n, n), dtype=complex)
    y_grid = np.zeros(n, dtype=complex)
    for br in topology.branches:
        y = br.admittance
        a, b = br.from_bus, br.to_bus
        if a == gid and b == gid:  # pragma: no cover - rejected at construction
            raise TopologyError("branch connects the grid bus to itself")
        if a == gid or b == gid:
            k = index[b if a == gid else a]
            y_full[k, k] += y
            y_grid[k] += y
        else:
            ia, ib = index[a], index[b]
            y_full[ia, ia] += y
            y_full[ib, ib] += y
            y_full[ia, ib] -= y
            y_full[ib, ia] -= y
    return y_full, y_grid, order


def kron_reduce(y_full, y_grid, interior_idx, bus_names: Optional[Sequence[str]] = None):
    """Eliminate interior rows/columns by Schur complement.

    Returns ``(y_red, y_grid_red)`` over the kept rows, preserving their
    original relative order.  Eliminating an empty index set returns
    copies of the inputs.
    """
    y_full = np.asarray(y_full, dtype=complex)
    y_grid = np.asarray(y_grid, dtype=complex)
    n = y_full.shape[0]
    if y_full.shape != (n, n) or y_grid.shape != (n,):
        raise DimensionError("admittance matrix and grid vector shapes do not match")
    interior = sorted(set(int(i) for i in interior_idx))
    if any(i < 0 or i >= n for i in interior):
        raise DimensionError("interior index out of range")
    if not interior:
        return y_full.copy(), y_grid.copy()
    kept = [i for i in range(n) if i not in interior]
    y_cc = y_full[np.ix_(kept, kept)]
    y_ci = y_full[np.ix_(kept, interior)]
    y_ic = y_full[np.ix_(interior, kept)]
    y_ii = y_full[np.ix_(interior, interior)]
    rhs = np.concatenate([y_ic, y_grid[interior][:, None]], axis=1)
    try:
        sol = np.linalg.solve(y_ii, rhs)
    except np.linalg.LinAlgError:
        names = (
            [bus_names[i] for i in interior] if bus_names is not None else interior
        )
        raise ReductionError(f"singular interior block while eliminating buses {names}")
    if not np.all(np.isfinite(sol)):
        names = [bus_names[i] for i in interior] if bus_names is not None else interior
        raise ReductionError(f"ill-conditioned interior block while eliminating buses {names}")
    y_red = y_cc - y_ci @ sol[:, :-1]
    y_grid_red = y_grid[kept] - y_ci @ sol[:, -1]
    return y_red, y_grid_red


@dataclass(frozen=True)
class ReducedNetwork:
    """Kron-reduced network over the converter terminals.

    Terminal currents follow ``i = Y v - y v_g`` (unrotated) and
    ``i_phi = e^{j phi} (Y v - y v_g)`` in the rotated frame.
    """

    y_matrix: np.ndarray  # (N, N) complex
    y_grid: np.ndarray  # (N,) complex
    v_g: float  # nominal grid voltage magnitude, pu
    phi: float  # rotation angle, rad
    converter_ids: tuple[str, ...] = ()
    impedance_angles: Optional[np.ndarray] = None  # Thevenin angle per terminal, rad

    def __post_init__(self):
        y = np.array(self.y_matrix, dtype=complex)
        yg = np.array(self.y_grid, dtype=complex)
        n = y.shape[0] if y.ndim == 2 else -1
        if y.shape != (n, n) or yg.shape != (n,):
            raise DimensionError("reduced network matrix/vector shapes do not match")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(yg))):
            raise ValueError("reduced network has non-finite entries")
        if not 0.0 <= self.phi <= math.pi / 2.0 + 1e-12:
            raise ValueError(f"rotation angle {self.phi} outside [0, pi/2]")
        y.setflags(write=False)
        yg.setflags(write=False)
        object.__setattr__(self, "y_matrix", y)
        object.__setattr__(self, "y_grid", yg)
        ids = tuple(self.converter_ids) or tuple(f"conv{k+1}" for k in range(n))
        if len(ids) != n:
            raise DimensionError("converter id count does not match network size")
        object.__setattr__(self, "converter_ids", ids)
        if self.impedance_angles is not None:
            ang = np.array(self.impedance_angles, dtype=float)
            ang.setflags(write=False)
            object.__setattr__(self, "impedance_angles", ang)

    @property
    def n_converters(self) -> int:
        return self.y_matrix.shape[0]

    @property
    def angle_spread(self) -> float:
        """Spread of per-terminal Thevenin impedance angles, rad."""
        if self.impedance_angles is None or self.impedance_angles.size == 0:
            return 0.0
        return float(self.impedance_angles.max() - self.impedance_angles.min())


def thevenin_angles(y_red: np.ndarray) -> np.ndarray:
    """Per-terminal driving-point impedance angle with the grid shorted."""
    n = y_red.shape[0]
    if n == 0:
        return np.empty(0)
    z_diag = np.diag(np.linalg.inv(y_red))
    return np.angle(z_diag)


def build_reduced_network(
    topology: PlantTopology, phi: float, v_g: float = 1.0
) -> ReducedNetwork:
    """Assemble the topology and Kron-eliminate all interior buses."""
    y_full, y_grid, order = assemble_admittance(topology)
    n_conv = len(topology.converter_ids)
    interior = range(n_conv, len(order))
    y_red, y_grid_red = kron_reduce(y_full, y_grid, interior, bus_names=order)
    return ReducedNetwork(
        y_matrix=y_red,
        y_grid=y_grid_red,
        v_g=v_g,
        phi=float(phi),
        converter_ids=topology.converter_ids,
        impedance_angles=thevenin_angles(y_red),
    )


def rotated_real_part(net: ReducedNetwork) -> np.ndarray:
    """Real symmetric matrix governing the rotated network quadratic form."""
    return hermitian_real_part(cmath.exp(1j * net.phi) * net.y_matrix)


def network_passivity_index(net: ReducedNetwork) -> float:
    """Smallest eigenvalue of the real part of the rotated admittance.

    Positive for every valid (connected, non-singular) network; a
    non-positive value means the rotated network is not passive and the
    decentralized certificate does not apply.
    """
    return min_eigenvalue(rotated_real_part(net))


def gscr(net: ReducedNetwork) -> float:
    """Generalized short-circuit ratio; identical to the passivity index."""
    return network_passivity_index(net)


def require_passive(net: ReducedNetwork, tol: float = PASSIVITY_TOL) -> float:
    eps = network_passivity_index(net)
    if eps <= tol:
        raise NetworkNotPassiveError(eps)
    return eps


def network_current(net: ReducedNetwork, v, v_g: Optional[float] = None) -> np.ndarray:
    """Rotated terminal currents ``e^{j phi} (Y v - y v_g)``."""
    return cmath.exp(1j * net.phi) * network_current_unrotated(net, v, v_g)


def network_current_unrotated(
    net: ReducedNetwork, v, v_g: Optional[float] = None
) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    if v.shape != (net.n_converters,):
        raise DimensionError(
            f"voltage vector shape {v.shape} does not match {net.n_converters} converters"
        )
    if v_g is None:
        v_g = net.v_g
    return net.y_matrix @ v - net.y_grid * v_g


def augment_virtual_impedance(net: ReducedNetwork, z_v) -> ReducedNetwork:
    """Insert a series impedance ``z_v[k]`` at each converter terminal.

    Each terminal with a nonzero entry moves behind its virtual impedance;
    the old terminal node is eliminated, which is algebraically
    ``Y' = (I + Y Z_v)^{-1} Y`` and ``y' = (I + Y Z_v)^{-1} y``.  The
    result is re-checked for positive definiteness of the rotated real
    part (augmentation does not preserve it automatically).
    """
    zv = np.asarray(z_v, dtype=complex)
    if zv.shape != (net.n_converters,):
        raise DimensionError("one virtual impedance per converter required")
    if np.any(zv.real < -1e-15) or np.any(zv.imag < -1e-15):
        raise ValueError("virtual impedances need nonnegative resistance and reactance")
    if not np.any(zv != 0):
        return net
    lhs = np.eye(net.n_converters) + net.y_matrix @ np.diag(zv)
    try:
        sol = np.linalg.solve(
            lhs, np.concatenate([net.y_matrix, net.y_grid[:, None]], axis=1)
        )
    except np.linalg.LinAlgError:
        raise ReductionError("virtual-impedance augmentation made the network singular")
    if not np.all(np.isfinite(sol)):
        raise ReductionError("virtual-impedance augmentation is ill-conditioned")
    out = ReducedNetwork(
        y_matrix=sol[:, :-1],
        y_grid=sol[:, -1],
        v_g=net.v_g,
        phi=net.phi,
        converter_ids=net.converter_ids,
        impedance_angles=thevenin_angles(sol[:, :-1]),
    )
    require_passive(out)
    return out
