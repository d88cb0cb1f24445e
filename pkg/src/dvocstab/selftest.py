"""Built-in invariant suite behind ``dvocstab selftest``.

Smaller, faster versions of the package's core correctness checks, meant
to run anywhere in well under a minute without a test framework: reduced
model against dense full-network solves, dissipation inequality sampling,
rotated/unrotated model agreement, and eigensolver cross-checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import network as net_mod
from . import node as node_mod
from .equilibrium import solve_equilibrium, verify_equilibrium
from .network import Branch, Bus, PlantTopology, SystemBase, build_reduced_network
from .node import DvocParams
from .numerics import integrate, jacobi_eigenvalues

__all__ = ["SelftestCheck", "run_selftest", "random_connected_topology"]

DEFAULT_BASE = SystemBase(s_va=10e6, v_volt=33e3, f0_hz=50.0)


@dataclass
class SelftestCheck:
    module: str
    name: str
    ok: bool
    detail: str


def random_connected_topology(
    rng: np.random.Generator,
    max_converters: int = 6,
    max_interior: int = 4,
    fixed_angle: float | None = None,
) -> PlantTopology:
    """Random spanning tree plus extra branches; always grid-connected.

    With ``fixed_angle`` set, every branch impedance uses that angle
    (uniform-angle networks are the regime where the rotated real part is
    provably positive definite).
    """
    n_c = int(rng.integers(1, max_converters + 1))
    n_i = int(rng.integers(0, max_interior + 1))
    buses = [Bus(f"c{k+1}", "converter") for k in range(n_c)]
    buses += [Bus(f"m{k+1}", "interior") for k in range(n_i)]
    buses.append(Bus("grid", "grid"))
    ids = [b.id for b in buses]

    def impedance() -> complex:
        mag = float(rng.uniform(0.02, 0.5))
        if fixed_angle is not None:
            return mag * complex(math.cos(fixed_angle), math.sin(fixed_angle))
        r = float(rng.uniform(0.01, 0.2))
        x = float(rng.uniform(0.02, 0.5))
        return complex(r, x)

    branches = []
    connected = ["grid"]
    todo = list(ids[:-1])
    rng.shuffle(todo)
    for bus in todo:
        anchor = connected[int(rng.integers(0, len(connected)))]
        branches.append(Branch(bus, anchor, impedance()))
        connected.append(bus)
    for _ in range(int(rng.integers(0, 3))):
        a, b = rng.choice(len(ids), size=2, replace=False)
        if ids[a] == "grid" and ids[b] == "grid":
            continue
        branches.append(Branch(ids[a], ids[b], impedance()))
    return PlantTopology(tuple(buses), tuple(branches), DEFAULT_BASE)


def full_network_currents(
    topology: PlantTopology, v_conv: np.ndarray, v_g: float
) -> np.ndarray:
    """Converter currents from a dense solve of the unreduced nodal system."""
    y_full, y_grid, order = net_mod.assemble_admittance(topology)
    n_c = len(topology.converter_ids)
    if len(order) == n_c:
        return y_full @ v_conv - y_grid * v_g
    cc = slice(0, n_c)
    ii = slice(n_c, len(order))
    v_int = np.linalg.solve(
        y_full[ii, ii], y_grid[ii] * v_g - y_full[ii, cc] @ v_conv
    )
    return y_full[cc, cc] @ v_conv + y_full[cc, ii] @ v_int - y_grid[cc] * v_g


def _check_eigensolver(rng) -> SelftestCheck:
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 4))
        a = rng.normal(size=(n, n))
        a = 0.5 * (a + a.T)
        mine = jacobi_eigenvalues(a)
        ref = np.sort(np.roots(np.poly(a)).real)
        worst = max(worst, float(np.max(np.abs(mine - ref))))
        # Rayleigh quotient bound
        r = rng.normal(size=n)
        r /= np.linalg.norm(r)
        if mine[0] > r @ a @ r + 1e-9:
            return SelftestCheck("numerics", "eigensolver", False, "Rayleigh bound violated")
    ok = worst < 1e-9
    return SelftestCheck("numerics", "eigensolver", ok, f"max eigenvalue error {worst:.2e}")


def _check_integrator() -> SelftestCheck:
    omega = 100.0 * math.pi

    def rotation(t, x):
        return np.array([-omega * x[1], omega * x[0]])

    res = integrate(rotation, [1.0, 0.0], (0.0, 0.02), h=1e-4)
    err = float(np.max(np.abs(res.x[-1] - np.array([1.0, 0.0]))))
    ok = err < 1e-7
    return SelftestCheck("numerics", "rk4_rotation", ok, f"period return error {err:.2e}")


def _check_kron_oracle(rng) -> SelftestCheck:
    worst = 0.0
    for _ in range(30):
        topo = random_connected_topology(rng)
        net = build_reduced_network(topo, phi=0.5)
        v = rng.normal(size=net.n_converters) + 1j * rng.normal(size=net.n_converters)
        v_g = float(rng.uniform(0.5, 1.5))
        i_red = net_mod.network_current_unrotated(net, v, v_g)
        i_full = full_network_currents(topo, v, v_g)
        worst = max(worst, float(np.max(np.abs(i_red - i_full))))
    ok = worst < 1e-9
    return SelftestCheck("network", "kron_reduction_oracle", ok, f"max current error {worst:.2e}")


def _random_params(rng) -> DvocParams:
    return DvocParams(
        eta=float(rng.uniform(1.0, 50.0)),
        alpha=float(rng.uniform(0.1, 5.0)),
        phi=float(rng.uniform(0.0, math.pi / 2)),
        p_star=float(rng.uniform(-math.sqrt(2), math.sqrt(2))),
        q_star=float(rng.uniform(-math.sqrt(2), math.sqrt(2))),
        v_star=float(rng.uniform(0.8, 1.2)),
    )


def dissipation_sample(rng, n_params: int, n_states: int) -> float:
    """Worst dissipation slack over random parameters, states and inputs."""
    worst = math.inf
    for _ in range(n_params):
        p = _random_params(rng)
        omega_delta = float(rng.uniform(-math.pi, math.pi))
        v_s = (
            rng.uniform(0.5, 1.5)
            * np.exp(1j * rng.uniform(-math.pi, math.pi))
        )
        i_phi_s = node_mod.steady_state_current(v_s, omega_delta, p)
        delta_k = node_mod.node_passivity_index(p, abs(v_s))
        mag = rng.uniform(0.1, 2.0, size=n_states)
        ang = rng.uniform(-math.pi, math.pi, size=n_states)
        v = mag * np.exp(1j * ang)
        i_phi = rng.normal(scale=1.5, size=n_states) + 1j * rng.normal(
            scale=1.5, size=n_states
        )
        r = node_mod.dissipation_residual(v, v_s, i_phi, i_phi_s, omega_delta, p, delta_k)
        worst = min(worst, float(np.min(r)))
    return worst


def _check_dissipation(rng) -> SelftestCheck:
    worst = dissipation_sample(rng, n_params=20, n_states=200)
    ok = worst >= -1e-9
    return SelftestCheck("node", "dissipation_inequality", ok, f"min residual {worst:.2e}")


def _check_cubic(rng) -> SelftestCheck:
    x = rng.normal(scale=2.0, size=(100_000, 2))
    y = rng.normal(scale=2.0, size=(100_000, 2))
    bad = int(np.sum(~node_mod.cubic_inequality_check(x, y)))
    return SelftestCheck("node", "cubic_inequality", bad == 0, f"{bad} violations")


def _check_rotation_identity(rng) -> SelftestCheck:
    worst = 0.0
    for _ in range(200):
        p = _random_params(rng)
        v = complex(rng.normal(), rng.normal())
        i = complex(rng.normal(), rng.normal())
        omega_delta = float(rng.uniform(-1.0, 1.0))
        a = node_mod.dvoc_rhs_unrotated(v, i, omega_delta, p)
        b = node_mod.dvoc_rhs_rotated(v, np.exp(1j * p.phi) * i, omega_delta, p)
        worst = max(worst, abs(a - b))
    ok = worst < 1e-10
    return SelftestCheck("node", "rotated_unrotated_identity", ok, f"max difference {worst:.2e}")


def _single_converter_scenario():
    from .simulator import Event, Scenario, SolverSettings

    phi = math.atan2(0.15, 0.05)
    topo = PlantTopology(
        (Bus("c1", "converter"), Bus("grid", "grid")),
        (Branch("c1", "grid", complex(0.05, 0.15)),),
        DEFAULT_BASE,
    )
    params = DvocParams(
        eta=0.04 * 100 * math.pi, alpha=2.0, phi=phi, p_star=1.0, q_star=0.0, i_max=5.0
    )
    return Scenario(
        topology=topo,
        converters=(params,),
        converter_buses=("c1",),
        phi_network=phi,
        events=(Event(time=0.05, kind="voltage_dip", depth=0.5, duration=0.1),),
        t_end=0.3,
        solver=SolverSettings(h=1e-4),
    )


def _check_equilibrium_roundtrip() -> SelftestCheck:
    scn = _single_converter_scenario()
    net = build_reduced_network(scn.topology, scn.phi_network, scn.v_g_nominal)
    eq = solve_equilibrium(net, scn.converters)
    if not eq.converged:
        return SelftestCheck("equilibrium", "solve_and_verify", False, eq.message)
    resid = verify_equilibrium(eq, net, scn.converters)
    ok = resid < 1e-9
    return SelftestCheck("equilibrium", "solve_and_verify", ok, f"residual {resid:.2e}")


def _check_model_equivalence() -> SelftestCheck:
    from .simulator import simulate, simulate_unrotated

    scn = _single_converter_scenario()
    a = simulate(scn)
    b = simulate_unrotated(scn)
    diff = float(np.max(np.abs(a.v - b.v)))
    ok = diff < 1e-6 and not a.aborted and not b.aborted
    return SelftestCheck("simulator", "model_equivalence", ok, f"max voltage diff {diff:.2e}")


def _check_certifier_composition() -> SelftestCheck:
    z = complex(0.05, 0.15)
    topo = PlantTopology(
        (Bus("c1", "converter"), Bus("grid", "grid")),
        (Branch("c1", "grid", z),),
        DEFAULT_BASE,
    )
    net = build_reduced_network(topo, phi=math.atan2(z.imag, z.real))
    eps = net_mod.network_passivity_index(net)
    p = DvocParams(eta=4 * math.pi, alpha=2.0, phi=math.pi / 2, p_star=1.0, q_star=0.0)
    delta = node_mod.node_passivity_index(p)
    ok = abs(eps - 1.0 / abs(z)) < 1e-9 and abs(delta + 2.0) < 1e-12
    return SelftestCheck(
        "certifier", "closed_form_indices", ok, f"eps={eps:.6f}, delta={delta:.6f}"
    )


def run_selftest(seed: int = 0, verbose_print=None) -> list[SelftestCheck]:
    rng = np.random.default_rng(seed)
    checks = [
        _check_eigensolver(rng),
        _check_integrator(),
        _check_kron_oracle(rng),
        _check_dissipation(rng),
        _check_cubic(rng),
        _check_rotation_identity(rng),
        _check_equilibrium_roundtrip(),
        _check_model_equivalence(),
        _check_certifier_composition(),
    ]
    if verbose_print is not None:
        for c in checks:
            status = "PASS" if c.ok else "FAIL"
            verbose_print(f"[{status}] {c.module}.{c.name}: {c.detail}")
    return checks
