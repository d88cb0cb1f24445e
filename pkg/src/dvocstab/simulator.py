"""Closed-loop time-domain simulation with an event timeline.

The network is static (its electromagnetic dynamics are assumed fast), so
the only states are the 2N real voltage coordinates of the N converters;
the network algebra is eliminated inside the right-hand side at every
evaluation.  Events (grid voltage dips, grid impedance switches, limiter
mode changes) split the integration into segments with boundaries exactly
at the event times; nothing is interpolated across a discontinuity.

While the current limiter is active, the virtual impedances are held
constant within short sub-segments and re-solved at each boundary from
the entry state (a quasi-static limiter consistent with the static
network assumption).

Each segment carries a margin snapshot (certification of the active
network) and, when solvable, its own equilibrium, against which the
composite storage sum nu is tracked.  For a certified segment nu must be
non-increasing up to integration error; the monitor checks exactly that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .certifier import CertificationReport, certify
from .equilibrium import EquilibriumPoint, solve_equilibrium
from .network import (
    NetworkNotPassiveError,
    PlantTopology,
    ReducedNetwork,
    build_reduced_network,
)
from .node import DvocParams
from .numerics import IntegrationDivergedError, integrate, newton_solve

__all__ = [
    "Event",
    "SolverSettings",
    "Scenario",
    "SegmentRecord",
    "Trajectory",
    "OvercurrentRecord",
    "Violation",
    "EquilibriumNotFoundError",
    "scenario_network",
    "simulate",
    "simulate_unrotated",
    "lyapunov_monitor",
    "segment_nu_violations",
    "quasi_static_virtual_impedance",
    "overcurrent_scan",
]

EVENT_KINDS = ("voltage_dip", "grid_impedance_switch", "limiter_mode")
HYSTERESIS_BAND = 1e-3  # pu, limiter release band
_TIME_EPS = 1e-12


class EquilibriumNotFoundError(RuntimeError):
    """Pre-event equilibrium could not be solved and no initial state was given."""


@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    depth: Optional[float] = None  # retained grid voltage fraction during a dip
    duration: Optional[float] = None  # dip length, s
    z_new: Optional[complex] = None  # replacement grid impedance, pu
    on: Optional[bool] = None  # limiter mode

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if not self.time > 0:
            raise ValueError("event times must be positive")
        if self.kind == "voltage_dip":
            if self.depth is None or not 0.0 < self.depth <= 1.0:
                raise ValueError("dip depth must lie in (0, 1]")
            if self.duration is None or not self.duration > 0:
                raise ValueError("dip duration must be positive")
        elif self.kind == "grid_impedance_switch":
            if self.z_new is None or complex(self.z_new) == 0:
                raise ValueError("impedance switch needs a nonzero impedance")
        elif self.kind == "limiter_mode":
            if self.on is None:
                raise ValueError("limiter_mode event needs on=True/False")


@dataclass(frozen=True)
class SolverSettings:
    method: str = "rk4"
    h: float = 1e-4
    rtol: float = 1e-8
    atol: float = 1e-10
    limiter_dt: float = 1e-3  # sub-segment cap while the limiter is engaged

    def __post_init__(self):
        if self.h <= 0 or self.limiter_dt <= 0:
            raise ValueError("step sizes must be positive")
        if self.method not in ("rk4", "rk45"):
            raise ValueError(f"unknown solver method {self.method!r}")


@dataclass(frozen=True)
class Scenario:
    topology: PlantTopology
    converters: tuple[DvocParams, ...]
    converter_buses: tuple[str, ...]
    phi_network: float
    v_g_nominal: float = 1.0
    omega_delta: float = 0.0
    events: tuple[Event, ...] = ()
    t_end: float = 1.0
    solver: SolverSettings = SolverSettings()
    outputs: tuple[str, ...] = ("v", "i", "nu")
    limiter_enabled: bool = False
    initial_voltage: Optional[tuple[complex, ...]] = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "converters", tuple(self.converters))
        object.__setattr__(self, "converter_buses", tuple(self.converter_buses))
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        if self.initial_voltage is not None:
            object.__setattr__(
                self, "initial_voltage", tuple(complex(v) for v in self.initial_voltage)
            )
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if not self.v_g_nominal > 0:
            raise ValueError("nominal grid voltage must be positive")
        if len(self.converters) != len(self.converter_buses):
            raise ValueError("each converter needs a terminal bus assignment")
        if len(set(self.converter_buses)) != len(self.converter_buses):
            raise ValueError("converter terminal buses must be distinct")
        if self.converter_buses != self.topology.converter_ids:
            raise ValueError(
                "converter bus assignment must list the topology's converter buses "
                f"in order: expected {self.topology.converter_ids}, "
                f"got {self.converter_buses}"
            )
        times = [ev.time for ev in self.events]
        if any(b - a <= 0 for a, b in zip(times, times[1:])):
            raise ValueError("events must be strictly time-ordered")
        if any(t >= self.t_end for t in times):
            raise ValueError("events must occur before t_end")
        dips = [ev for ev in self.events if ev.kind == "voltage_dip"]
        for a, b in zip(dips, dips[1:]):
            if b.time < a.time + a.duration:
                raise ValueError("voltage dips must not overlap")
        if self.initial_voltage is not None and len(self.initial_voltage) != len(
            self.converters
        ):
            raise ValueError("initial voltage must have one entry per converter")
        unknown = set(self.outputs) - {"v", "i", "nu"}
        if unknown:
            raise ValueError(f"unknown output channels {sorted(unknown)}")

    @property
    def n_converters(self) -> int:
        return len(self.converters)


@dataclass
class SegmentRecord:
    t_start: float
    t_end: float
    idx_start: int  # first sample index of the segment
    idx_end: int  # last sample index (inclusive)
    v_g: float
    certified: Optional[bool]
    epsilon_net: Optional[float]
    min_margin: Optional[float]
    monitored: bool
    limiter_engaged: bool
    equilibrium: Optional[EquilibriumPoint]


@dataclass
class Trajectory:
    times: np.ndarray  # (M,)
    v: np.ndarray  # (M, N) complex, terminal voltages
    i: np.ndarray  # (M, N) complex, unrotated terminal currents
    nu: np.ndarray  # (M,) storage sum vs the active segment equilibrium (NaN if none)
    segments: list[SegmentRecord]
    converter_ids: tuple[str, ...]
    aborted: bool = False
    abort_time: Optional[float] = None


@dataclass
class OvercurrentRecord:
    converter_id: str
    first_time: float
    peak: float


@dataclass
class Violation:
    t_start: float
    t_end: float
    increase: float
    budget: float


@dataclass
class _Stacked:
    eta: np.ndarray
    alpha: np.ndarray
    sigma_rho: np.ndarray  # complex
    power: np.ndarray  # complex, (p* - j q*)/v*^2
    phase: np.ndarray  # complex, e^{j phi_k}
    v_star_sq: np.ndarray
    i_max: np.ndarray
    k_v: np.ndarray
    theta_v: np.ndarray


def _stack(params: Sequence[DvocParams]) -> _Stacked:
    phase = np.array([np.exp(1j * p.phi) for p in params])
    power = np.array([complex(p.p_star, -p.q_star) / p.v_star**2 for p in params])
    return _Stacked(
        eta=np.array([p.eta for p in params]),
        alpha=np.array([p.alpha for p in params]),
        sigma_rho=phase * power,
        power=power,
        phase=phase,
        v_star_sq=np.array([p.v_star**2 for p in params]),
        i_max=np.array([p.i_max for p in params]),
        k_v=np.array([p.k_v for p in params]),
        theta_v=np.array([p.theta_v for p in params]),
    )


def scenario_network(scenario: Scenario, topology: Optional[PlantTopology] = None):
    """Reduced network and parameter list in converter order."""
    topo = topology if topology is not None else scenario.topology
    net = build_reduced_network(topo, scenario.phi_network, scenario.v_g_nominal)
    return net, scenario.converters


def _make_rhs(
    net: ReducedNetwork,
    v_g: float,
    omega_delta: float,
    s: _Stacked,
    model: str,
) -> Callable[[float, np.ndarray], np.ndarray]:
    y = net.y_matrix
    yg = net.y_grid
    if model == "rotated":

        def rhs(t, x):
            v = x[0::2] + 1j * x[1::2]
            i = y @ v - yg * v_g
            amp = (s.v_star_sq - (v.real**2 + v.imag**2)) / s.v_star_sq
            dv = 1j * omega_delta * v + s.eta * (
                s.sigma_rho * v - s.phase * i + s.alpha * amp * v
            )
            out = np.empty(x.size)
            out[0::2] = dv.real
            out[1::2] = dv.imag
            return out

    elif model == "unrotated":

        def rhs(t, x):
            v = x[0::2] + 1j * x[1::2]
            i = y @ v - yg * v_g
            amp = (s.v_star_sq - (v.real**2 + v.imag**2)) / s.v_star_sq
            dv = (
                1j * omega_delta * v
                + s.eta * s.phase * (s.power * v - i)
                + s.eta * s.alpha * amp * v
            )
            out = np.empty(x.size)
            out[0::2] = dv.real
            out[1::2] = dv.imag
            return out

    else:
        raise ValueError(f"unknown model {model!r}")
    return rhs


def _limited_currents(
    net: ReducedNetwork, v: np.ndarray, v_g: float, z_v: np.ndarray
) -> np.ndarray:
    """Terminal currents with series virtual impedances z_v in place."""
    base = net.y_matrix @ v - net.y_grid * v_g
    if not np.any(z_v != 0):
        return base
    lhs = np.eye(net.n_converters) + net.y_matrix @ np.diag(z_v)
    return np.linalg.solve(lhs, base)


def _consistent_limiter(
    net: ReducedNetwork,
    v: np.ndarray,
    v_g: float,
    s: _Stacked,
    m0: np.ndarray,
) -> np.ndarray:
    """Virtual impedance magnitudes consistent with the currents they cause.

    Solves m_k = k_v (|i_k(m)| - i_max)_+ where i(m) includes the
    impedances themselves; the proportional law alone would overshoot and
    chatter when re-measured, so the quasi-static fixed point is used.
    """
    phase_v = np.exp(1j * s.theta_v)
    n = m0.size
    eye = np.eye(n)
    base_i = net.y_matrix @ v - net.y_grid * v_g

    def currents(m: np.ndarray) -> np.ndarray:
        z = np.clip(m, 0.0, None) * phase_v
        if not np.any(z != 0):
            return base_i
        return np.linalg.solve(eye + net.y_matrix @ np.diag(z), base_i)

    def magnitudes(m: np.ndarray) -> np.ndarray:
        return np.abs(currents(m))

    raw = magnitudes(np.zeros_like(m0))
    if np.all(raw <= s.i_max):
        return np.zeros_like(m0)

    def residual(m: np.ndarray) -> np.ndarray:
        return m - s.k_v * np.maximum(0.0, magnitudes(m) - s.i_max)

    def jacobian(m: np.ndarray) -> np.ndarray:
        # i(m) = A^-1 b with A = I + Y diag(m phase); di/dm_k is the k-th
        # column of -A^-1 Y scaled by phase_k i_k
        z = np.clip(m, 0.0, None) * phase_v
        a = eye + net.y_matrix @ np.diag(z)
        sol = np.linalg.solve(a, np.concatenate([base_i[:, None], net.y_matrix], axis=1))
        i = sol[:, 0]
        w = sol[:, 1:]
        di_dm = -w * (phase_v * i)[None, :]
        mag = np.abs(i)
        unit = np.conj(i) / np.where(mag > 0, mag, 1.0)
        dmag = np.real(unit[:, None] * di_dm)
        gate = (s.k_v * (mag > s.i_max))[:, None]
        return eye - gate * dmag

    starts = (
        np.clip(m0, 0.0, None),
        np.zeros_like(m0),
        s.k_v * np.maximum(0.0, raw - s.i_max),  # one explicit pass
    )
    for start in starts:
        result = newton_solve(residual, start, jacobian=jacobian, tol=1e-9, max_iter=80)
        if result.converged:
            return np.clip(result.x, 0.0, None)

    # coordinate-wise bisection sweeps: each coordinate residual is
    # monotone in its own impedance, so this always brackets
    n = m0.size
    m = np.clip(m0, 0.0, None).copy()
    for _ in range(200):
        moved = 0.0
        for k in range(n):

            def coord(mk: float) -> float:
                trial = m.copy()
                trial[k] = mk
                return mk - s.k_v[k] * max(0.0, magnitudes(trial)[k] - s.i_max[k])

            if coord(0.0) >= 0.0:
                new = 0.0
            else:
                hi = max(1.0, 2.0 * m[k])
                while coord(hi) < 0.0:
                    hi *= 2.0
                    if hi > 1e9:
                        raise RuntimeError(
                            "virtual-impedance consistency solve found no bracket"
                        )
                lo = 0.0
                for _ in range(80):
                    mid = 0.5 * (lo + hi)
                    if coord(mid) < 0.0:
                        lo = mid
                    else:
                        hi = mid
                new = 0.5 * (lo + hi)
            moved = max(moved, abs(new - m[k]))
            m[k] = new
        if moved < 1e-10:
            return m
    raise RuntimeError("virtual-impedance consistency iteration did not converge")


@dataclass
class _SegmentState:
    v_g: float
    topology: PlantTopology
    limiter_on: bool


def _event_boundaries(scenario: Scenario):
    """Sorted boundary times with the actions applied at each."""
    actions: list[tuple[float, tuple]] = []
    for ev in scenario.events:
        actions.append((ev.time, ("apply", ev)))
        if ev.kind == "voltage_dip":
            t_clear = ev.time + ev.duration
            if t_clear < scenario.t_end - _TIME_EPS:
                actions.append((t_clear, ("clear_dip", ev)))
    actions.sort(key=lambda item: item[0])
    grouped: list[tuple[float, list]] = []
    for t, act in actions:
        if grouped and abs(grouped[-1][0] - t) <= _TIME_EPS:
            grouped[-1][1].append(act)
        else:
            grouped.append((t, [act]))
    return grouped


def pre_event_equilibrium(scenario: Scenario) -> EquilibriumPoint:
    """Equilibrium of the system before any event fires."""
    net, params = scenario_network(scenario)
    return solve_equilibrium(net, params, scenario.omega_delta, scenario.v_g_nominal)


def simulate(scenario: Scenario, model: str = "rotated") -> Trajectory:
    """Integrate the scenario and return the sampled trajectory.

    The initial state is the solved pre-event equilibrium unless the
    scenario supplies an explicit initial voltage.  A non-finite state
    aborts the run; the returned trajectory is flagged and carries the
    abort time.
    """
    params = scenario.converters
    n = scenario.n_converters
    s = _stack(params)
    solver = scenario.solver
    eta = s.eta

    nets: dict[int, ReducedNetwork] = {}

    def reduced(topology: PlantTopology) -> ReducedNetwork:
        key = id(topology)
        if key not in nets:
            nets[key] = build_reduced_network(
                topology, scenario.phi_network, scenario.v_g_nominal
            )
        return nets[key]

    state = _SegmentState(
        v_g=scenario.v_g_nominal,
        topology=scenario.topology,
        limiter_on=scenario.limiter_enabled,
    )
    net0 = reduced(state.topology)

    if scenario.initial_voltage is not None:
        v0 = np.array(scenario.initial_voltage, dtype=complex)
    else:
        eq0 = solve_equilibrium(net0, params, scenario.omega_delta, state.v_g)
        if not eq0.converged:
            raise EquilibriumNotFoundError(
                "pre-event equilibrium not found and no initial voltage given: "
                + eq0.message
            )
        v0 = eq0.v_s

    x = np.empty(2 * n)
    x[0::2] = v0.real
    x[1::2] = v0.imag

    times: list[np.ndarray] = []
    vs: list[np.ndarray] = []
    cur: list[np.ndarray] = []
    nus: list[np.ndarray] = []
    segments: list[SegmentRecord] = []
    sample_count = 0
    aborted = False
    abort_time: Optional[float] = None

    boundaries = _event_boundaries(scenario)
    macro_edges = [0.0] + [t for t, _ in boundaries] + [scenario.t_end]
    coarse_dt = max(solver.limiter_dt, 1e-3)

    m_prev = np.zeros(n)
    boundary_idx = 0

    for seg_no in range(len(macro_edges) - 1):
        t_a, t_b = macro_edges[seg_no], macro_edges[seg_no + 1]
        if seg_no > 0:
            for act, ev in boundaries[boundary_idx][1]:
                if act == "apply" and ev.kind == "voltage_dip":
                    state.v_g = ev.depth * scenario.v_g_nominal
                elif act == "clear_dip":
                    state.v_g = scenario.v_g_nominal
                elif act == "apply" and ev.kind == "grid_impedance_switch":
                    state.topology = state.topology.with_grid_impedance(ev.z_new)
                elif act == "apply" and ev.kind == "limiter_mode":
                    state.limiter_on = ev.on
            boundary_idx += 1
        if t_b - t_a <= _TIME_EPS:
            continue

        base_net = reduced(state.topology)

        # margin snapshot + equilibrium for the active (unaugmented) system
        try:
            report = certify(base_net, params)
            seg_certified: Optional[bool] = report.certified
            seg_eps: Optional[float] = report.epsilon_net
            seg_margin: Optional[float] = report.min_margin
        except NetworkNotPassiveError as exc:
            seg_certified, seg_eps, seg_margin = False, exc.epsilon_net, None
        seg_eq = solve_equilibrium(
            base_net,
            params,
            scenario.omega_delta,
            state.v_g,
            initial_guess=x[0::2] + 1j * x[1::2],
        )
        seg_eq_ok = seg_eq.converged

        # leaf sub-segments: one per macro segment unless the limiter is on
        t_leaf = t_a
        while t_leaf < t_b - _TIME_EPS:
            if state.limiter_on:
                v_now = x[0::2] + 1j * x[1::2]
                m_prev = _consistent_limiter(base_net, v_now, state.v_g, s, m_prev)
                engaged = bool(np.any(m_prev > 0.0)) or bool(
                    np.any(
                        np.abs(_limited_currents(base_net, v_now, state.v_g, m_prev * 0))
                        > s.i_max - HYSTERESIS_BAND
                    )
                )
                dt_leaf = solver.limiter_dt if engaged else coarse_dt
                t_next = min(t_leaf + dt_leaf, t_b)
                z_v = m_prev * np.exp(1j * s.theta_v)
                if np.any(m_prev > 0.0):
                    lhs = np.eye(n) + base_net.y_matrix @ np.diag(z_v)
                    sol = np.linalg.solve(
                        lhs,
                        np.concatenate(
                            [base_net.y_matrix, base_net.y_grid[:, None]], axis=1
                        ),
                    )
                    net_eff = ReducedNetwork(
                        y_matrix=sol[:, :-1],
                        y_grid=sol[:, -1],
                        v_g=base_net.v_g,
                        phi=base_net.phi,
                        converter_ids=base_net.converter_ids,
                    )
                    limited = True
                else:
                    net_eff = base_net
                    limited = False
            else:
                m_prev = np.zeros(n)
                t_next = t_b
                net_eff = base_net
                limited = False

            rhs = _make_rhs(net_eff, state.v_g, scenario.omega_delta, s, model)
            try:
                res = integrate(
                    rhs,
                    x,
                    (t_leaf, t_next),
                    h=solver.h,
                    method=solver.method,
                    rtol=solver.rtol,
                    atol=solver.atol,
                )
            except IntegrationDivergedError as exc:
                aborted = True
                abort_time = exc.time
                break

            x = res.x[-1].copy()
            skip = 1 if sample_count > 0 else 0
            seg_t = res.t[skip:]
            seg_v = res.x[skip:, 0::2] + 1j * res.x[skip:, 1::2]
            seg_i = seg_v @ net_eff.y_matrix.T - state.v_g * net_eff.y_grid
            monitored = seg_eq_ok and not limited
            if monitored:
                dev = seg_v - seg_eq.v_s
                seg_nu = np.sum((dev.real**2 + dev.imag**2) / (2.0 * eta), axis=1)
            else:
                seg_nu = np.full(seg_t.size, np.nan)

            idx_start = max(sample_count - skip, 0)
            times.append(seg_t)
            vs.append(seg_v)
            cur.append(seg_i)
            nus.append(seg_nu)
            sample_count += seg_t.size
            segments.append(
                SegmentRecord(
                    t_start=t_leaf,
                    t_end=t_next,
                    idx_start=idx_start,
                    idx_end=sample_count - 1,
                    v_g=state.v_g,
                    certified=None if limited else seg_certified,
                    epsilon_net=None if limited else seg_eps,
                    min_margin=None if limited else seg_margin,
                    monitored=monitored,
                    limiter_engaged=limited,
                    equilibrium=seg_eq if monitored else None,
                )
            )
            t_leaf = t_next
        if aborted:
            break

    if sample_count == 0:
        t_arr = np.array([0.0])
        v_arr = v0.reshape(1, -1)
        i_arr = (v0 @ net0.y_matrix.T - state.v_g * net0.y_grid).reshape(1, -1)
        nu_arr = np.array([np.nan])
    else:
        t_arr = np.concatenate(times)
        v_arr = np.concatenate(vs)
        i_arr = np.concatenate(cur)
        nu_arr = np.concatenate(nus)

    return Trajectory(
        times=t_arr,
        v=v_arr,
        i=i_arr,
        nu=nu_arr,
        segments=segments,
        converter_ids=net0.converter_ids,
        aborted=aborted,
        abort_time=abort_time,
    )


def simulate_unrotated(scenario: Scenario) -> Trajectory:
    """Simulate using the unrotated model; voltages match :func:`simulate`.

    The rotated and unrotated formulations are algebraically equivalent,
    so the trajectories agree to integration accuracy; this entry point
    exists to check exactly that.
    """
    return simulate(scenario, model="unrotated")


def lyapunov_monitor(
    traj: Trajectory,
    equilibrium: EquilibriumPoint,
    params: Sequence[DvocParams],
    tol_abs: float = 1e-7,
    tol_rel: float = 1e-4,
):
    """Storage sum nu(t) against a given equilibrium, with decrease checks.

    Returns ``(nu, violations)`` where violations lists every sample
    interval on which nu grew by more than the integration-error budget
    ``tol_abs + tol_rel * nu``.  Only certified segments whose own active
    equilibrium coincides with the supplied one are checked (elsewhere the
    supplied equilibrium is not the attractor and nu may legitimately
    grow).
    """
    n = traj.v.shape[1]
    if equilibrium.v_s.shape != (n,) or len(params) != n:
        raise ValueError("equilibrium/trajectory dimensions do not match")
    eta = np.array([p.eta for p in params])
    dev = traj.v - equilibrium.v_s
    nu = np.sum((dev.real**2 + dev.imag**2) / (2.0 * eta), axis=1)

    violations: list[Violation] = []
    for seg in traj.segments:
        if not seg.certified or not seg.monitored:
            continue
        if seg.equilibrium is None or np.max(
            np.abs(seg.equilibrium.v_s - equilibrium.v_s)
        ) > 1e-6:
            continue
        lo, hi = seg.idx_start, seg.idx_end
        for k in range(lo, hi):
            budget = tol_abs + tol_rel * nu[k]
            dn = nu[k + 1] - nu[k]
            if dn > budget:
                violations.append(
                    Violation(traj.times[k], traj.times[k + 1], float(dn), float(budget))
                )
    return nu, violations


def segment_nu_violations(
    traj: Trajectory,
    params: Sequence[DvocParams],
    tol_abs: float = 1e-7,
    tol_rel: float = 1e-4,
) -> list[Violation]:
    """Decrease check of nu against each segment's own equilibrium.

    Only segments that carry an equilibrium and a positive certificate are
    checked; the trajectory's stored nu channel is not reused because its
    first sample in each segment still refers to the previous equilibrium.
    """
    eta = np.array([p.eta for p in params])
    violations: list[Violation] = []
    for seg in traj.segments:
        if not (seg.certified and seg.monitored and seg.equilibrium is not None):
            continue
        rows = slice(seg.idx_start, seg.idx_end + 1)
        dev = traj.v[rows] - seg.equilibrium.v_s
        nu = np.sum((dev.real**2 + dev.imag**2) / (2.0 * eta), axis=1)
        t = traj.times[rows]
        for k in range(nu.size - 1):
            budget = tol_abs + tol_rel * nu[k]
            dn = nu[k + 1] - nu[k]
            if dn > budget:
                violations.append(Violation(float(t[k]), float(t[k + 1]), float(dn), float(budget)))
    return violations


def quasi_static_virtual_impedance(
    net: ReducedNetwork, v, v_g: float, params: Sequence[DvocParams]
) -> np.ndarray:
    """Self-consistent limiter impedances for a given operating state."""
    s = _stack(params)
    v = np.asarray(v, dtype=complex)
    m = _consistent_limiter(net, v, v_g, s, np.zeros(net.n_converters))
    return m * np.exp(1j * s.theta_v)


def overcurrent_scan(traj: Trajectory, i_max: Sequence[float]) -> list[OvercurrentRecord]:
    """Per-converter current-limit exceedances along the trajectory."""
    n = traj.v.shape[1]
    limits = np.asarray(i_max, dtype=float)
    if limits.shape != (n,):
        raise ValueError("one current limit per converter required")
    records: list[OvercurrentRecord] = []
    mags = np.abs(traj.i)
    for k in range(n):
        over = np.nonzero(mags[:, k] > limits[k])[0]
        if over.size:
            records.append(
                OvercurrentRecord(
                    converter_id=traj.converter_ids[k],
                    first_time=float(traj.times[over[0]]),
                    peak=float(mags[:, k].max()),
                )
            )
    return records
