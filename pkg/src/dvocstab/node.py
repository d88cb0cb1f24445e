"""dVOC converter node model.

A dispatchable-virtual-oscillator-controlled converter drives its terminal
voltage, represented as a single complex number v = v_d + j v_q in the
grid reference frame.  The control law combines a frequency term, a
power-tracking term rotated by the angle phi (typically the network
impedance angle), and an amplitude-regulation term.

Besides the dynamics, this module carries the node-side passivity
machinery: the output-feedback passivity index delta, the quadratic
storage function, and a residual form of the dissipation inequality that
must be nonnegative for every state/input pair.  All functions accept
either complex scalars or numpy complex arrays (broadcasting over states).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DvocParams",
    "rotated_setpoint_constants",
    "dvoc_rhs_rotated",
    "dvoc_rhs_unrotated",
    "node_passivity_index",
    "steady_state_current",
    "storage_value",
    "dissipation_residual",
    "cubic_inequality_check",
    "virtual_impedance",
]


@dataclass(frozen=True)
class DvocParams:
    """Controller record for one converter.

    eta and omega0 are in rad/s; everything else is per-unit.  phi is the
    rotation angle applied to the current feedback, constrained to
    [0, pi/2].  i_max, k_v and theta_v configure the virtual-impedance
    current limiter hook (k_v defaults steep so the limiter behaves almost
    like a hard cap; lower it for softer limiting).
    """

    eta: float
    alpha: float
    phi: float
    p_star: float
    q_star: float
    v_star: float = 1.0
    omega0: float = 100.0 * math.pi
    i_max: float = 1.2
    k_v: float = 200.0
    theta_v: float = math.atan(3.0)

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.v_star > 0:
            raise ValueError(f"v_star must be positive, got {self.v_star}")
        if not 0.0 <= self.phi <= math.pi / 2.0 + 1e-12:
            raise ValueError(f"phi must lie in [0, pi/2], got {self.phi}")
        if self.i_max < 0:
            raise ValueError("i_max must be nonnegative")


def rotated_setpoint_constants(p: DvocParams) -> tuple[float, float]:
    """(sigma, rho) with sigma + j rho = e^{j phi} (p* - j q*) / v*^2."""
    c = cmath.exp(1j * p.phi) * complex(p.p_star, -p.q_star) / p.v_star**2
    return c.real, c.imag


def dvoc_rhs_rotated(v, i_phi, omega_delta: float, p: DvocParams):
    """Voltage derivative with the rotated current i_phi = e^{j phi} i as input."""
    sigma, rho = rotated_setpoint_constants(p)
    amp = (p.v_star**2 - np.abs(v) ** 2) / p.v_star**2
    return 1j * omega_delta * v + p.eta * (
        complex(sigma, rho) * v - i_phi + p.alpha * amp * v
    )


def dvoc_rhs_unrotated(v, i, omega_delta: float, p: DvocParams):
    """Voltage derivative with the raw terminal current as input.

    Identical to the rotated form evaluated at i_phi = e^{j phi} i.
    """
    rot = cmath.exp(1j * p.phi)
    power = complex(p.p_star, -p.q_star) / p.v_star**2
    amp = (p.v_star**2 - np.abs(v) ** 2) / p.v_star**2
    return 1j * omega_delta * v + p.eta * rot * (power * v - i) + p.eta * p.alpha * amp * v


def node_passivity_index(p: DvocParams, v_s_mag=None) -> float:
    """Output-feedback passivity index delta of the node dynamics.

    With the equilibrium voltage magnitude supplied the full index
      -sigma - alpha + alpha |v_s|^2 / (2 v*^2)
    is returned; without it the last (always nonnegative) term is dropped,
    giving a conservative estimate that needs no equilibrium information.
    Typically negative: high power setpoints hurt passivity, high voltage
    levels help.
    """
    sigma, _ = rotated_setpoint_constants(p)
    delta = -sigma - p.alpha
    if v_s_mag is not None:
        v_s_mag = float(v_s_mag)
        if v_s_mag < 0:
            raise ValueError("equilibrium voltage magnitude must be nonnegative")
        delta += p.alpha * v_s_mag**2 / (2.0 * p.v_star**2)
    return delta


def steady_state_current(v_s, omega_delta: float, p: DvocParams):
    """Rotated current that holds the node at the voltage v_s."""
    sigma, rho = rotated_setpoint_constants(p)
    amp = (p.v_star**2 - np.abs(v_s) ** 2) / p.v_star**2
    return (1j * omega_delta / p.eta) * v_s + complex(sigma, rho) * v_s + p.alpha * amp * v_s


def storage_value(v, v_s, eta: float):
    """Quadratic storage |v - v_s|^2 / (2 eta); zero iff v = v_s."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    return np.abs(v - v_s) ** 2 / (2.0 * eta)


def dissipation_residual(
    v, v_s, i_phi, i_phi_s, omega_delta: float, p: DvocParams, delta_k: float
):
    """Slack of the node dissipation inequality; nonnegative for all inputs.

    Computes  Re{conj(v - v_s) (i_phi_s - i_phi)} - dV/dt - delta_k |v - v_s|^2
    with dV/dt evaluated analytically along the node dynamics.  The
    supplied (v_s, i_phi_s) must be a consistent steady-state pair.
    """
    pair_err = np.max(np.abs(steady_state_current(v_s, omega_delta, p) - i_phi_s))
    if pair_err > 1e-8:
        raise ValueError(
            f"(v_s, i_phi_s) is not a steady-state pair (residual {pair_err:.3e})"
        )
    e = v - v_s
    supply = np.real(np.conj(e) * (i_phi_s - i_phi))
    vdot = dvoc_rhs_rotated(v, i_phi, omega_delta, p)
    storage_rate = np.real(np.conj(e) * vdot) / p.eta
    return supply - storage_rate - delta_k * np.abs(e) ** 2


def cubic_inequality_check(x, y) -> np.ndarray | bool:
    """Check (x-y).(||x||^2 x - ||y||^2 y) >= ||y||^2 ||x-y||^2 / 2.

    Holds for every pair of real 2-vectors; used as a test fixture for the
    amplitude-term bound in the node passivity argument.  Accepts stacked
    inputs of shape (..., 2).  A small relative slack absorbs float
    roundoff near x = y.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.shape[-1] != 2:
        raise ValueError("expected matching arrays of 2-vectors")
    nx = np.sum(x * x, axis=-1)
    ny = np.sum(y * y, axis=-1)
    d = x - y
    lhs = np.sum(d * (nx[..., None] * x - ny[..., None] * y), axis=-1)
    rhs = 0.5 * ny * np.sum(d * d, axis=-1)
    slack = 1e-12 * np.maximum(1.0, np.maximum(nx, ny)) ** 2
    result = lhs + slack >= rhs
    return bool(result) if result.ndim == 0 else result


def virtual_impedance(i_mag: float, p: DvocParams) -> complex:
    """Series impedance emulated for current limiting.

    Zero at or below the current limit; above it, magnitude grows
    proportionally with gain k_v at the fixed angle theta_v.
    """
    if i_mag < 0:
        raise ValueError("current magnitude must be nonnegative")
    if i_mag <= p.i_max:
        return 0j
    m = p.k_v * (i_mag - p.i_max)
    return complex(m * math.cos(p.theta_v), m * math.sin(p.theta_v))
