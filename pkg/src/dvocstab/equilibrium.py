"""Closed-loop equilibrium of the converter/network feedback system.

An equilibrium is a voltage vector v_s at which every node's steady-state
current equals the current the network delivers at those voltages.  The
residual is solved with damped Newton iterations over the re/im
interleaved real unknowns.  Existence is assumed, not guaranteed: a
non-convergent solve is reported, not raised.

A converter-frame rotation is applied per node (e^{j phi_k}), which
coincides with rotating the whole network when all converters share one
phi.
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .network import ReducedNetwork
from .node import DvocParams, steady_state_current
from .numerics import complex_to_real, newton_solve, real_to_complex

__all__ = ["EquilibriumPoint", "solve_equilibrium", "verify_equilibrium"]

# solutions with any |v_s| below this are rejected as non-operational
MIN_OPERATIONAL_VOLTAGE = 0.1


@dataclass
class EquilibriumPoint:
    v_s: np.ndarray  # (N,) complex
    i_phi_s: np.ndarray  # (N,) complex, node-frame rotated currents
    residual_norm: float
    converged: bool
    iterations: int = 0
    message: str = ""
    unique_among_starts: Optional[bool] = None


def _node_phases(params: Sequence[DvocParams]) -> np.ndarray:
    return np.array([cmath.exp(1j * p.phi) for p in params], dtype=complex)


def _closed_loop_residual(
    v: np.ndarray,
    net: ReducedNetwork,
    params: Sequence[DvocParams],
    omega_delta: float,
    v_g: float,
    phases: np.ndarray,
) -> np.ndarray:
    i_node = phases * (net.y_matrix @ v - net.y_grid * v_g)
    i_ss = np.array(
        [steady_state_current(v[k], omega_delta, p) for k, p in enumerate(params)],
        dtype=complex,
    )
    return i_ss - i_node


def solve_equilibrium(
    net: ReducedNetwork,
    params: Sequence[DvocParams],
    omega_delta: float = 0.0,
    v_g: Optional[float] = None,
    initial_guess=None,
    tol: float = 1e-10,
    max_iter: int = 100,
    multistart: int = 0,
    seed: int = 0,
) -> EquilibriumPoint:
    """Solve for the operating point of the coupled system.

    The default initial guess is the flat profile v_k = v*_k.  With
    ``multistart`` > 0 that many perturbed starts are also solved and
    ``unique_among_starts`` reports whether they all landed on the same
    point within 1e-6 (evidence of uniqueness, not proof).
    """
    n = net.n_converters
    if len(params) != n:
        raise ValueError(f"got {len(params)} parameter records for {n} converters")
    if v_g is None:
        v_g = net.v_g
    if not v_g > 0:
        raise ValueError("grid voltage must be positive")
    if n == 0:
        return EquilibriumPoint(
            np.empty(0, complex), np.empty(0, complex), 0.0, True, 0, "empty plant"
        )

    phases = _node_phases(params)

    def residual(x: np.ndarray) -> np.ndarray:
        v = real_to_complex(x)
        return complex_to_real(
            _closed_loop_residual(v, net, params, omega_delta, v_g, phases)
        )

    if initial_guess is None:
        x0 = complex_to_real(np.array([p.v_star for p in params], dtype=complex))
    else:
        guess = np.asarray(initial_guess, dtype=complex)
        if guess.shape != (n,):
            raise ValueError("initial guess must have one entry per converter")
        x0 = complex_to_real(guess)

    result = newton_solve(residual, x0, tol=tol, max_iter=max_iter)
    v_sol = real_to_complex(result.x)
    converged = result.converged
    message = result.message
    if converged and np.min(np.abs(v_sol)) < MIN_OPERATIONAL_VOLTAGE:
        converged = False
        message = (
            f"solution rejected: |v_s| = {np.min(np.abs(v_sol)):.3g} pu is below the "
            f"{MIN_OPERATIONAL_VOLTAGE} pu operational floor"
        )

    i_phi_s = phases * (net.y_matrix @ v_sol - net.y_grid * v_g)
    point = EquilibriumPoint(
        v_sol, i_phi_s, result.residual_norm, converged, result.iterations, message
    )

    if multistart > 0 and converged:
        rng = np.random.default_rng(seed)
        same = True
        for _ in range(multistart):
            perturbed = x0 + rng.normal(scale=0.05, size=x0.size)
            alt = newton_solve(residual, perturbed, tol=tol, max_iter=max_iter)
            if not alt.converged:
                same = False
                continue
            alt_v = real_to_complex(alt.x)
            if np.max(np.abs(alt_v - v_sol)) > 1e-6:
                same = False
        point.unique_among_starts = same
    return point


def verify_equilibrium(
    point: EquilibriumPoint,
    net: ReducedNetwork,
    params: Sequence[DvocParams],
    omega_delta: float = 0.0,
    v_g: Optional[float] = None,
) -> float:
    """Independent residual check of an equilibrium point.

    Recomputes the node steady-state relation and the network relation
    entry by entry with its own arithmetic (no code shared with the Newton
    objective) and returns the infinity norm of all mismatches, including
    the stored current vector.
    """
    n = net.n_converters
    if point.v_s.shape != (n,) or len(params) != n:
        raise ValueError("equilibrium point does not match the network dimension")
    if v_g is None:
        v_g = net.v_g
    worst = 0.0
    for k in range(n):
        p = params[k]
        acc = 0j
        for j in range(n):
            acc += complex(net.y_matrix[k, j]) * complex(point.v_s[j])
        acc -= complex(net.y_grid[k]) * v_g
        i_node = cmath.exp(1j * p.phi) * acc

        v = complex(point.v_s[k])
        setpoint = cmath.exp(1j * p.phi) * complex(p.p_star, -p.q_star) / (p.v_star * p.v_star)
        amplitude = p.alpha * (p.v_star * p.v_star - abs(v) * abs(v)) / (p.v_star * p.v_star)
        i_ss = (1j * omega_delta / p.eta) * v + setpoint * v + amplitude * v

        worst = max(worst, abs(i_ss - i_node), abs(i_node - complex(point.i_phi_s[k])))
    return worst
