"""Dense numerical kernels shared across the package.

Everything operates on small dense problems (plant scale, dimension up to
a few hundred): Hermitian-part extraction, a cyclic Jacobi eigensolver for
real symmetric matrices, a damped Newton root finder, and explicit
Runge-Kutta integrators.  Integrator state is always real; complex states
are carried as re/im interleaved flattenings, see ``complex_to_real`` and
``real_to_complex``.

All functions are pure and reentrant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "AsymmetryError",
    "IntegrationDivergedError",
    "NewtonResult",
    "IntegrationResult",
    "complex_to_real",
    "real_to_complex",
    "hermitian_real_part",
    "jacobi_eigenvalues",
    "min_eigenvalue",
    "finite_difference_jacobian",
    "newton_solve",
    "integrate",
]


class DimensionError(ValueError):
    """Operand shapes are inconsistent with the requested operation."""


class AsymmetryError(ValueError):
    """A matrix expected to be symmetric is asymmetric beyond tolerance."""


class IntegrationDivergedError(RuntimeError):
    """State became non-finite during integration."""

    def __init__(self, time: float, message: str = ""):
        super().__init__(message or f"integration diverged at t = {time:.9g} s")
        self.time = time


def complex_to_real(v) -> np.ndarray:
    """Flatten a complex vector to [re v1, im v1, re v2, im v2, ...]."""
    v = np.atleast_1d(np.asarray(v, dtype=complex))
    out = np.empty(2 * v.size)
    out[0::2] = v.real
    out[1::2] = v.imag
    return out


def real_to_complex(x) -> np.ndarray:
    """Inverse of :func:`complex_to_real`."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size % 2:
        raise DimensionError("interleaved real vector must have even length")
    return x[0::2] + 1j * x[1::2]


def hermitian_real_part(m) -> np.ndarray:
    """Real part of the Hermitian part of a square complex matrix.

    Returns ``Re{(M + M^H)/2}``, which is exactly symmetric by
    construction.  For a complex-symmetric admittance matrix this equals
    the elementwise real part of the matrix.
    """
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {m.shape}")
    h = 0.5 * (m + m.conj().T)
    return h.real


def _check_symmetric(a: np.ndarray, rtol: float = 1e-12) -> None:
    if a.size == 0:
        return
    scale = float(np.abs(a).max())
    dev = float(np.abs(a - a.T).max())
    if dev > rtol * max(scale, 1e-300):
        raise AsymmetryError(
            f"matrix asymmetric: max |A - A^T| = {dev:.3e} exceeds {rtol:.1e} * max|A|"
        )
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")


def jacobi_eigenvalues(a, tol: float = 1e-12, max_sweeps: int = 100) -> np.ndarray:
    """All eigenvalues of a real symmetric matrix, ascending.

    Cyclic Jacobi rotations on a working copy; convergence is declared
    when the off-diagonal Frobenius norm drops below ``tol * ||A||_F``.
    Robust and accurate to near machine precision for the dense plant
    matrices this package produces (n <= 200).
    """
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    _check_symmetric(a)
    n = a.shape[0]
    if n == 0:
        return np.empty(0)
    if n == 1:
        return a.diagonal().copy()

    target = tol * float(np.linalg.norm(a))
    for _ in range(max_sweeps):
        off = math.sqrt(2.0 * float(np.sum(np.triu(a, 1) ** 2)))
        if off <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                tau = (aqq - app) / (2.0 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.hypot(1.0, tau))
                c = 1.0 / math.hypot(1.0, t)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = 0.0
                a[q, p] = 0.0
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
    else:
        raise RuntimeError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")
    return np.sort(a.diagonal().copy())


def min_eigenvalue(a) -> float:
    """Smallest eigenvalue of a real symmetric matrix."""
    eig = jacobi_eigenvalues(a)
    if eig.size == 0:
        raise DimensionError("empty matrix has no eigenvalues")
    return float(eig[0])


@dataclass
class NewtonResult:
    x: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    message: str = ""


def finite_difference_jacobian(
    residual: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    f0: Optional[np.ndarray] = None,
    rel_step: float = 1e-7,
) -> np.ndarray:
    """Forward-difference Jacobian with per-component step rel_step*(1+|x_i|)."""
    x = np.asarray(x, dtype=float)
    if f0 is None:
        f0 = np.atleast_1d(np.asarray(residual(x), dtype=float))
    jac = np.empty((f0.size, x.size))
    for i in range(x.size):
        step = rel_step * (1.0 + abs(x[i]))
        xp = x.copy()
        xp[i] += step
        fi = np.atleast_1d(np.asarray(residual(xp), dtype=float))
        jac[:, i] = (fi - f0) / step
    return jac


def newton_solve(
    residual: Callable[[np.ndarray], np.ndarray],
    x0,
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    tol: float = 1e-10,
    max_iter: int = 100,
    max_halvings: int = 30,
) -> NewtonResult:
    """Damped Newton iteration driving ||residual(x)||_inf below tol.

    The step is halved (up to ``max_halvings`` times) until the residual
    norm decreases; a singular Jacobian falls back to a least-squares
    step.  Non-convergence is reported in the result rather than raised,
    carrying the last iterate and its residual norm.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    f = np.atleast_1d(np.asarray(residual(x), dtype=float))
    if f.size != x.size:
        raise DimensionError(
            f"residual dimension {f.size} does not match unknown dimension {x.size}"
        )
    fnorm = float(np.max(np.abs(f))) if f.size else 0.0
    if fnorm <= tol:
        return NewtonResult(x, fnorm, 0, True)

    for it in range(1, max_iter + 1):
        if jacobian is not None:
            jac = np.asarray(jacobian(x), dtype=float)
        else:
            jac = finite_difference_jacobian(residual, x, f0=f)
        try:
            step = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            step, *_ = np.linalg.lstsq(jac, -f, rcond=None)
        if not np.all(np.isfinite(step)):
            return NewtonResult(x, fnorm, it, False, "singular Jacobian, no usable step")

        lam = 1.0
        accepted = False
        for _ in range(max_halvings + 1):
            x_new = x + lam * step
            f_new = np.atleast_1d(np.asarray(residual(x_new), dtype=float))
            fnorm_new = float(np.max(np.abs(f_new)))
            if np.all(np.isfinite(f_new)) and fnorm_new < fnorm:
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            return NewtonResult(
                x, fnorm, it, False, f"no residual decrease after {max_halvings} halvings"
            )
        x, f, fnorm = x_new, f_new, fnorm_new
        if fnorm <= tol:
            return NewtonResult(x, fnorm, it, True)

    return NewtonResult(x, fnorm, max_iter, False, f"no convergence in {max_iter} iterations")


@dataclass
class IntegrationResult:
    t: np.ndarray  # (n_samples,)
    x: np.ndarray  # (n_samples, dim)


def _rk4_step(rhs, t, x, dt):
    k1 = rhs(t, x)
    k2 = rhs(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = rhs(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = rhs(t + dt, x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# Fehlberg 4(5) tableau
_RKF_A = (
    (),
    (0.25,),
    (3.0 / 32.0, 9.0 / 32.0),
    (1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0),
    (439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0),
    (-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0),
)
_RKF_C = (0.0, 0.25, 3.0 / 8.0, 12.0 / 13.0, 1.0, 0.5)
_RKF_B5 = (16.0 / 135.0, 0.0, 6656.0 / 12825.0, 28561.0 / 56430.0, -9.0 / 50.0, 2.0 / 55.0)
_RKF_B4 = (25.0 / 216.0, 0.0, 1408.0 / 2565.0, 2197.0 / 4104.0, -1.0 / 5.0, 0.0)


def _rkf45_step(rhs, t, x, dt):
    ks = []
    for i in range(6):
        xi = x
        for aij, kj in zip(_RKF_A[i], ks):
            xi = xi + dt * aij * kj
        ks.append(rhs(t + _RKF_C[i] * dt, xi))
    x5 = x + dt * sum(b * k for b, k in zip(_RKF_B5, ks))
    x4 = x + dt * sum(b * k for b, k in zip(_RKF_B4, ks))
    return x5, x5 - x4


def integrate(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    x0,
    t_span: Sequence[float],
    h: float = 1e-4,
    method: str = "rk4",
    rtol: float = 1e-8,
    atol: float = 1e-10,
) -> IntegrationResult:
    """Integrate ``dx/dt = rhs(t, x)`` over ``t_span``.

    ``method="rk4"`` takes fixed steps of ``h`` (final step shortened to
    land exactly on the end time); ``method="rk45"`` is an adaptive
    Fehlberg embedded pair controlled by ``rtol``/``atol`` with initial
    step ``h``.  A non-finite state aborts with
    :class:`IntegrationDivergedError` carrying the event time.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ValueError(f"t_span end {t1} must exceed start {t0}")
    if h <= 0:
        raise ValueError("step size h must be positive")
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    if not np.all(np.isfinite(x)):
        raise IntegrationDivergedError(t0, "initial state is non-finite")

    if method == "rk4":
        span = t1 - t0
        n_full = int(math.floor(span / h + 1e-9))
        times = [t0 + i * h for i in range(n_full + 1)]
        if t1 - times[-1] > 1e-12 * max(abs(t1), 1.0):
            times.append(t1)
        else:
            times[-1] = t1
        out = np.empty((len(times), x.size))
        out[0] = x
        for i in range(len(times) - 1):
            dt = times[i + 1] - times[i]
            x = _rk4_step(rhs, times[i], x, dt)
            if not np.all(np.isfinite(x)):
                raise IntegrationDivergedError(times[i + 1])
            out[i + 1] = x
        return IntegrationResult(np.asarray(times), out)

    if method == "rk45":
        t = t0
        dt = min(h, t1 - t0)
        ts = [t0]
        xs = [x.copy()]
        min_dt = 1e-14 * max(t1 - t0, 1.0)
        while t < t1 - 1e-12 * max(abs(t1), 1.0):
            dt = min(dt, t1 - t)
            x_new, err_vec = _rkf45_step(rhs, t, x, dt)
            if not np.all(np.isfinite(x_new)):
                raise IntegrationDivergedError(t + dt)
            scale = atol + rtol * np.maximum(np.abs(x), np.abs(x_new))
            err = float(np.max(np.abs(err_vec) / scale)) if x.size else 0.0
            if err <= 1.0:
                t = t + dt
                x = x_new
                ts.append(t)
                xs.append(x.copy())
            factor = 0.9 * (1.0 / err) ** 0.2 if err > 0 else 5.0
            dt = dt * min(5.0, max(0.2, factor))
            if dt < min_dt:
                raise IntegrationDivergedError(t, f"step size underflow at t = {t:.9g} s")
        ts[-1] = t1
        return IntegrationResult(np.asarray(ts), np.asarray(xs))

    raise ValueError(f"unknown integration method {method!r}")
