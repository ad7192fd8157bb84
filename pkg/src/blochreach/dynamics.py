"""Bloch-vector dynamics of a driven two-level open quantum system.

The density matrix obeys a GKSL master equation with a coherent control
``v`` entering the Hamiltonian and an incoherent control ``n`` entering the
dissipator. In Bloch form ``x = (x1, x2, x3)`` the dynamics is affine::

    dx/dt = (A + Bv * v(t) + Bn * n(t)) x + d

For piecewise-constant controls every segment is solved exactly through the
exponential of the 4x4 augmented generator ``[[A + Bv v + Bn n, d], [0, 0]]``.
An adaptive Runge-Kutta integrator and a direct density-matrix integrator are
kept as independent oracles.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import solve_ivp

from . import _kernels
from .controls import PiecewiseControl

__all__ = [
    "SystemParams",
    "BlochMatrices",
    "IntegrationError",
    "bloch_matrices",
    "expm_batch",
    "segment_propagators",
    "propagate_exact",
    "propagate_endpoints",
    "propagate_adaptive",
    "density_from_bloch",
    "bloch_from_density",
    "gksl_rhs",
    "propagate_gksl",
    "SIGMA",
]

SIGMA = (
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)
# sigma^+ raises |0> -> |1>, sigma^- lowers; level 0 is the north pole
SIGMA_PLUS = np.array([[0, 0], [1, 0]], dtype=complex)
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)

DENSITY_TOL = 1e-10


class IntegrationError(RuntimeError):
    """Adaptive integration could not reach the end of a segment."""


@dataclass(frozen=True)
class SystemParams:
    """Physical constants in dimensionless units.

    ``kappa`` is the coupling of the coherent control (mu / hbar).
    """

    omega: float = 1.0
    gamma: float = 0.05
    kappa: float = 0.01

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.kappa == 0 or not np.isfinite(self.kappa):
            raise ValueError(f"kappa must be finite and nonzero, got {self.kappa}")


@dataclass(frozen=True)
class BlochMatrices:
    A: np.ndarray
    Bv: np.ndarray
    Bn: np.ndarray
    d: np.ndarray

    def generator(self, v: float, n: float) -> np.ndarray:
        return self.A + self.Bv * v + self.Bn * n


@lru_cache(maxsize=64)
def bloch_matrices(params: SystemParams) -> BlochMatrices:
    g, w, k = params.gamma, params.omega, params.kappa
    A = np.array([[-g / 2, w, 0.0], [-w, -g / 2, 0.0], [0.0, 0.0, -g]])
    Bv = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -2 * k], [0.0, 2 * k, 0.0]])
    Bn = np.diag([-g, -g, -2 * g])
    d = np.array([0.0, 0.0, g])
    for arr in (A, Bv, Bn, d):
        arr.flags.writeable = False  # shared through the cache
    return BlochMatrices(A, Bv, Bn, d)


def expm_batch(a: np.ndarray) -> np.ndarray:
    """Matrix exponential of a stack ``(..., n, n)`` of real matrices.

    Scaling and squaring with a degree-13 Pade approximant, scaling power
    chosen per matrix.
    """
    a = np.asarray(a, dtype=float)
    shape = a.shape
    flat = np.ascontiguousarray(a.reshape(-1, shape[-2], shape[-1]))
    return _kernels.expm_stack(flat).reshape(shape)


def segment_propagators(
    mats: BlochMatrices, v: np.ndarray, n: np.ndarray, dt: float
) -> np.ndarray:
    """Augmented 4x4 one-segment propagators for control values ``v``, ``n``.

    ``v`` and ``n`` share any broadcastable shape ``S``; the result has shape
    ``S + (4, 4)``.
    """
    v = np.asarray(v, dtype=float)
    n = np.asarray(n, dtype=float)
    v, n = np.broadcast_arrays(v, n)
    gen = np.zeros(v.shape + (4, 4))
    gen[..., :3, :3] = (
        mats.A + mats.Bv * v[..., None, None] + mats.Bn * n[..., None, None]
    )
    gen[..., :3, 3] = mats.d
    return expm_batch(gen * dt)


def _check_control(u: PiecewiseControl) -> None:
    if u.Nv != u.Nn:
        raise ValueError(
            f"coherent and incoherent controls must share one time grid "
            f"(Nv={u.Nv}, Nn={u.Nn})"
        )


def _check_state(x0) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (3,):
        raise ValueError(f"Bloch vector must have 3 components, got shape {x0.shape}")
    if x0 @ x0 > 1 + 1e-9:
        raise ValueError(f"initial state {x0} lies outside the Bloch ball")
    return x0


def propagate_exact(x0, u: PiecewiseControl, params: SystemParams) -> np.ndarray:
    """Exact trajectory at the control breakpoints.

    Returns an array of shape ``(N + 1, 3)``: ``x0`` followed by the state at
    every breakpoint ``t_j = j T / N``; the last row is ``x(T | u)``.
    """
    _check_control(u)
    x0 = _check_state(x0)
    if u.T == 0:
        return np.tile(x0, (u.Nv + 1, 1))
    m = bloch_matrices(params)
    return _kernels.trajectory(x0, u.v, u.n, u.dt, m.A, m.Bv, m.Bn, m.d)


def propagate_endpoints(x0, v, n, T: float, params: SystemParams) -> np.ndarray:
    """Vectorized endpoints ``x(T | u)`` for a batch of controls.

    ``v`` and ``n`` have shape ``(B, N)``; ``x0`` is ``(3,)`` or ``(B, 3)``.
    Returns ``(B, 3)``. This is the evaluator used inside optimization loops.
    """
    v = np.atleast_2d(np.asarray(v, dtype=float))
    n = np.atleast_2d(np.asarray(n, dtype=float))
    if v.shape != n.shape:
        raise ValueError(f"v and n shapes differ: {v.shape} vs {n.shape}")
    batch, steps = v.shape
    x = np.asarray(x0, dtype=float).reshape(-1, 3)
    if x.shape[0] not in (1, batch):
        raise ValueError(f"x0 has {x.shape[0]} rows for a batch of {batch}")
    if T == 0 or steps == 0:
        return np.array(np.broadcast_to(x, (batch, 3)))
    m = bloch_matrices(params)
    return _kernels.endpoints(
        np.ascontiguousarray(x), np.ascontiguousarray(v), np.ascontiguousarray(n), T / steps,
        m.A, m.Bv, m.Bn, m.d,
    )


def propagate_adaptive(
    x0,
    u: PiecewiseControl,
    params: SystemParams,
    rtol: float = 1e-10,
    atol: float = 1e-10,
    method: str = "DOP853",
) -> np.ndarray:
    """Endpoint by adaptive Runge-Kutta, restarted at every control breakpoint."""
    if rtol <= 0 or atol <= 0:
        raise ValueError("rtol and atol must be positive")
    _check_control(u)
    x = _check_state(x0).copy()
    if u.T == 0:
        return x
    mats = bloch_matrices(params)
    for j, (vj, nj) in enumerate(zip(u.v, u.n)):
        gen = mats.generator(vj, nj)
        sol = solve_ivp(
            lambda t, y: gen @ y + mats.d,
            (j * u.dt, (j + 1) * u.dt),
            x,
            method=method,
            rtol=rtol,
            atol=atol,
        )
        if sol.status != 0:
            raise IntegrationError(f"segment {j}: {sol.message}")
        x = sol.y[:, -1]
    return x


def density_from_bloch(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (3,):
        raise ValueError(f"Bloch vector must have 3 components, got shape {x.shape}")
    if x @ x > 1 + 1e-9:
        raise ValueError(f"{x} lies outside the Bloch ball")
    return 0.5 * (SIGMA[0] + x[0] * SIGMA[1] + x[1] * SIGMA[2] + x[2] * SIGMA[3])


def bloch_from_density(rho, tol: float = DENSITY_TOL) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise ValueError(f"density matrix must be 2x2, got {rho.shape}")
    if np.abs(rho - rho.conj().T).max() > tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > tol:
        raise ValueError(f"density matrix trace is {np.trace(rho)}, expected 1")
    if np.linalg.det(rho).real < -tol:
        raise ValueError("density matrix is not positive semidefinite")
    return _bloch_image(rho)


def _bloch_image(m: np.ndarray) -> np.ndarray:
    """Components Tr(m sigma_j), j = 1..3, without state checks."""
    return np.array([np.trace(m @ s).real for s in SIGMA[1:]])


def gksl_rhs(rho, v: float, n: float, params: SystemParams) -> np.ndarray:
    """Right-hand side of the master equation in units with hbar = 1."""
    if n < 0:
        raise ValueError("incoherent control must be non-negative")
    rho = np.asarray(rho, dtype=complex)
    h = params.omega * np.diag([0.0, 1.0]).astype(complex) + params.kappa * v * SIGMA[1]
    sp, sm = SIGMA_PLUS, SIGMA_MINUS
    spm = sp @ sm
    smp = sm @ sp
    lindblad = params.gamma * (n + 1) * (
        sm @ rho @ sp - 0.5 * (spm @ rho + rho @ spm)
    ) + params.gamma * n * (sp @ rho @ sm - 0.5 * (smp @ rho + rho @ smp))
    return -1j * (h @ rho - rho @ h) + lindblad


def propagate_gksl(
    x0,
    u: PiecewiseControl,
    params: SystemParams,
    rtol: float = 1e-10,
    atol: float = 1e-10,
) -> np.ndarray:
    """Bloch image of the density matrix integrated directly under GKSL flow.

    Independent of :func:`bloch_matrices`; used to cross-check the Bloch form.
    """
    _check_control(u)
    rho = density_from_bloch(x0)
    for j, (vj, nj) in enumerate(zip(u.v, u.n)):
        def rhs(t, y, vj=vj, nj=nj):
            r = (y[:4] + 1j * y[4:]).reshape(2, 2)
            dr = gksl_rhs(r, vj, nj, params).ravel()
            return np.concatenate([dr.real, dr.imag])

        y0 = np.concatenate([rho.ravel().real, rho.ravel().imag])
        sol = solve_ivp(
            rhs, (j * u.dt, (j + 1) * u.dt), y0, method="DOP853", rtol=rtol, atol=atol
        )
        if sol.status != 0:
            raise IntegrationError(f"segment {j}: {sol.message}")
        rho = (sol.y[:4, -1] + 1j * sol.y[4:, -1]).reshape(2, 2)
    return bloch_from_density(rho, tol=1e-7)
