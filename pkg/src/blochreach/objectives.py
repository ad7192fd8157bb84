"""Objective functions over flattened control vectors.

Every objective accepts either one decision vector ``(dim,)`` or a batch
``(B, dim)`` and returns a float or a ``(B,)`` array, so population-based
optimizers can evaluate whole generations in one call.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .controls import RegularizerKind, RegularizerSpec, regularizer_batch
from .dynamics import SystemParams, propagate_endpoints

__all__ = [
    "MismatchSpec",
    "mismatch",
    "AXIS_DIRECTIONS",
    "FAILED_VALUE",
    "NodeProblem",
    "BoxProblem",
    "CsBoxProblem",
    "node_objective",
    "cs_node_objective",
    "box_objective",
    "cs_box_objective",
    "project_to_ball",
]

# worst finite value; optimizers discard points that evaluate to it
FAILED_VALUE = float(np.finfo(float).max)

AXIS_DIRECTIONS = tuple(
    tuple(float(s) if i == j else 0.0 for i in range(3))
    for j in range(3)
    for s in (1, -1)
)

NO_REGULARIZER = RegularizerSpec()


@dataclass(frozen=True)
class MismatchSpec:
    """Norm order ``p``, tolerance radius ``delta`` and the outer exponent.

    ``outer_power="p"`` raises the clamped difference to the power ``p``;
    ``"1"`` leaves it linear.
    """

    p: int = 1
    delta: float = 0.0
    outer_power: str = "p"

    def __post_init__(self):
        if self.p not in (1, 2):
            raise ValueError(f"p must be 1 or 2, got {self.p}")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.outer_power not in ("p", "1"):
            raise ValueError("outer_power must be 'p' or '1'")


def mismatch(x, xhat, spec: MismatchSpec = MismatchSpec()):
    """``(max(||x - xhat||_p^p - delta^p, 0))^q`` with ``q = p`` or 1.

    With ``delta = 0`` the value is ``||x - xhat||_p^p`` regardless of the
    outer exponent. Broadcasts over leading axes.
    """
    diff = np.asarray(x, dtype=float) - np.asarray(xhat, dtype=float)
    p = spec.p
    dist = np.abs(diff).sum(axis=-1) if p == 1 else (diff * diff).sum(axis=-1)
    if spec.delta == 0:
        return dist
    clamped = np.maximum(dist - spec.delta**p, 0.0)
    if spec.outer_power == "p" and p == 2:
        clamped = clamped * clamped
    return clamped


def project_to_ball(p):
    """Radial projection of points onto the closed unit ball."""
    p = np.asarray(p, dtype=float)
    norm = np.sqrt((p * p).sum(axis=-1, keepdims=True))
    return np.where(norm > 1, p / np.where(norm > 1, norm, 1.0), p)


def _finite(values: np.ndarray) -> np.ndarray:
    return np.where(np.isfinite(values), values, FAILED_VALUE)


def _check_direction(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if tuple(a.tolist()) not in AXIS_DIRECTIONS:
        raise ValueError(f"direction {a.tolist()} is not a signed unit axis vector")
    return a


class _ControlObjective:
    """Shared decoding of ``(v_0..v_{N-1}, n_0..n_{N-1})`` decision vectors."""

    offset = 0  # leading non-control components
    nonnegative = True

    def _batch(self, z):
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        z2 = np.atleast_2d(z)
        if z2.shape[1] != self.offset + 2 * self.steps:
            raise ValueError(
                f"expected {self.offset + 2 * self.steps} components, got {z2.shape[1]}"
            )
        return z2, single

    def _controls(self, z2):
        k = self.offset
        return z2[:, k : k + self.steps], z2[:, k + self.steps :]

    def __call__(self, z):
        z2, single = self._batch(z)
        values = _finite(self._evaluate(z2))
        return float(values[0]) if single else values


@dataclass(frozen=True)
class NodeProblem(_ControlObjective):
    """Steer ``x0`` into the ``delta`` neighbourhood of ``target`` at ``T``.

    Value: ``beta_xT * mismatch + regularizer`` (just the mismatch when no
    regularizer is active). Reachability checks use the grid node as target;
    controllability checks use the node as ``x0``.
    """

    x0: tuple
    target: tuple
    T: float
    steps: int
    params: SystemParams = field(default_factory=SystemParams)
    mismatch: MismatchSpec = field(default_factory=MismatchSpec)
    regularizer: RegularizerSpec = NO_REGULARIZER

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(c) for c in self.x0))
        object.__setattr__(self, "target", tuple(float(c) for c in self.target))

    @classmethod
    def controllability(cls, node, x_target, T, steps, **kwargs) -> "NodeProblem":
        return cls(x0=node, target=x_target, T=T, steps=steps, **kwargs)

    def terms(self, z):
        """Endpoints, mismatch terms and regularizer terms for a batch."""
        z2, _ = self._batch(z)
        v, n = self._controls(z2)
        end = propagate_endpoints(self.x0, v, n, self.T, self.params)
        mis = mismatch(end, self.target, self.mismatch)
        if self.regularizer.active:
            reg = regularizer_batch(v, n, self.regularizer)
        else:
            reg = np.zeros(len(z2))
        return end, mis, reg

    def _evaluate(self, z2):
        _, mis, reg = self.terms(z2)
        if not self.regularizer.active:
            return mis
        return self.regularizer.beta_xT * mis + reg

    def step_excesses(self, z):
        """Channel step excesses (max-step kind) of a single control vector."""
        z2, _ = self._batch(z)
        v, n = self._controls(z2)
        spec = self.regularizer
        dv = np.abs(np.diff(v[0])).max(initial=0.0)
        dn = np.abs(np.diff(n[0])).max(initial=0.0)
        return max(dv - spec.delta_v, 0.0), max(dn - spec.delta_n, 0.0)


@dataclass(frozen=True)
class BoxProblem(_ControlObjective):
    """``beta_xT * <a, x(T)> + regularizer`` for a signed axis direction ``a``."""

    x0: tuple
    direction: tuple
    T: float
    steps: int
    params: SystemParams = field(default_factory=SystemParams)
    regularizer: RegularizerSpec = NO_REGULARIZER
    nonnegative = False

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(c) for c in self.x0))
        a = _check_direction(self.direction)
        object.__setattr__(self, "direction", tuple(a.tolist()))

    def terms(self, z):
        z2, _ = self._batch(z)
        v, n = self._controls(z2)
        end = propagate_endpoints(self.x0, v, n, self.T, self.params)
        inner = end @ np.asarray(self.direction)
        if self.regularizer.active:
            reg = regularizer_batch(v, n, self.regularizer)
        else:
            reg = np.zeros(len(z2))
        return end, inner, reg

    def _evaluate(self, z2):
        _, inner, reg = self.terms(z2)
        if not self.regularizer.active:
            return inner
        return self.regularizer.beta_xT * inner + reg


@dataclass(frozen=True)
class CsBoxProblem(_ControlObjective):
    """``beta_x0 <a, p> + beta_xT M(x(T | u, x(0) = p), x_target)``.

    The decision vector is ``(p1, p2, p3, v..., n...)``; ``p`` is sampled in
    the cube ``[-1, 1]^3`` and projected radially onto the Bloch ball.
    """

    target: tuple
    direction: tuple
    T: float
    steps: int
    params: SystemParams = field(default_factory=SystemParams)
    mismatch: MismatchSpec = field(default_factory=MismatchSpec)
    beta_x0: float = 1.0
    beta_xT: float = 100.0
    offset = 3
    nonnegative = False

    def __post_init__(self):
        object.__setattr__(self, "target", tuple(float(c) for c in self.target))
        a = _check_direction(self.direction)
        object.__setattr__(self, "direction", tuple(a.tolist()))

    def bounds(self, control_bounds: np.ndarray) -> np.ndarray:
        return np.vstack([np.tile([-1.0, 1.0], (3, 1)), control_bounds])

    def terms(self, z):
        z2, _ = self._batch(z)
        start = project_to_ball(z2[:, :3])
        v, n = self._controls(z2)
        end = propagate_endpoints(start, v, n, self.T, self.params)
        return start, start @ np.asarray(self.direction), mismatch(end, self.target, self.mismatch)

    def _evaluate(self, z2):
        _, inner, mis = self.terms(z2)
        return self.beta_x0 * inner + self.beta_xT * mis


def node_objective(u_vec, problem: NodeProblem) -> float:
    return problem(u_vec)


def cs_node_objective(u_vec, problem: NodeProblem) -> float:
    return problem(u_vec)


def box_objective(u_vec, problem: BoxProblem) -> float:
    return problem(u_vec)


def cs_box_objective(z_vec, problem: CsBoxProblem) -> float:
    return problem(z_vec)
