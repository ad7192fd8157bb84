"""Piecewise-constant controls, magnitude boxes and variation regularizers."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

__all__ = [
    "PiecewiseControl",
    "ControlBox",
    "RegularizerKind",
    "RegularizerSpec",
    "RegularizerBounds",
    "flatten",
    "unflatten",
    "variation",
    "max_step_excess",
    "regularizer_value",
    "regularizer_batch",
    "scaled_box",
    "regularizer_upper_bounds",
    "suggest_weights",
    "DEFAULT_MULTIPLIERS",
]

DEFAULT_MULTIPLIERS = (1.0, 0.8, 0.6, 0.4, 0.2, 0.1, 0.05)


@dataclass(frozen=True, eq=False)
class PiecewiseControl:
    """Step-constant controls on the uniform grid ``t_j = j T / N``.

    The two channels may carry different step counts; propagation requires
    them to be equal.
    """

    T: float
    v: np.ndarray
    n: np.ndarray

    def __post_init__(self):
        v = np.array(self.v, dtype=float).ravel()
        n = np.array(self.n, dtype=float).ravel()
        if self.T < 0:
            raise ValueError(f"final time must be non-negative, got {self.T}")
        if v.size == 0 or n.size == 0:
            raise ValueError("each control channel needs at least one step")
        if np.any(n < 0):
            raise ValueError("incoherent control values must be non-negative")
        v.flags.writeable = False
        n.flags.writeable = False
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "n", n)

    @property
    def Nv(self) -> int:
        return self.v.size

    @property
    def Nn(self) -> int:
        return self.n.size

    @property
    def dt(self) -> float:
        return self.T / self.Nv

    def __eq__(self, other):
        if not isinstance(other, PiecewiseControl):
            return NotImplemented
        return (
            self.T == other.T
            and np.array_equal(self.v, other.v)
            and np.array_equal(self.n, other.n)
        )

    def restrict(self, start: int, stop: int) -> "PiecewiseControl":
        """Sub-control on steps ``[start, stop)`` with matching duration."""
        return PiecewiseControl(
            self.dt * (stop - start), self.v[start:stop], self.n[start:stop]
        )


@dataclass(frozen=True)
class ControlBox:
    """Magnitude bounds ``[v_min d, v_max d] x [0, n_max d]`` per step."""

    v_min: float = -100.0
    v_max: float = 100.0
    n_max: float = 20.0
    Nv: int = 10
    Nn: int = 10
    d_mult: float = 1.0

    def __post_init__(self):
        if not self.v_min < self.v_max:
            raise ValueError("v_min must be below v_max")
        if not self.n_max > 0:
            raise ValueError("n_max must be positive")
        if not 0 < self.d_mult <= 1:
            raise ValueError(f"d_mult must lie in (0, 1], got {self.d_mult}")
        if self.Nv < 1 or self.Nn < 1:
            raise ValueError("step counts must be positive")

    @property
    def v_lo(self) -> float:
        return self.v_min * self.d_mult

    @property
    def v_hi(self) -> float:
        return self.v_max * self.d_mult

    @property
    def n_hi(self) -> float:
        return self.n_max * self.d_mult

    @property
    def dim(self) -> int:
        return self.Nv + self.Nn

    def bounds(self) -> np.ndarray:
        """``(Nv + Nn, 2)`` array of per-coordinate ``[lo, hi]``."""
        lo = np.r_[np.full(self.Nv, self.v_lo), np.zeros(self.Nn)]
        hi = np.r_[np.full(self.Nv, self.v_hi), np.full(self.Nn, self.n_hi)]
        return np.stack([lo, hi], axis=1)


class RegularizerKind(str, Enum):
    NONE = "none"
    VAR = "var"
    ABS = "abs"
    MAX = "max"


@dataclass(frozen=True)
class RegularizerSpec:
    """Variation penalty added to an objective.

    ``beta_v``/``beta_n`` weigh the two channels, ``beta_xT`` weighs the
    endpoint term of the composite objective. ``delta_v``/``delta_n`` are the
    step thresholds of the ``MAX`` kind.
    """

    kind: RegularizerKind = RegularizerKind.NONE
    beta_v: float = 1.0
    beta_n: float = 1.0
    beta_xT: float = 1.0
    delta_v: float = 0.0
    delta_n: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", RegularizerKind(self.kind))
        if self.kind is not RegularizerKind.NONE:
            if self.beta_v < 0 or self.beta_n < 0 or self.beta_xT < 0:
                raise ValueError("regularizer weights must be non-negative")
        if self.kind is RegularizerKind.MAX and (self.delta_v <= 0 or self.delta_n <= 0):
            raise ValueError("step thresholds must be positive for the max-step kind")

    @property
    def active(self) -> bool:
        return self.kind is not RegularizerKind.NONE

    def check_box(self, box: ControlBox) -> None:
        """Thresholds must sit strictly inside the box spans."""
        if self.kind is RegularizerKind.MAX:
            if not 0 < self.delta_v < box.v_hi - box.v_lo:
                raise ValueError(f"delta_v={self.delta_v} outside (0, {box.v_hi - box.v_lo})")
            if not 0 < self.delta_n < box.n_hi:
                raise ValueError(f"delta_n={self.delta_n} outside (0, {box.n_hi})")


def flatten(u: PiecewiseControl) -> np.ndarray:
    return np.concatenate([u.v, u.n])


def unflatten(vec, box: ControlBox, T: float, clamp: bool = False) -> PiecewiseControl:
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (box.dim,):
        raise ValueError(f"expected {box.dim} components, got shape {vec.shape}")
    b = box.bounds()
    if clamp:
        vec = np.clip(vec, b[:, 0], b[:, 1])
    else:
        bad = np.flatnonzero((vec < b[:, 0]) | (vec > b[:, 1]))
        if bad.size:
            raise ValueError(f"components {bad.tolist()} fall outside the control box")
    return PiecewiseControl(T, vec[: box.Nv], vec[box.Nv :])


def variation(values) -> float:
    values = np.asarray(values, dtype=float)
    return float(np.abs(np.diff(values)).sum())


def max_step_excess(values, delta: float) -> tuple[float, float]:
    """Largest step ``max |a_j - a_{j-1}|`` and its excess over ``delta``."""
    if delta < 0:
        raise ValueError("threshold must be non-negative")
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0, 0.0
    step = float(np.abs(np.diff(values)).max())
    return step, max(step - delta, 0.0)


def regularizer_batch(v: np.ndarray, n: np.ndarray, spec: RegularizerSpec) -> np.ndarray:
    """Penalty for a batch of controls, ``v`` and ``n`` shaped ``(B, N)``."""
    v = np.atleast_2d(v)
    n = np.atleast_2d(n)
    kind = spec.kind
    if kind is RegularizerKind.VAR:
        return (
            spec.beta_v * np.abs(np.diff(v, axis=1)).sum(axis=1)
            + spec.beta_n * np.abs(np.diff(n, axis=1)).sum(axis=1)
        )
    if kind is RegularizerKind.ABS:
        return spec.beta_v * np.abs(v).sum(axis=1) + spec.beta_n * n.sum(axis=1)
    if kind is RegularizerKind.MAX:
        return spec.beta_v * _excess(v, spec.delta_v) + spec.beta_n * _excess(n, spec.delta_n)
    raise ValueError("no regularizer to evaluate for kind 'none'")


def _excess(a: np.ndarray, delta: float) -> np.ndarray:
    if a.shape[1] < 2:
        return np.zeros(a.shape[0])
    return np.maximum(np.abs(np.diff(a, axis=1)).max(axis=1) - delta, 0.0)


def step_excesses(v, n, spec: RegularizerSpec) -> tuple[float, float]:
    """Both channel excesses for the max-step kind."""
    return max_step_excess(v, spec.delta_v)[1], max_step_excess(n, spec.delta_n)[1]


def regularizer_value(u: PiecewiseControl, spec: RegularizerSpec) -> float:
    return float(regularizer_batch(u.v[None], u.n[None], spec)[0])


def scaled_box(base: ControlBox, d_mult: float) -> ControlBox:
    if not 0 < d_mult <= 1:
        raise ValueError(f"multiplier must lie in (0, 1], got {d_mult}")
    return replace(base, d_mult=base.d_mult * d_mult)


@dataclass(frozen=True)
class RegularizerBounds:
    var_v: float
    var_n: float
    abs_v: float
    abs_n: float
    step_v: float
    step_n: float
    excess_v: float
    excess_n: float


def regularizer_upper_bounds(
    box: ControlBox, delta_v: float = 0.0, delta_n: float = 0.0
) -> RegularizerBounds:
    """Closed-form upper bounds of every variation measure over the box."""
    if delta_v < 0 or delta_n < 0:
        raise ValueError("thresholds must be non-negative")
    span_v = box.v_hi - box.v_lo
    span_n = box.n_hi
    return RegularizerBounds(
        var_v=span_v * (box.Nv - 1),
        var_n=span_n * (box.Nn - 1),
        abs_v=box.d_mult * max(abs(box.v_min), box.v_max) * box.Nv,
        abs_n=span_n * box.Nn,
        step_v=span_v,
        step_n=span_n,
        excess_v=max(span_v - delta_v, 0.0),
        excess_n=max(span_n - delta_n, 0.0),
    )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def suggest_weights(
    box: ControlBox, delta_v: float, delta_n: float, delta_xT: float, p: int = 1
) -> tuple[int, int, int]:
    """Weights ``(beta_xT, beta_v, beta_n)`` that balance a max-step objective.

    The coherent-step excess bound is the reference scale; the endpoint and
    incoherent terms are scaled up to it by their own upper bounds and
    rounded to the nearest integer.
    """
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    if not 0 <= delta_xT < 1:
        raise ValueError("delta_xT must lie in [0, 1)")
    b = regularizer_upper_bounds(box, delta_v, delta_n)
    mismatch_bound = 2.0**p - delta_xT**p
    ref = b.excess_v
    beta_xT = _round_half_up(ref / mismatch_bound) if ref > 0 else 1
    beta_n = _round_half_up(ref / b.excess_n) if ref > 0 and b.excess_n > 0 else 1
    return max(beta_xT, 1), 1, max(beta_n, 1)
