"""Run configuration: a JSON document with a fixed, validated schema.

Keys are named after the model symbols. Every key is optional and falls back
to the defaults below; unknown keys are rejected.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

from .controls import ControlBox, RegularizerKind, RegularizerSpec, suggest_weights
from .dynamics import SystemParams
from .estimation import GridSpec, RetryPolicy
from .optimize import OptimizerConfig

DEFAULT_MULTIPLIERS = [1.0, 0.8, 0.6, 0.4, 0.2, 0.1, 0.05]

OPTIMIZER_KEYS = {
    "budget", "methods", "runs_per_method", "zero_tol", "popsize", "mutation",
    "recombination", "stagnation_tol", "visit", "accept", "initial_temp",
    "initial_temps", "restart_temp_ratio", "local_search",
}


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


@dataclass
class RunConfig:
    omega: float = 1.0
    gamma: float = 0.05
    kappa: float = 0.01
    kind: str = "rs"
    anchor: list = field(default_factory=lambda: [0.0, 0.0, 1.0])
    T: list = field(default_factory=lambda: [5.0])
    v_min: float = -100.0
    v_max: float = 100.0
    n_max: float = 20.0
    N_v: int = 10
    N_n: int = 10
    d_multipliers: list = field(default_factory=lambda: list(DEFAULT_MULTIPLIERS))
    M: int = 20
    z: float = 1.0
    p: int = 1
    mismatch_outer_power: str = "p"
    regularizer: str = "none"
    beta_xT: object = 1.0  # number or "auto" (max-step weights rule)
    beta_dv: object = 1.0
    beta_dn: object = 1.0
    delta_dv: float = 0.0
    delta_dn: float = 0.0
    optimizer: dict = field(default_factory=dict)
    workers: int = 1
    seed: int = 0
    output_dir: str = "runs"
    candidates_from: Optional[dict] = None  # {"run": id, "stage": s}
    use_outer_box: bool = True
    cs_beta_x0: float = 1.0
    cs_beta_xT: float = 100.0

    # objects derived from the flat fields

    def params(self) -> SystemParams:
        return SystemParams(self.omega, self.gamma, self.kappa)

    def control_box(self) -> ControlBox:
        return ControlBox(self.v_min, self.v_max, self.n_max, self.N_v, self.N_n)

    def grid(self) -> GridSpec:
        return GridSpec(self.M, self.z, self.p, self.mismatch_outer_power)

    def weights(self) -> tuple:
        """``(beta_xT, beta_dv, beta_dn)`` with ``"auto"`` entries resolved."""
        auto = None
        out = []
        for name in ("beta_xT", "beta_dv", "beta_dn"):
            value = getattr(self, name)
            if value == "auto":
                if auto is None:
                    box = self.control_box()
                    box = ControlBox(box.v_min, box.v_max, box.n_max, box.Nv, box.Nn,
                                     self.d_multipliers[0])
                    auto = suggest_weights(box, self.delta_dv, self.delta_dn,
                                           self.grid().delta, self.p)
                value = auto[("beta_xT", "beta_dv", "beta_dn").index(name)]
            out.append(float(value))
        return tuple(out)

    def regularizer_spec(self) -> RegularizerSpec:
        kind = RegularizerKind(self.regularizer)
        if kind is RegularizerKind.NONE:
            return RegularizerSpec()
        bxt, bv, bn = self.weights()
        return RegularizerSpec(kind, bv, bn, bxt, self.delta_dv, self.delta_dn)

    def optimizer_config(self) -> OptimizerConfig:
        kw = {k: v for k, v in self.optimizer.items()
              if k not in ("methods", "runs_per_method", "zero_tol")}
        for key in ("mutation", "initial_temps"):
            if kw.get(key) is not None:
                kw[key] = tuple(kw[key])
        return OptimizerConfig(seed=self.seed, **kw)

    def retry_policy(self) -> RetryPolicy:
        o = self.optimizer
        return RetryPolicy(
            methods=tuple(o.get("methods", ("DE", "DA"))),
            runs_per_method=int(o.get("runs_per_method", 2)),
            zero_tol=float(o.get("zero_tol", 1e-12)),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def content_hash(self, code_version: str) -> str:
        """Run id: hash of the result-relevant fields and the code version."""
        data = self.to_dict()
        for key in ("workers", "output_dir"):
            data.pop(key)
        blob = json.dumps({"config": data, "code": code_version}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def validate(self) -> None:
        """Build every derived object so that bad values surface as ConfigError."""
        checks = [
            ("omega/gamma/kappa", self.params),
            ("v_min/v_max/n_max/N_v/N_n", self.control_box),
            ("M/z/p/mismatch_outer_power", self.grid),
            ("regularizer", self.regularizer_spec),
            ("optimizer", self.optimizer_config),
            ("optimizer", self.retry_policy),
        ]
        for name, build in checks:
            try:
                build()
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{name}: {exc}") from None
        if self.kind not in ("rs", "cs"):
            raise ConfigError(f"kind: expected 'rs' or 'cs', got {self.kind!r}")
        if len(self.anchor) != 3 or sum(c * c for c in self.anchor) > 1 + 1e-12:
            raise ConfigError("anchor: must be a 3-vector inside the Bloch ball")
        if not self.T or any(t < 0 for t in self.T):
            raise ConfigError("T: must be a non-empty list of non-negative times")
        if self.N_v != self.N_n:
            raise ConfigError("N_v/N_n: estimation needs equal step counts")
        m = self.d_multipliers
        if not m or any(not 0 < d <= 1 for d in m) or any(b >= a for a, b in zip(m, m[1:])):
            raise ConfigError("d_multipliers: must be strictly decreasing values in (0, 1]")
        unknown = set(self.optimizer) - OPTIMIZER_KEYS
        if unknown:
            raise ConfigError(f"optimizer: unknown keys {sorted(unknown)}")
        for method in self.retry_policy().methods:
            if method not in ("DE", "DA"):
                raise ConfigError(f"optimizer.methods: unknown method {method!r}")
        if self.workers < 1:
            raise ConfigError("workers: must be at least 1")
        if self.candidates_from is not None:
            if set(self.candidates_from) != {"run", "stage"}:
                raise ConfigError("candidates_from: needs exactly the keys 'run' and 'stage'")
        spec = self.regularizer_spec()
        for d in m:
            box = self.control_box()
            try:
                spec.check_box(ControlBox(box.v_min, box.v_max, box.n_max, box.Nv, box.Nn, d))
            except ValueError as exc:
                raise ConfigError(f"delta_dv/delta_dn at multiplier {d}: {exc}") from None


def _coerce(name: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false")
        return value
    if isinstance(default, int) and name in ("N_v", "N_n", "M", "p", "workers", "seed"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer")
        return value
    if isinstance(default, float) and name not in ("beta_xT", "beta_dv", "beta_dn"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number")
        return float(value)
    return value


def from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    defaults = RunConfig()
    known = set(defaults.to_dict())
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(sorted(unknown))}")
    kw = {}
    for key, value in data.items():
        kw[key] = _coerce(key, value, getattr(defaults, key))
    if "T" in kw and not isinstance(kw["T"], list):
        kw["T"] = [kw["T"]]
    for key in ("T", "d_multipliers", "anchor"):
        if key in kw:
            try:
                kw[key] = [float(c) for c in kw[key]]
            except (TypeError, ValueError):
                raise ConfigError(f"{key}: expected a list of numbers") from None
    for key in ("beta_xT", "beta_dv", "beta_dn"):
        if key in kw and kw[key] != "auto":
            if isinstance(kw[key], bool) or not isinstance(kw[key], (int, float)):
                raise ConfigError(f"{key}: expected a number or \"auto\"")
            kw[key] = float(kw[key])
    cfg = RunConfig(**kw)
    cfg.validate()
    return cfg


def load(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return from_dict(data)
