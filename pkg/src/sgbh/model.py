"""Model parameters, parameter-regime gates and closed-form constants."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass


class ParameterError(ValueError):
    """A model parameter lies outside its admissible domain."""


@dataclass(frozen=True)
class ModelParams:
    """Coefficients of

        du = (nu u_xx - alpha u^delta u_x + beta u (1 - u^delta)(u^delta - gamma)) dt + G dW

    on (0, 1) with homogeneous Dirichlet data.
    """

    nu: float
    alpha: float
    beta: float
    gamma: float
    delta: float
    linear: bool = False

    def __post_init__(self):
        for name in ("nu", "alpha", "beta", "gamma", "delta"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ParameterError(f"{name} must be a finite real number, got {value!r}")
        if self.nu <= 0:
            raise ParameterError(f"nu must be positive, got {self.nu}")
        if self.linear:
            if self.alpha != 0 or self.beta != 0:
                raise ParameterError("the linear limit needs alpha = beta = 0")
        else:
            if self.alpha <= 0:
                raise ParameterError(f"alpha must be positive, got {self.alpha}")
            if self.beta <= 0:
                raise ParameterError(f"beta must be positive, got {self.beta}")
        if not 0 < self.gamma < 1:
            raise ParameterError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.delta < 1:
            raise ParameterError(f"delta must be >= 1, got {self.delta}")

    @classmethod
    def linear_limit(cls, nu: float, gamma: float = 0.5, delta: float = 1.0) -> "ModelParams":
        """alpha = beta = 0: the stochastic heat equation, used as an exact reference."""
        return cls(nu=nu, alpha=0.0, beta=0.0, gamma=gamma, delta=delta, linear=True)

    def to_dict(self) -> dict:
        d = asdict(self)
        if not self.linear:
            del d["linear"]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        missing = {"nu", "alpha", "beta", "gamma", "delta"} - set(data)
        if missing:
            raise ParameterError(f"missing model fields: {sorted(missing)}")
        unknown = set(data) - {"nu", "alpha", "beta", "gamma", "delta", "linear"}
        if unknown:
            raise ParameterError(f"unknown model fields: {sorted(unknown)}")
        kw = {k: float(data[k]) for k in ("nu", "alpha", "beta", "gamma", "delta")}
        return cls(**kw, linear=bool(data.get("linear", False)))


@dataclass(frozen=True)
class RegimeReport:
    uniqueness_unconditional: bool
    uniqueness_condition_met: bool
    ldp_supported: bool
    invariant_measure_supported: bool
    uniqueness_threshold: float

    @property
    def uniqueness(self) -> bool:
        return self.uniqueness_unconditional or self.uniqueness_condition_met

    def to_dict(self) -> dict:
        return asdict(self)


def uniqueness_threshold(p: ModelParams) -> float:
    """Right side of ``beta * nu > 2**(2 (delta - 1)) * alpha**2``."""
    return 2.0 ** (2.0 * (p.delta - 1.0)) * p.alpha**2


def validate_params(p: ModelParams) -> RegimeReport:
    """Classify ``p`` against the well-posedness / ergodicity regimes.

    For ``delta <= 2`` uniqueness holds for every admissible parameter set and
    ``uniqueness_condition_met`` is reported as True. For ``delta > 2`` it
    requires ``beta * nu > 2**(2(delta-1)) alpha**2``. The LDP is only claimed
    for ``delta`` in [1, 2]; existence of an invariant measure (trace-class
    noise) follows the uniqueness gate.
    """
    if not isinstance(p, ModelParams):
        raise ParameterError("validate_params expects a ModelParams instance")
    threshold = uniqueness_threshold(p)
    unconditional = p.delta <= 2.0
    condition_met = True if unconditional else p.beta * p.nu > threshold
    return RegimeReport(
        uniqueness_unconditional=unconditional,
        uniqueness_condition_met=condition_met,
        ldp_supported=unconditional,
        invariant_measure_supported=unconditional or condition_met,
        uniqueness_threshold=threshold,
    )


def cramer_constant(p: ModelParams) -> float:
    """C(beta, delta) = (2 / (beta (delta + 1)))**(1/delta) * delta / (delta + 1).

    In the linear limit there is no reaction term to absorb and C = 0.
    """
    if p.linear:
        return 0.0
    return (2.0 / (p.beta * (p.delta + 1.0))) ** (1.0 / p.delta) * p.delta / (p.delta + 1.0)


def lambda0_max(p: ModelParams, q_norm: float) -> float:
    """Upper end pi^2 nu / (2 ||Q||) of the exponential-moment window (exclusive)."""
    if not q_norm > 0:
        raise ParameterError(f"q_norm must be positive, got {q_norm}")
    return math.pi**2 * p.nu / (2.0 * q_norm)
