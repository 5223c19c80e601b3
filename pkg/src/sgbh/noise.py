"""Diagonal noise operator G e_k = sigma_k e_k, Wiener increments and the
stochastic convolution z(t) = int_0^t R(t-s) G dW(s) (optionally kappa-shifted).

Per mode the convolution is an Ornstein-Uhlenbeck process with rate
mu_k = nu lambda_k + kappa, so it is advanced exactly in distribution. The
Wiener increment dbeta and the OU innovation I = int e^{-mu (h-s)} dbeta(s)
are drawn jointly: dbeta first, then I given dbeta. Drawing dbeta first keeps
the increment independent of mu, so every scheme sees the same dW.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spectral import SpectralField, eigenvalues


class NoiseError(ValueError):
    """Invalid noise specification."""


@dataclass(frozen=True)
class NoiseSpec:
    sigmas: tuple
    epsilon: float = 0.75
    kappa: float = 1.0
    power_law: dict | None = None

    def __post_init__(self):
        s = np.asarray(self.sigmas, dtype=float).reshape(-1)
        if s.size < 1:
            raise NoiseError("noise spec needs at least one mode")
        if not np.all(np.isfinite(s)):
            raise NoiseError("sigmas must be finite")
        if np.any(s < 0):
            k = int(np.argmax(s < 0)) + 1
            raise NoiseError(f"sigma_{k} is negative ({s[k - 1]})")
        if not 0 < self.epsilon < 1:
            raise NoiseError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.kappa < 0:
            raise NoiseError(f"kappa must be nonnegative, got {self.kappa}")
        object.__setattr__(self, "sigmas", tuple(float(x) for x in s))

    @property
    def n_modes(self) -> int:
        return len(self.sigmas)

    @property
    def sigma(self) -> np.ndarray:
        return np.asarray(self.sigmas)

    @property
    def trace(self) -> float:
        s = self.sigma
        return float(np.dot(s, s))

    @property
    def q_norm(self) -> float:
        return float(np.max(self.sigma) ** 2)

    def resized(self, n: int) -> "NoiseSpec":
        """First n amplitudes (zero padded), keeping the other fields."""
        s = np.zeros(n)
        m = min(n, self.n_modes)
        s[:m] = self.sigma[:m]
        if self.power_law is not None and n > self.n_modes:
            pl = self.power_law
            return power_law_noise(n, pl["c_lo"], pl["c_hi"], pl["eps"], epsilon=self.epsilon, kappa=self.kappa)
        return NoiseSpec(tuple(s), self.epsilon, self.kappa, self.power_law)

    def to_dict(self) -> dict:
        d = {"epsilon": self.epsilon, "kappa": self.kappa}
        if self.power_law is not None:
            d["power_law"] = dict(self.power_law)
            d["n_modes"] = self.n_modes
        else:
            d["sigmas"] = list(self.sigmas)
        return d

    @classmethod
    def from_dict(cls, data: dict, n_modes: int | None = None) -> "NoiseSpec":
        eps = float(data.get("epsilon", 0.75))
        kappa = float(data.get("kappa", 1.0))
        if "power_law" in data:
            pl = data["power_law"]
            n = int(data.get("n_modes", n_modes or 0))
            if n < 1:
                raise NoiseError("power_law noise needs n_modes")
            return power_law_noise(n, float(pl["c_lo"]), float(pl["c_hi"]), float(pl["eps"]), epsilon=eps, kappa=kappa)
        if "sigmas" in data:
            return cls(tuple(float(x) for x in data["sigmas"]), eps, kappa)
        raise NoiseError("noise spec needs 'sigmas' or 'power_law'")


def power_law_noise(n: int, c_lo: float, c_hi: float, eps: float, epsilon: float | None = None, kappa: float = 1.0) -> NoiseSpec:
    """sigma_k = c_hi k^{-(1/2+eps)}, clipped below by c_lo / k.

    The regularity exponent defaults to 1/2 + eps, the largest value for
    which the spectrum passes ``validate_noise``.
    """
    if n < 1:
        raise NoiseError(f"N must be >= 1, got {n}")
    if not (c_lo > 0 and c_hi > 0):
        raise NoiseError("c_lo and c_hi must be positive")
    if not 0 < eps < 0.5:
        raise NoiseError(f"eps must lie in (0, 1/2), got {eps}")
    k = np.arange(1, n + 1, dtype=float)
    lo = c_lo / k
    hi = c_hi * k ** -(0.5 + eps)
    bad = np.nonzero(lo > hi)[0]
    if bad.size:
        raise NoiseError(f"empty band at k={int(bad[0]) + 1}: c_lo/k > c_hi k^-(1/2+eps)")
    sig = np.maximum(hi, lo)
    return NoiseSpec(
        tuple(sig),
        epsilon=0.5 + eps if epsilon is None else epsilon,
        kappa=kappa,
        power_law={"c_lo": c_lo, "c_hi": c_hi, "eps": eps},
    )


@dataclass(frozen=True)
class NoiseReport:
    trace: float
    q_norm: float
    regularity_slope: float
    regularity_max_ratio: float
    regularity_passed: bool
    strong_regime: bool
    tail_bound: float | None = None

    def to_dict(self) -> dict:
        return {
            "trace": self.trace,
            "q_norm": self.q_norm,
            "regularity_slope": self.regularity_slope,
            "regularity_max_ratio": self.regularity_max_ratio,
            "regularity_passed": self.regularity_passed,
            "strong_regime": self.strong_regime,
            "tail_bound": self.tail_bound,
        }

    @property
    def passed(self) -> bool:
        return self.regularity_passed


def validate_noise(spec: NoiseSpec, slack: float = 0.05) -> NoiseReport:
    """Finite trace, operator norm and the finite-band regularity surrogate.

    The range inclusion D(A^{eps/2}) in Im(Q^{1/2}) is tested as boundedness
    of k^{-eps} / sigma_k: the log-log slope over the resolved band must not
    exceed ``slack``.
    """
    s = spec.sigma
    if np.any(s < 0):
        raise NoiseError("sigmas must be nonnegative")
    k = np.arange(1, s.size + 1, dtype=float)
    if np.any(s == 0):
        slope, max_ratio, ok = math.inf, math.inf, False
    else:
        ratio = k ** -spec.epsilon / s
        max_ratio = float(ratio.max())
        slope = float(np.polyfit(np.log(k), np.log(ratio), 1)[0]) if s.size > 1 else 0.0
        ok = slope <= slack
    tail = None
    if spec.power_law is not None:
        # sum_{k>N} c_hi^2 k^{-(1+2eps)} <= c_hi^2 N^{-2eps} / (2 eps)
        pl = spec.power_law
        tail = pl["c_hi"] ** 2 * s.size ** (-2.0 * pl["eps"]) / (2.0 * pl["eps"])
    return NoiseReport(
        trace=spec.trace,
        q_norm=spec.q_norm,
        regularity_slope=slope,
        regularity_max_ratio=max_ratio,
        regularity_passed=bool(ok),
        strong_regime=bool(ok and spec.epsilon > 0.5),
        tail_bound=tail,
    )


# exact OU coefficients

def _cond_var_factor(x: np.ndarray) -> np.ndarray:
    """f(x) = (1 - e^{-2x})/(2x) - ((1 - e^{-x})/x)^2, stable for small x."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 0.02
    xs = x[small]
    out[small] = xs**2 * (1 / 12 - xs / 12 + 17 * xs**2 / 360 - 7 * xs**3 / 360 + 43 * xs**4 / 6720 - 107 * xs**5 / 60480)
    xl = x[~small]
    out[~small] = -np.expm1(-2 * xl) / (2 * xl) - (np.expm1(-xl) / xl) ** 2
    return np.maximum(out, 0.0)


@dataclass(frozen=True)
class OUCoefficients:
    """Per-mode constants for one step of length h with rate mu."""

    decay: np.ndarray  # e^{-mu h}
    gain: np.ndarray  # Cov(I, dbeta) / h
    cond_sd: np.ndarray  # sd of I given dbeta
    h: float

    @classmethod
    def build(cls, mu: np.ndarray, h: float) -> "OUCoefficients":
        mu = np.asarray(mu, dtype=float)
        x = mu * h
        gain = -np.expm1(-x) / x
        return cls(decay=np.exp(-x), gain=gain, cond_sd=np.sqrt(h * _cond_var_factor(x)), h=h)

    def innovations(self, xi: np.ndarray):
        """Map standard normals (..., 2, n) to (dbeta, I) pairs."""
        db = math.sqrt(self.h) * xi[..., 0, :]
        inn = self.gain * db + self.cond_sd * xi[..., 1, :]
        return db, inn


def compose_fine(db: np.ndarray, inn: np.ndarray, decay_fine: np.ndarray):
    """Exact composition of s fine (dbeta, I) pairs stacked on axis 0."""
    s = db.shape[0]
    w = decay_fine ** np.arange(s - 1, -1, -1)[:, None]
    if db.ndim == 3:
        w = w[:, None, :]
    return db.sum(axis=0), (w * inn).sum(axis=0)


@dataclass
class OUState:
    z_coeffs: np.ndarray
    t: float = 0.0

    @classmethod
    def zero(cls, n: int) -> "OUState":
        return cls(np.zeros(n), 0.0)


def ou_rates(n: int, nu: float, kappa: float = 0.0) -> np.ndarray:
    return nu * eigenvalues(n) + kappa


def ou_step(state: OUState, dt: float, spec: NoiseSpec, nu: float, rng, kappa: float | None = None):
    """Advance z exactly over dt.

    Returns (new_state, dW) where dW = G dbeta is the Wiener increment that
    drove the update (needed for the energy pairing). ``kappa`` defaults to
    ``spec.kappa``; pass 0 for the unshifted convolution.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n = state.z_coeffs.size
    sig = spec.resized(n).sigma
    kap = spec.kappa if kappa is None else kappa
    co = OUCoefficients.build(ou_rates(n, nu, kap), dt)
    xi = rng.standard_normal((2, n))
    db, inn = co.innovations(xi)
    z = co.decay * state.z_coeffs + sig * inn
    return OUState(z, state.t + dt), SpectralField(sig * db)


def stationary_variance(spec: NoiseSpec, nu: float, kappa: float = 0.0) -> np.ndarray:
    """sigma_k^2 / (2 mu_k)."""
    return spec.sigma**2 / (2.0 * ou_rates(spec.n_modes, nu, kappa))


def ou_variance(spec: NoiseSpec, nu: float, t: float, kappa: float = 0.0) -> np.ndarray:
    """Var z_k(t) from z(0) = 0: sigma_k^2 (1 - e^{-2 mu t}) / (2 mu)."""
    mu = ou_rates(spec.n_modes, nu, kappa)
    return spec.sigma**2 * -np.expm1(-2.0 * mu * t) / (2.0 * mu)


def wiener_increment(spec: NoiseSpec, dt: float, rng) -> SpectralField:
    """G dW over dt: mode k gets sigma_k sqrt(dt) xi_k."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return SpectralField(spec.sigma * math.sqrt(dt) * rng.standard_normal(spec.n_modes))


# reproducible per-trajectory streams

def stream_rng(seed: int, traj_index: int, value_index: int = 0) -> np.random.Generator:
    """Counter-based Philox stream keyed by (seed, value index, trajectory index)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(value_index), int(traj_index)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class NoiseStream:
    """Standard-normal source for one trajectory.

    Draws are laid out as (fine step, 2, n_noise); the first slot feeds dbeta,
    the second the OU innovation. Coarser Galerkin levels read a prefix of
    the n_noise modes, so every level sees the same path.
    """

    seed: int
    traj_index: int
    n_noise: int
    value_index: int = 0
    _rng: np.random.Generator | None = field(default=None, repr=False)

    def __post_init__(self):
        self._rng = stream_rng(self.seed, self.traj_index, self.value_index)

    def draw(self, n_fine: int) -> np.ndarray:
        return self._rng.standard_normal((n_fine, 2, self.n_noise))
