"""Convective operator B, reaction c, trilinear form b and the cut-off M_R.

Power convention: for integer delta, u^delta is the ordinary power. For
non-integer delta, p = sign(u)|u|^delta (odd extension), u^{delta+1} is read
as u * p and u^{2 delta} as p^2 = |u|^{2 delta}. This keeps b(u, u, u) = 0
and the sign structure of c for every real delta >= 1.

All evaluation is pseudo-spectral on the dealiased grid. The convective term
uses the skew-symmetric splitting

    B_h(u) = (P(p u') + P(d/dxi (u p))) / (delta + 2),

which equals u^delta u' in the continuum and makes (B_h(u), u) vanish to
roundoff on the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre

from .model import ModelParams
from .spectral import (
    GridField,
    SpectralBasis,
    SpectralField,
    dealiased_points,
    eigenvalues,
    modes_from_grid,
)


def _is_integer(delta: float) -> bool:
    return float(delta).is_integer()


def power(u: np.ndarray, delta: float) -> np.ndarray:
    """u^delta under the odd-extension convention."""
    if _is_integer(delta):
        return u ** int(delta)
    return np.sign(u) * np.abs(u) ** delta


def dpower(u: np.ndarray, delta: float) -> np.ndarray:
    """Derivative of ``power`` with respect to u."""
    if _is_integer(delta):
        d = int(delta)
        return d * u ** (d - 1) if d > 1 else np.ones_like(u)
    return delta * np.abs(u) ** (delta - 1.0)


def reaction_pointwise(u: np.ndarray, p: ModelParams) -> np.ndarray:
    """u (1 - u^delta)(u^delta - gamma), evaluated pointwise."""
    q = power(u, p.delta)
    return u * (1.0 - q) * (q - p.gamma)


@dataclass(frozen=True)
class CutoffSpec:
    """Phi = 1 on [0, R], 0 on [R+1, inf), cubic smoothstep bridge in between."""

    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"cut-off radius must be positive, got {self.radius}")

    def phi(self, r):
        s = np.clip(np.asarray(r, dtype=float) - self.radius, 0.0, 1.0)
        return 1.0 - s * s * (3.0 - 2.0 * s)

    def dphi(self, r):
        s = np.clip(np.asarray(r, dtype=float) - self.radius, 0.0, 1.0)
        return -6.0 * s * (1.0 - s)


def mollify_coeffs(c: np.ndarray, spec: CutoffSpec) -> np.ndarray:
    r = np.sqrt(np.sum(c * c, axis=-1, keepdims=True))
    return c * spec.phi(r)


def mollify(u: SpectralField, spec: CutoffSpec) -> SpectralField:
    """M_R(u) = u Phi(||u||)."""
    return SpectralField(mollify_coeffs(u.coeffs, spec))


def mollify_jvp(c: np.ndarray, w: np.ndarray, spec: CutoffSpec) -> np.ndarray:
    """D M_R(c) w = Phi w + Phi'(r) (c, w) c / r."""
    r = np.sqrt(np.sum(c * c, axis=-1, keepdims=True))
    out = spec.phi(r) * w
    dp = spec.dphi(r)
    safe = np.where(r > 0, r, 1.0)
    return out + np.where(r > 0, dp * np.sum(c * w, axis=-1, keepdims=True) / safe, 0.0) * c


class Nonlinearity:
    """Batched evaluation of B_h, c_h and their derivatives on N modes.

    Arrays carry modes on the last axis; leading axes are batch axes.
    """

    def __init__(self, params: ModelParams, n: int, m: int | None = None):
        self.params = params
        self.delta = params.delta
        self.basis = SpectralBasis(n, m if m is not None else dealiased_points(n, params.delta))
        self.n = self.basis.n
        self.m = self.basis.m

    def grid(self, c: np.ndarray):
        return self.basis.to_grid(c), self.basis.derivative(c)

    def convective(self, c: np.ndarray) -> np.ndarray:
        u, du = self.grid(c)
        q = power(u, self.delta)
        b = self.basis
        return (b.to_modes(q * du) + b.project_derivative(u * q)) / (self.delta + 2.0)

    def reaction(self, c: np.ndarray) -> np.ndarray:
        u = self.basis.to_grid(c)
        return self.basis.to_modes(reaction_pointwise(u, self.params))

    def drift(self, c: np.ndarray) -> np.ndarray:
        """-alpha B_h(c) + beta c_h(c) (the linear part -nu A is excluded)."""
        p = self.params
        u, du = self.grid(c)
        q = power(u, self.delta)
        b = self.basis
        conv = (b.to_modes(q * du) + b.project_derivative(u * q)) / (self.delta + 2.0)
        react = b.to_modes(u * (1.0 - q) * (q - p.gamma))
        return -p.alpha * conv + p.beta * react

    def drift_jvp(self, c: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Derivative of ``drift`` at c in direction w (exact for the discrete map)."""
        p = self.params
        d = self.delta
        b = self.basis
        u, du = self.grid(c)
        v, dv = self.grid(w)
        q = power(u, d)
        dq = dpower(u, d)
        # d(u q) = (q + u q') v = (d + 1) q v
        conv = (b.to_modes(dq * v * du + q * dv) + (d + 1.0) * b.project_derivative(q * v)) / (d + 2.0)
        react = ((1.0 + p.gamma) * (d + 1.0) * q - p.gamma - (2.0 * d + 1.0) * q * q) * v
        return -p.alpha * conv + p.beta * b.to_modes(react)

    def energy_integrals(self, c: np.ndarray):
        """Grid quadratures of u^2 p^2 and u^2 p (absorption and drive densities)."""
        u = self.basis.to_grid(c)
        q = power(u, self.delta)
        uq = u * q
        return self.basis.quad(uq * uq), self.basis.quad(u * uq)

    def lp_norm(self, c: np.ndarray, pexp: float) -> np.ndarray:
        u = self.basis.to_grid(c)
        return self.basis.quad(np.abs(u) ** pexp) ** (1.0 / pexp)


def convective_B(u: SpectralField, delta: float, m: int | None = None) -> SpectralField:
    """Mode coefficients of u^delta u_xi, projected to N modes."""
    p = ModelParams(nu=1.0, alpha=1.0, beta=1.0, gamma=0.5, delta=delta)
    return SpectralField(Nonlinearity(p, u.n_modes, m).convective(u.coeffs))


def reaction_c(u: SpectralField, p: ModelParams, m: int | None = None) -> SpectralField:
    """Mode coefficients of u(1 - u^delta)(u^delta - gamma), projected to N modes."""
    return SpectralField(Nonlinearity(p, u.n_modes, m).reaction(u.coeffs))


def trilinear_b(u: GridField, v: GridField, w: GridField, delta: float, n_quad: int | None = None) -> float:
    """b(u, v, w) = int u^delta v' w dxi.

    The three grid fields are expanded in the full sine basis of their grid,
    v' is taken spectrally and the integral is evaluated by Gauss-Legendre
    quadrature on the spectral interpolants.
    """
    m = u.m_points
    if v.m_points != m or w.m_points != m:
        raise ValueError("trilinear_b needs all fields on a common grid")
    if not np.any(w.values):
        return 0.0
    if n_quad is None:
        n_quad = int(math.ceil((delta + 2.0) * m)) + 16
    x, wt = legendre.leggauss(n_quad)
    xi = 0.5 * (x + 1.0)
    wt = 0.5 * wt
    k = np.arange(1, m + 1)
    s = math.sqrt(2.0) * np.sin(np.pi * np.outer(xi, k))
    cs = math.sqrt(2.0) * np.cos(np.pi * np.outer(xi, k)) * (k * np.pi)
    cu = modes_from_grid(u.values, m)
    cv = modes_from_grid(v.values, m)
    cw = modes_from_grid(w.values, m)
    return float(np.sum(wt * power(s @ cu, delta) * (cs @ cv) * (s @ cw)))


@dataclass
class AuditReport:
    radii: list
    b_max_ratio: list
    c_max_ratio: list
    b_exponent: float
    c_exponent: float
    b_limit: float
    c_limit: float
    skipped_pairs: int
    passed: bool
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "radii": list(self.radii),
            "b_max_ratio": list(self.b_max_ratio),
            "c_max_ratio": list(self.c_max_ratio),
            "b_exponent": self.b_exponent,
            "c_exponent": self.c_exponent,
            "b_limit": self.b_limit,
            "c_limit": self.c_limit,
            "skipped_pairs": self.skipped_pairs,
            "passed": self.passed,
        }


def _h1(c: np.ndarray, lam: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(lam * c * c, axis=-1))


def _ball_samples(rng, count: int, n: int, r: float, lam: np.ndarray) -> np.ndarray:
    c = rng.standard_normal((count, n)) / np.arange(1, n + 1) ** 1.5
    rad = r * rng.uniform(0.7, 1.0, size=(count, 1))
    return c * rad / _h1(c, lam)[:, None]


def lipschitz_audit(r, trials: int, p: ModelParams, rng_seed=0, n_modes: int = 16, slack: float = 0.2) -> AuditReport:
    """Empirical local-Lipschitz ratios of B and c on H^1 balls.

    ``r`` is either a single radius (expanded to the geometric grid r, 2r, 4r,
    8r) or an explicit increasing sequence. For each radius, ``trials`` pairs
    (u, v) with H^1 seminorm <= r are drawn; half are independent pairs and
    half are nearby pairs. The log-log slope of the max ratio against r is
    compared with delta (for B) and 2 delta (for c).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    radii = [float(r) * 2.0**i for i in range(4)] if np.isscalar(r) else [float(x) for x in r]
    nl = Nonlinearity(p, n_modes)
    lam = eigenvalues(n_modes)
    rng = np.random.default_rng(rng_seed)
    b_max, c_max = [], []
    skipped = 0
    for rad in radii:
        u = _ball_samples(rng, trials, n_modes, rad, lam)
        v = _ball_samples(rng, trials, n_modes, rad, lam)
        near = np.arange(trials) % 2 == 1
        step = rng.uniform(1e-3, 0.3, size=(trials, 1))
        v[near] = u[near] + step[near] * (v[near] - u[near])
        dist = _h1(u - v, lam)
        ok = dist > 0
        skipped += int(np.count_nonzero(~ok))
        db = np.sqrt(np.sum((nl.convective(u) - nl.convective(v)) ** 2, axis=-1))
        dc = np.sqrt(np.sum((nl.reaction(u) - nl.reaction(v)) ** 2, axis=-1))
        b_max.append(float(np.max(db[ok] / dist[ok])) if ok.any() else float("nan"))
        c_max.append(float(np.max(dc[ok] / dist[ok])) if ok.any() else float("nan"))
    lr = np.log(radii)
    b_exp = float(np.polyfit(lr, np.log(b_max), 1)[0])
    c_exp = float(np.polyfit(lr, np.log(c_max), 1)[0])
    b_lim = p.delta + slack
    c_lim = 2.0 * p.delta + slack
    return AuditReport(
        radii=radii,
        b_max_ratio=b_max,
        c_max_ratio=c_max,
        b_exponent=b_exp,
        c_exponent=c_exp,
        b_limit=b_lim,
        c_limit=c_lim,
        skipped_pairs=skipped,
        passed=bool(b_exp <= b_lim and c_exp <= c_lim),
    )


def lipschitz_ratio(u: SpectralField, v: SpectralField, p: ModelParams):
    """(||B(u)-B(v)|| / ||u-v||_H1, ||c(u)-c(v)|| / ||u-v||_H1), or None when u = v."""
    lam = eigenvalues(u.n_modes)
    dist = float(_h1(u.coeffs - v.coeffs, lam))
    if dist == 0.0:
        return None
    nl = Nonlinearity(p, u.n_modes)
    db = np.linalg.norm(nl.convective(u.coeffs) - nl.convective(v.coeffs))
    dc = np.linalg.norm(nl.reaction(u.coeffs) - nl.reaction(v.coeffs))
    return float(db / dist), float(dc / dist)
