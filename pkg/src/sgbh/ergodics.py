"""Occupation measures and long-time audits.

The occupation measure L_t is represented through scalar observables of the
trajectory (L2 energy, H1 seminorm, single modes, L^{2(delta+1)} norm), each
accumulated in a time-weighted histogram with underflow and overflow bins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .integrator import Ensemble, Trajectory
from .model import ModelParams, cramer_constant, lambda0_max
from .noise import NoiseSpec, ou_rates

OBSERVABLES = ("l2_sq", "h1_semi_sq", "l2p")


class AuditRefusal(ValueError):
    """The requested audit lies outside the window where the bound is claimed."""

    def __init__(self, message: str, **info):
        super().__init__(message)
        self.info = info


@dataclass
class OccupationHistogram:
    observable: str
    edges: np.ndarray
    weights: np.ndarray
    underflow: float = 0.0
    overflow: float = 0.0
    total_time: float = 0.0

    @classmethod
    def empty(cls, observable: str, edges) -> "OccupationHistogram":
        e = np.asarray(edges, dtype=float)
        if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0):
            raise ValueError("bin edges must be a strictly increasing sequence of length >= 2")
        return cls(observable, e, np.zeros(e.size - 1))

    def copy(self) -> "OccupationHistogram":
        return OccupationHistogram(self.observable, self.edges.copy(), self.weights.copy(), self.underflow, self.overflow, self.total_time)

    def add(self, value: float, dt: float) -> None:
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        self.add_many(np.array([value]), np.array([dt]))

    def add_many(self, values: np.ndarray, dts: np.ndarray) -> None:
        values = np.asarray(values, dtype=float).ravel()
        dts = np.broadcast_to(np.asarray(dts, dtype=float), values.shape).ravel()
        e = self.edges
        idx = np.searchsorted(e, values, side="right") - 1
        # the last edge is closed on the right
        idx[values == e[-1]] = e.size - 2
        low = values < e[0]
        high = (values > e[-1]) | np.isnan(values)
        inside = ~(low | high)
        np.add.at(self.weights, idx[inside], dts[inside])
        self.underflow += float(dts[low].sum())
        self.overflow += float(dts[high].sum())
        self.total_time += float(dts.sum())

    def merge(self, other: "OccupationHistogram") -> "OccupationHistogram":
        _check_binning(self, other)
        return OccupationHistogram(
            self.observable,
            self.edges.copy(),
            self.weights + other.weights,
            self.underflow + other.underflow,
            self.overflow + other.overflow,
            self.total_time + other.total_time,
        )

    def full_weights(self) -> np.ndarray:
        """Weights with the underflow bin first and the overflow bin last."""
        return np.concatenate([[self.underflow], self.weights, [self.overflow]])

    def normalized(self) -> np.ndarray:
        if self.total_time <= 0:
            raise ValueError("empty histogram has no normalization")
        return self.full_weights() / self.total_time

    def to_dict(self) -> dict:
        return {
            "observable": self.observable,
            "edges": self.edges.tolist(),
            "weights": self.weights.tolist(),
            "underflow": self.underflow,
            "overflow": self.overflow,
            "total_time": self.total_time,
        }


def occupation_update(h: OccupationHistogram, state_observable: float, dt: float) -> OccupationHistogram:
    """Return a copy of ``h`` with weight dt added to the bin of the value."""
    out = h.copy()
    out.add(state_observable, dt)
    return out


def _check_binning(h1: OccupationHistogram, h2: OccupationHistogram) -> None:
    if h1.observable != h2.observable or h1.edges.shape != h2.edges.shape or not np.array_equal(h1.edges, h2.edges):
        raise ValueError("histograms use different observables or binning")


def coupling_distance(h1: OccupationHistogram, h2: OccupationHistogram) -> float:
    """L1 distance between normalized histograms (twice the binned TV distance)."""
    _check_binning(h1, h2)
    return float(np.abs(h1.normalized() - h2.normalized()).sum())


# observables from trajectories

def _series2d(run, key: str) -> np.ndarray:
    a = np.asarray(run.series[key])
    return a[None, :] if a.ndim == 1 else a


def observable_series(run, observable: str) -> np.ndarray:
    """(paths, records) array of a scalar observable."""
    if observable == "l2_sq":
        return _series2d(run, "l2_sq")
    if observable == "h1_semi_sq":
        return _series2d(run, "h1_semi") ** 2
    if observable == "l2p":
        return _series2d(run, "l2p")
    if observable.startswith("mode_"):
        k = int(observable.split("_", 1)[1])
        if run.states is None:
            raise ValueError("mode observables need stored states")
        s = np.asarray(run.states)
        s = s[None] if s.ndim == 2 else s
        return s[:, :, k - 1]
    raise ValueError(f"unknown observable {observable!r}")


def _window_weights(times: np.ndarray, t_lo: float, t_hi: float) -> np.ndarray:
    """Left-point weights of samples t_i in [t_lo, t_hi): t_{i+1} - t_i."""
    w = np.zeros(times.size)
    dt = np.diff(times)
    tol = 1e-9 * max(1.0, abs(t_hi))
    sel = (times[:-1] >= t_lo - tol) & (times[:-1] < t_hi - tol)
    w[:-1][sel] = dt[sel]
    return w


def auto_edges(values, bins: int = 40, lo: float | None = None, hi: float | None = None) -> np.ndarray:
    v = np.concatenate([np.asarray(x, dtype=float).ravel() for x in values]) if isinstance(values, (list, tuple)) else np.asarray(values, float).ravel()
    a = float(np.min(v)) if lo is None else lo
    b = float(np.max(v)) if hi is None else hi
    if b <= a:
        b = a + 1.0
    pad = 1e-9 * (b - a)
    return np.linspace(a, b + pad, bins + 1)


def occupation_histogram(run, observable: str, edges, t_lo: float = 0.0, t_hi: float | None = None) -> OccupationHistogram:
    """Pooled occupation histogram of ``observable`` over [t_lo, t_hi).

    Paths are merged in index order, so the result does not depend on how
    the ensemble was scheduled.
    """
    times = np.asarray(run.times)
    t_hi = times[-1] if t_hi is None else t_hi
    vals = observable_series(run, observable)
    w = _window_weights(times, t_lo, t_hi)
    h = OccupationHistogram.empty(observable, edges)
    sel = w > 0
    for row in vals:
        part = OccupationHistogram.empty(observable, edges)
        part.add_many(row[sel], w[sel])
        h = h.merge(part)
    return h


def krylov_bogoliubov(run, burn_in: float, observables=("l2_sq",), edges: dict | None = None, bins: int = 40) -> dict:
    """Time-averaged occupation histograms over [burn_in, t_end]."""
    times = np.asarray(run.times)
    if not burn_in < times[-1]:
        raise ValueError("burn_in must be smaller than t_end")
    out = {}
    for obs in observables:
        e = None if edges is None else edges.get(obs)
        if e is None:
            e = auto_edges(observable_series(run, obs), bins)
        out[obs] = occupation_histogram(run, obs, e, burn_in, times[-1])
    return out


def split_halves_distance(run, burn_in: float, observable: str = "l2_sq", bins: int = 40) -> float:
    """L1 distance between occupation histograms of [burn_in, mid) and [mid, t_end)."""
    times = np.asarray(run.times)
    mid = 0.5 * (burn_in + times[-1])
    e = auto_edges(observable_series(run, observable), bins)
    h1 = occupation_histogram(run, observable, e, burn_in, mid)
    h2 = occupation_histogram(run, observable, e, mid, times[-1])
    return coupling_distance(h1, h2)


@dataclass
class TrendReport:
    horizons: list
    distances: list
    monotone: bool

    def to_dict(self) -> dict:
        return {"horizons": self.horizons, "distances": self.distances, "monotone": self.monotone}


def ergodicity_trend(run_a, run_b, horizons, observable: str = "l2_sq", bins: int = 40) -> TrendReport:
    """Coupling distance of occupation histograms over [0, T] for growing T.

    ``run_a`` and ``run_b`` are ensembles started from two initial data
    (typically with the same per-path noise streams) run to max(horizons).
    """
    va = observable_series(run_a, observable)
    vb = observable_series(run_b, observable)
    e = auto_edges([va, vb], bins)
    d = []
    for T in horizons:
        ha = occupation_histogram(run_a, observable, e, 0.0, T)
        hb = occupation_histogram(run_b, observable, e, 0.0, T)
        d.append(coupling_distance(ha, hb))
    mono = all(y < x for x, y in zip(d, d[1:]))
    return TrendReport(list(map(float, horizons)), d, mono)


# exponential moments

@dataclass
class MomentAudit:
    lambda0: float
    lambda0_max: float
    trace: float
    cramer: float
    x_sq: float
    times: list
    bound: list
    empirical: dict
    std_error: dict
    passed: dict
    n_paths: int
    closed_form: list | None = None
    extra: dict = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(all(v) for v in self.passed.values())

    def to_dict(self) -> dict:
        return {
            "lambda0": self.lambda0,
            "lambda0_max": self.lambda0_max,
            "trace_Q": self.trace,
            "C_beta_delta": self.cramer,
            "x_sq": self.x_sq,
            "times": self.times,
            "bound": self.bound,
            "empirical": self.empirical,
            "std_error": self.std_error,
            "passed": self.passed,
            "n_paths": self.n_paths,
            "closed_form": self.closed_form,
            "all_passed": self.all_passed,
        }


def moment_bound(lambda0: float, x_sq: float, t, trace: float, cramer: float):
    """exp(lambda0 ||x||^2 + lambda0 t (Tr Q + C))."""
    return np.exp(lambda0 * x_sq + lambda0 * np.asarray(t, dtype=float) * (trace + cramer))


def gaussian_exp_moment(x, spec: NoiseSpec, nu: float, lambda0: float, t: float) -> float:
    """E exp(lambda0 ||u(t)||^2) for the stochastic heat equation from x.

    Mode k is Gaussian with mean m_k = e^{-nu lambda_k t} x_k and variance
    v_k = sigma_k^2 (1 - e^{-2 nu lambda_k t}) / (2 nu lambda_k).
    """
    x = np.asarray(getattr(x, "coeffs", x), dtype=float)
    n = spec.n_modes
    xx = np.zeros(n)
    xx[: min(n, x.size)] = x[:n]
    mu = ou_rates(n, nu)
    m = np.exp(-mu * t) * xx
    v = spec.sigma**2 * -np.expm1(-2.0 * mu * t) / (2.0 * mu)
    a = 1.0 - 2.0 * lambda0 * v
    if np.any(a <= 0):
        raise ValueError("Gaussian moment is infinite at this lambda0")
    return float(np.exp(np.sum(-0.5 * np.log(a) + lambda0 * m * m / a)))


def _x_sq(run) -> float:
    x0 = np.asarray(run.x0.coeffs if hasattr(run.x0, "coeffs") else run.x0)
    x0 = x0[None] if x0.ndim == 1 else x0
    if not np.all(x0 == x0[0]):
        raise ValueError("moment audits need a common initial point")
    return float(np.dot(x0[0], x0[0]))


def _mean_se(vals: np.ndarray):
    n = vals.size
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return mean, se


def exp_moment_audit(ensemble, lambda0: float, p: ModelParams, spec: NoiseSpec, times=None, min_paths: int = 1000, closed_form: bool = False) -> MomentAudit:
    """Empirical E exp(lambda0 Z(t)) and the three sub-variants against the bound.

    Z(t) = ||u||^2 + nu int ||u'||^2 + (beta/2) int ||u||_{2(d+1)}^{2(d+1)}.
    Variants: 'l2' = lambda0 ||u||^2, 'grad' = lambda0 nu int ||u'||^2,
    'absorb' = lambda0 beta int ||u||_{2(d+1)}^{2(d+1)}. PASS at a time iff the
    empirical mean minus 3 SE is <= bound. In the linear limit the 'l2'
    variant is also compared with the Gaussian closed form (within 3 SE).
    """
    lmax = lambda0_max(p, spec.q_norm)
    if not 0 < lambda0 < lmax:
        raise AuditRefusal(f"lambda0={lambda0:g} outside (0, lambda0_max={lmax:g})", lambda0=lambda0, lambda0_max=lmax)
    l2 = _series2d(ensemble, "l2_sq")
    if l2.shape[0] < min_paths:
        raise ValueError(f"exp_moment_audit needs >= {min_paths} paths, got {l2.shape[0]}")
    diss = _series2d(ensemble, "diss")
    absorb = _series2d(ensemble, "absorb")
    all_t = np.asarray(ensemble.times)
    if times is None:
        idx = np.arange(all_t.size)
    else:
        idx = np.array([int(np.argmin(np.abs(all_t - t))) for t in times])
        if np.any(np.abs(all_t[idx] - np.asarray(times)) > 1e-9 * max(1.0, all_t[-1])):
            raise ValueError("requested audit times are not recorded")
    x_sq = _x_sq(ensemble)
    tr = spec.trace
    cc = cramer_constant(p)
    tt = all_t[idx]
    bound = moment_bound(lambda0, x_sq, tt, tr, cc)
    expo = {
        "Z": lambda0 * (l2 + 0.5 * diss + 0.25 * absorb),
        "l2": lambda0 * l2,
        "grad": lambda0 * 0.5 * diss,
        "absorb": lambda0 * 0.5 * absorb,
    }
    emp, se, ok = {}, {}, {}
    for key, e in expo.items():
        ms = [_mean_se(np.exp(e[:, j])) for j in idx]
        emp[key] = [m for m, _ in ms]
        se[key] = [s for _, s in ms]
        ok[key] = [bool(m - 3.0 * s <= b * (1.0 + 1e-12)) for (m, s), b in zip(ms, bound)]
    cf = None
    if closed_form:
        if not p.linear:
            raise ValueError("the Gaussian closed form holds only in the linear limit")
        x0 = np.asarray(ensemble.x0)[0]
        cf = [gaussian_exp_moment(x0, spec.resized(x0.size), p.nu, lambda0, t) for t in tt]
        ok["closed_form"] = [bool(abs(m - c) <= 3.0 * s) for m, c, s in zip(emp["l2"], cf, se["l2"])]
    return MomentAudit(
        lambda0=lambda0,
        lambda0_max=lmax,
        trace=tr,
        cramer=cc,
        x_sq=x_sq,
        times=[float(t) for t in tt],
        bound=[float(b) for b in bound],
        empirical=emp,
        std_error=se,
        passed=ok,
        n_paths=int(l2.shape[0]),
        closed_form=cf,
    )


# Markov tightness

@dataclass
class TightnessTable:
    m_grid: list
    fractions: list
    bounds: list
    passed: list
    slope: float | None
    t0: float
    constants: dict

    def to_dict(self) -> dict:
        return {
            "M": self.m_grid,
            "fraction": self.fractions,
            "bound": self.bounds,
            "passed": self.passed,
            "slope": self.slope,
            "T0": self.t0,
            "constants": self.constants,
        }


def gradient_occupation_fraction(run, m_grid, p: ModelParams, spec: NoiseSpec, t0: float | None = None) -> TightnessTable:
    """Time fraction with ||u'||^2 > M against [||x||^2/T0 + Tr Q + C] / M^2.

    For an ensemble the fraction is averaged over paths. The log-log slope
    is fitted over the M values with a positive fraction.
    """
    times = np.asarray(run.times)
    T = float(times[-1])
    if T <= 0:
        raise ValueError("need a trajectory of positive length")
    t0 = T if t0 is None else float(t0)
    h1sq = _series2d(run, "h1_semi") ** 2
    w = _window_weights(times, 0.0, T)
    x0 = np.asarray(run.x0.coeffs if hasattr(run.x0, "coeffs") else run.x0)
    x0 = x0[None] if x0.ndim == 1 else x0
    x_sq = float(np.max(np.sum(x0 * x0, axis=-1)))
    tr = spec.trace
    cc = cramer_constant(p)
    fr, bd, ok = [], [], []
    for M in m_grid:
        f = float(np.mean((h1sq > M) @ w) / T)
        b = (x_sq / t0 + tr + cc) / float(M) ** 2
        fr.append(f)
        bd.append(b)
        ok.append(bool(f <= b))
    pos = [(m, f) for m, f in zip(m_grid, fr) if f > 0]
    slope = None
    if len(pos) >= 2:
        slope = float(np.polyfit(np.log([m for m, _ in pos]), np.log([f for _, f in pos]), 1)[0])
    return TightnessTable(list(map(float, m_grid)), fr, bd, ok, slope, t0, {"trace_Q": tr, "C_beta_delta": cc, "x_sq": x_sq})


# recurrence

def first_entry(times: np.ndarray, h1: np.ndarray, M: float, t_min: float = 0.0) -> float:
    """inf{t >= t_min : ||u'(t)|| <= M} on the record grid (inf if never).

    Only samples up to the returned time are inspected, so the value is
    unchanged by truncating the series after it.
    """
    tol = 1e-12 * max(1.0, abs(t_min))
    for t, h in zip(times, h1):
        if t >= t_min - tol and h <= M:
            return float(t)
    return math.inf


@dataclass
class RecurrenceStats:
    M: float
    lambda0: float
    C1: float
    trace: float
    cramer: float
    x_sq: float
    tau: np.ndarray
    tau1: np.ndarray
    n_values: list
    tails: list
    counts: list
    envelope: list
    strict_envelope: list
    included: list
    passed_n: list
    rate: float | None
    horizon: float

    @property
    def passed(self) -> bool:
        return all(p for p, inc in zip(self.passed_n, self.included) if inc)

    def to_dict(self) -> dict:
        return {
            "M": self.M,
            "lambda0": self.lambda0,
            "C1": self.C1,
            "C1_lambda0": self.C1 * self.lambda0,
            "trace_Q": self.trace,
            "C_beta_delta": self.cramer,
            "x_sq": self.x_sq,
            "n": self.n_values,
            "tail": self.tails,
            "count": self.counts,
            "envelope": self.envelope,
            "strict_envelope": self.strict_envelope,
            "included": self.included,
            "passed_n": self.passed_n,
            "rate": self.rate,
            "horizon": self.horizon,
            "passed": self.passed,
            "tau_mean": float(np.mean(self.tau[np.isfinite(self.tau)])) if np.isfinite(self.tau).any() else None,
            "censored": int(np.count_nonzero(~np.isfinite(self.tau1))),
        }


def recurrence_constant(M: float, p: ModelParams, spec: NoiseSpec) -> float:
    """C1 = M^2/2 - Tr Q - C(beta, delta)."""
    return M * M / 2.0 - spec.trace - cramer_constant(p)


def min_recurrence_radius(p: ModelParams, spec: NoiseSpec) -> float:
    return math.sqrt(2.0 * (spec.trace + cramer_constant(p)))


def recurrence_tails(run, M: float, lambda0: float, p: ModelParams, spec: NoiseSpec, n_max: int | None = None, min_samples: int = 30) -> RecurrenceStats:
    """Empirical P(tau_K^(1) >= n) against rho(e^{lambda0 ||.||^2}) e^{-n C1 lambda0}.

    K = {||u'|| <= M}. tau_K^(1) is the first entry at t >= 1. An n counts
    toward PASS/FAIL when at least ``min_samples`` paths are observed up to
    time n. The stricter envelope
    rho(e^{lambda0 ||.||^2}) exp(lambda0 n (Tr Q + C) - nu lambda0 M^2 (n - 1))
    is reported alongside.
    """
    c1 = recurrence_constant(M, p, spec)
    if c1 <= 0:
        raise AuditRefusal(
            f"C1 = M^2/2 - TrQ - C = {c1:g} <= 0; need M > {min_recurrence_radius(p, spec):g}",
            C1=c1,
            min_M=min_recurrence_radius(p, spec),
        )
    lmax = lambda0_max(p, spec.q_norm)
    if not 0 < lambda0 < lmax:
        raise AuditRefusal(f"lambda0={lambda0:g} outside (0, lambda0_max={lmax:g})", lambda0=lambda0, lambda0_max=lmax)
    times = np.asarray(run.times)
    h1 = _series2d(run, "h1_semi")
    horizon = float(times[-1])
    tau = np.array([first_entry(times, row, M, 0.0) for row in h1])
    tau1 = np.array([first_entry(times, row, M, 1.0) for row in h1])
    x0 = np.asarray(run.x0.coeffs if hasattr(run.x0, "coeffs") else run.x0)
    x0 = x0[None] if x0.ndim == 1 else x0
    rho = float(np.mean(np.exp(lambda0 * np.sum(x0 * x0, axis=-1))))
    x_sq = float(np.mean(np.sum(x0 * x0, axis=-1)))
    if n_max is None:
        n_max = int(math.floor(horizon))
    ns, tails, counts, env, strict, inc, ok = [], [], [], [], [], [], []
    tr = spec.trace
    cc = cramer_constant(p)
    for n in range(2, n_max + 1):
        observed = horizon >= n
        count = h1.shape[0] if observed else 0
        tail = float(np.mean(tau1 >= n)) if observed else float("nan")
        e = rho * math.exp(-n * c1 * lambda0)
        s = rho * math.exp(lambda0 * n * (tr + cc) - p.nu * lambda0 * M * M * (n - 1))
        ns.append(n)
        tails.append(tail)
        counts.append(count)
        env.append(e)
        strict.append(s)
        inc.append(bool(count >= min_samples))
        ok.append(bool(observed and tail <= e))
    pos = [(n, t) for n, t, i in zip(ns, tails, inc) if i and t > 0]
    rate = None
    if len(pos) >= 2:
        rate = float(-np.polyfit([n for n, _ in pos], np.log([t for _, t in pos]), 1)[0])
    return RecurrenceStats(M, lambda0, c1, tr, cc, x_sq, tau, tau1, ns, tails, counts, env, strict, inc, ok, rate, horizon)


def in_initial_class(x, lambda0: float, R: float) -> bool:
    """delta_x belongs to M_{lambda0,R} iff exp(lambda0 ||x||^2) <= R."""
    c = np.asarray(getattr(x, "coeffs", x), dtype=float)
    return bool(math.exp(lambda0 * float(np.dot(c, c))) <= R)
