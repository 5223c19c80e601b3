"""Time stepping of the Galerkin system with a running energy ledger.

Two schemes share one noise path:

* ``mild_exponential``: u = v + z with z the (optionally kappa-shifted)
  stochastic convolution advanced exactly, and exponential Euler for v,
      v <- e^{-nu A dt} v + dt phi_1(-nu A dt) (F(v + z) + kappa z);
* ``direct_semi_implicit``: (I + nu A dt) u_next = u + dt F(u) + G dW.

Here F = -alpha B + beta c. Each step of length dt consumes ``noise_substeps``
fine steps of standard normals; the fine (dbeta, I) pairs are composed
exactly, so runs at dt, dt/2, dt/4 with matching substeps see the same path.

The ledger adds, per step and from the step-start state u_n,
    diss   += sum_k u_k^2 (1 - e^{-2 nu lambda_k dt})     (exact heat flow of 2 nu ||u'||^2)
    damp   += 2 beta gamma dt ||u||^2
    absorb += 2 beta dt ||u||_{2(delta+1)}^{2(delta+1)}
    drive  += 2 beta (1 + gamma) dt (u^{delta+1}, u)
    ito    += Tr(G_N G_N^*) dt
    mart   += 2 (G dW, u_n)
and residual = l2_sq + diss + damp + absorb - ||x||^2 - drive - ito - mart.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .model import ModelParams
from .noise import NoiseSpec, NoiseStream, OUCoefficients, OUState, ou_rates
from .nonlinear import CutoffSpec, Nonlinearity, mollify_coeffs, power
from .spectral import SpectralField, eigenvalues

SCHEMES = ("mild_exponential", "direct_semi_implicit")
SERIES = ("l2", "h1_semi", "l2p", "residual", "l2_sq", "diss", "damp", "absorb", "drive", "ito", "mart")

# steps per noise chunk; does not affect results (Philox chunks concatenate)
_CHUNK = 512


class DivergenceError(RuntimeError):
    """The state left the guard ball or became non-finite."""

    def __init__(self, t: float, message: str = "", partial=None, path_index=None):
        super().__init__(message or f"divergence at t={t:g}")
        self.t = t
        self.partial = partial
        self.path_index = path_index


@dataclass(frozen=True)
class SolverConfig:
    n_modes: int
    dt: float
    t_end: float
    scheme: str = "direct_semi_implicit"
    record_stride: int = 1
    noise_substeps: int = 1
    n_noise: int | None = None
    m_points: int | None = None
    guard: float = 1e8
    shifted: bool = False
    store_states: bool = True

    def __post_init__(self):
        if int(self.n_modes) != self.n_modes or self.n_modes < 1:
            raise ValueError(f"n_modes must be a positive integer, got {self.n_modes}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_end < 0:
            raise ValueError(f"t_end must be nonnegative, got {self.t_end}")
        if self.t_end > 0 and self.dt > self.t_end * (1 + 1e-12):
            raise ValueError("dt must not exceed t_end")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if self.noise_substeps < 1:
            raise ValueError("noise_substeps must be >= 1")
        if self.n_noise is not None and self.n_noise < self.n_modes:
            raise ValueError("n_noise must be >= n_modes")
        steps = self.t_end / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError("t_end must be an integer multiple of dt")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def noise_modes(self) -> int:
        return self.n_noise if self.n_noise is not None else self.n_modes

    def to_dict(self) -> dict:
        return {
            "n_modes": self.n_modes,
            "dt": self.dt,
            "t_end": self.t_end,
            "scheme": self.scheme,
            "record_stride": self.record_stride,
            "noise_substeps": self.noise_substeps,
            "n_noise": self.n_noise,
            "m_points": self.m_points,
            "guard": self.guard,
            "shifted": self.shifted,
            "store_states": self.store_states,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown solver fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EnergyLedger:
    """Running terms of the energy equality (arrays over a batch, or scalars)."""

    x_sq: np.ndarray
    l2_sq: np.ndarray
    diss: np.ndarray
    damp: np.ndarray
    absorb: np.ndarray
    drive: np.ndarray
    ito: np.ndarray
    mart: np.ndarray

    @classmethod
    def start(cls, x_sq):
        x_sq = np.asarray(x_sq, dtype=float)
        z = np.zeros_like(x_sq)
        return cls(x_sq.copy(), x_sq.copy(), z.copy(), z.copy(), z.copy(), z.copy(), z.copy(), z.copy())

    @property
    def residual(self):
        return self.l2_sq + self.diss + self.damp + self.absorb - self.x_sq - self.drive - self.ito - self.mart

    @property
    def z_functional(self):
        """||u||^2 + nu int ||u'||^2 + (beta/2) int ||u||_{2(d+1)}^{2(d+1)}."""
        return self.l2_sq + 0.5 * self.diss + 0.25 * self.absorb

    @property
    def moment_functional(self):
        """||u||^2 + 2 nu int ||u'||^2 + (beta/2) int ||u||_{2(d+1)}^{2(d+1)}."""
        return self.l2_sq + self.diss + 0.25 * self.absorb

    def select(self, i) -> "EnergyLedger":
        return EnergyLedger(*(np.asarray(getattr(self, f))[i] for f in self.__dataclass_fields__))

    def to_dict(self) -> dict:
        out = {f: float(np.asarray(getattr(self, f))) for f in self.__dataclass_fields__}
        out["residual"] = float(np.asarray(self.residual))
        return out


@dataclass
class Trajectory:
    times: np.ndarray
    series: dict
    ledger: EnergyLedger
    x0: SpectralField
    states: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def final_state(self) -> SpectralField:
        if self.states is None:
            raise ValueError("trajectory was run without stored states")
        return SpectralField(self.states[-1])

    def state(self, i: int) -> SpectralField:
        return SpectralField(self.states[i])


@dataclass
class Ensemble:
    """Per-path series stacked as (paths, records)."""

    times: np.ndarray
    series: dict
    ledger: EnergyLedger
    x0: np.ndarray
    states: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.x0.shape[0]

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(
            times=self.times,
            series={k: v[i] for k, v in self.series.items()},
            ledger=self.ledger.select(i),
            x0=SpectralField(self.x0[i]),
            states=None if self.states is None else self.states[i],
            meta=dict(self.meta),
        )


class Stepper:
    """Precomputed per-step factors for one (params, noise, config) triple."""

    def __init__(self, params: ModelParams, spec: NoiseSpec | None, cfg: SolverConfig, cutoff: CutoffSpec | None = None):
        self.params = params
        self.cfg = cfg
        self.cutoff = cutoff
        n = cfg.n_modes
        self.n = n
        self.nl = Nonlinearity(params, n, cfg.m_points)
        dt = cfg.dt
        self.dt = dt
        self.lam = eigenvalues(n)
        a = params.nu * self.lam * dt
        self.inv = 1.0 / (1.0 + a)
        self.decay = np.exp(-a)
        self.phi_dt = dt * (-np.expm1(-a) / a)
        self.heat = -np.expm1(-2.0 * a)
        self.spec = spec
        self.kappa = spec.kappa if (spec is not None and cfg.shifted) else 0.0
        if spec is not None:
            self.sigma = spec.resized(n).sigma
            self.trace = float(np.dot(self.sigma, self.sigma))
            mu = ou_rates(n, params.nu, self.kappa)
            self.fine = OUCoefficients.build(mu, dt / cfg.noise_substeps)
            self.z_decay = np.exp(-mu * dt)
            s = cfg.noise_substeps
            self.fine_weights = self.fine.decay ** np.arange(s - 1, -1, -1)[:, None]
        else:
            self.sigma = np.zeros(n)
            self.trace = 0.0

    def increments(self, xi: np.ndarray):
        """(B, s, 2, n_noise) normals -> (dW, sigma * I) for one coarse step."""
        xi = xi[..., : self.n]
        db_f = math.sqrt(self.fine.h) * xi[:, :, 0, :]
        inn_f = self.fine.gain * db_f + self.fine.cond_sd * xi[:, :, 1, :]
        db = db_f.sum(axis=1)
        inn = (self.fine_weights * inn_f).sum(axis=1)
        return self.sigma * db, self.sigma * inn

    def drift_energy(self, u: np.ndarray, need_energy: bool):
        """F(M_R(u)) and the absorption / drive quadratures at u."""
        p = self.params
        nl = self.nl
        b = nl.basis
        ue = mollify_coeffs(u, self.cutoff) if self.cutoff is not None else u
        if p.linear:
            z = np.zeros(u.shape[:-1])
            return np.zeros_like(u), z, z
        g = b.to_grid(ue)
        dg = b.derivative(ue)
        q = power(g, p.delta)
        gq = g * q
        conv = (b.to_modes(q * dg) + b.project_derivative(gq)) / (p.delta + 2.0)
        react = b.to_modes(g * (1.0 - q) * (q - p.gamma))
        F = -p.alpha * conv + p.beta * react
        if not need_energy:
            return F, None, None
        if ue is not u:
            g = b.to_grid(u)
            gq = g * power(g, p.delta)
        return F, b.quad(gq * gq), b.quad(g * gq)

    def ledger_step(self, led: EnergyLedger, u: np.ndarray, dW, absorb_q, drive_q):
        p = self.params
        dt = self.dt
        usq = u * u
        led.diss += usq @ self.heat
        if not p.linear:
            led.damp += 2.0 * p.beta * p.gamma * dt * usq.sum(axis=-1)
            led.absorb += 2.0 * p.beta * dt * absorb_q
            led.drive += 2.0 * p.beta * (1.0 + p.gamma) * dt * drive_q
        led.ito += self.trace * dt
        if dW is not None:
            led.mart += 2.0 * np.sum(dW * u, axis=-1)

    def direct(self, u, F, dW, forcing=None):
        r = u + self.dt * F
        if forcing is not None:
            r = r + self.dt * forcing
        if dW is not None:
            r = r + dW
        return r * self.inv

    def mild(self, v, z, F, forcing=None):
        g = F if self.kappa == 0.0 else F + self.kappa * z
        if forcing is not None:
            g = g + forcing
        return self.decay * v + self.phi_dt * g


def _as_batch(x0, n: int) -> np.ndarray:
    if isinstance(x0, SpectralField):
        x0 = x0.resized(n).coeffs
    a = np.array(x0, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
    if a.shape[-1] != n:
        b = np.zeros(a.shape[:-1] + (n,))
        m = min(n, a.shape[-1])
        b[..., :m] = a[..., :m]
        a = b
    return a


def record_indices(cfg: SolverConfig) -> np.ndarray:
    n = cfg.n_steps
    idx = list(range(0, n + 1, cfg.record_stride))
    if idx[-1] != n:
        idx.append(n)
    return np.array(idx, dtype=int)


def integrate_block(
    x0: np.ndarray,
    params: ModelParams,
    spec: NoiseSpec | None,
    cfg: SolverConfig,
    streams=None,
    cutoff: CutoffSpec | None = None,
    forcing=None,
    path_offset: int = 0,
    track_ledger: bool = True,
):
    """Integrate a batch of paths.

    ``streams`` is a list of NoiseStream (one per path) or None for the
    noiseless problem. ``forcing(t)`` returns a mode vector added to the drift
    at step start (deterministic control).
    Returns (times, series, ledger, states, final).
    """
    st = Stepper(params, spec, cfg, cutoff)
    n = cfg.n_modes
    u = _as_batch(x0, n).copy()
    bsz = u.shape[0]
    noisy = streams is not None and spec is not None
    if streams is not None and len(streams) != bsz:
        raise ValueError("need one noise stream per path")
    mild = cfg.scheme == "mild_exponential"
    v = u.copy()
    z = np.zeros_like(u)
    led = EnergyLedger.start(np.sum(u * u, axis=-1))
    rec = record_indices(cfg)
    times = rec * cfg.dt
    series = {k: np.zeros((bsz, rec.size)) for k in SERIES}
    states = np.zeros((bsz, rec.size, n)) if cfg.store_states else None
    lp_exp = 2.0 * (params.delta + 1.0)
    ri = 0

    def record(step_u, j):
        usq = step_u * step_u
        series["l2_sq"][:, j] = led.l2_sq
        series["l2"][:, j] = np.sqrt(led.l2_sq)
        series["h1_semi"][:, j] = np.sqrt(usq @ st.lam)
        series["l2p"][:, j] = st.nl.lp_norm(step_u, lp_exp)
        for k in ("diss", "damp", "absorb", "drive", "ito", "mart"):
            series[k][:, j] = getattr(led, k)
        series["residual"][:, j] = led.residual
        if states is not None:
            states[:, j] = step_u

    record(u, 0)
    ri = 1
    s = cfg.noise_substeps
    chunk = None
    for step in range(cfg.n_steps):
        t = step * cfg.dt
        dW = inn = None
        if noisy:
            c = step % _CHUNK
            if c == 0:
                count = min(_CHUNK, cfg.n_steps - step)
                chunk = np.stack([ss.draw(count * s) for ss in streams])
            xi = chunk[:, c * s : (c + 1) * s]
            dW, inn = st.increments(xi)
        F, absorb_q, drive_q = st.drift_energy(u, track_ledger)
        if track_ledger:
            st.ledger_step(led, u, dW, absorb_q, drive_q)
        f_t = forcing(t) if forcing is not None else None
        if mild:
            v = st.mild(v, z, F, f_t)
            if noisy:
                z = st.z_decay * z + inn
            u = v + z
        else:
            u = st.direct(u, F, dW, f_t)
        l2sq = np.sum(u * u, axis=-1)
        led.l2_sq = l2sq
        bad = ~np.isfinite(l2sq) | (l2sq > cfg.guard**2)
        if bad.any():
            i = int(np.argmax(bad))
            partial = (times[:ri], {k: a[:, :ri] for k, a in series.items()}, led, None if states is None else states[:, :ri])
            err = DivergenceError(t + cfg.dt, f"L2 norm exceeded guard {cfg.guard:g} at t={t + cfg.dt:g} (path {path_offset + i})", partial, path_offset + i)
            err.local_index = i
            raise err
        if ri < rec.size and rec[ri] == step + 1:
            record(u, ri)
            ri += 1
    return times, series, led, states, u


# single-step API on fields

def step_mild(v: SpectralField, z: OUState, dt: float, p: ModelParams, cfg: SolverConfig | None = None, kappa: float = 0.0) -> SpectralField:
    """One exponential-Euler step of the shifted system v = u - z."""
    n = v.n_modes
    cfg = SolverConfig(n_modes=n, dt=dt, t_end=dt, scheme="mild_exponential", m_points=cfg.m_points if cfg else None, guard=cfg.guard if cfg else 1e8)
    st = Stepper(p, None, cfg)
    zc = np.asarray(z.z_coeffs, dtype=float)
    F, _, _ = st.drift_energy((v.coeffs + zc)[None], False)
    g = F[0] + kappa * zc
    out = st.decay * v.coeffs + st.phi_dt * g
    _guard(out, cfg.guard, z.t + dt)
    return SpectralField(out)


def step_direct(u: SpectralField, dW: SpectralField, dt: float, p: ModelParams, cfg: SolverConfig | None = None) -> SpectralField:
    """(I + nu A dt) u_next = u + dt F(u) + dW, solved mode-wise."""
    n = u.n_modes
    cfg = SolverConfig(n_modes=n, dt=dt, t_end=dt, m_points=cfg.m_points if cfg else None, guard=cfg.guard if cfg else 1e8)
    st = Stepper(p, None, cfg)
    F, _, _ = st.drift_energy(u.coeffs[None], False)
    out = st.direct(u.coeffs, F[0], dW.coeffs)
    _guard(out, cfg.guard, dt)
    return SpectralField(out)


def _guard(c: np.ndarray, guard: float, t: float) -> None:
    l2 = float(np.sqrt(np.dot(c, c)))
    if not math.isfinite(l2) or l2 > guard:
        raise DivergenceError(t, f"L2 norm exceeded guard {guard:g} at t={t:g}")


# trajectories and ensembles

def _wrap_divergence(err: DivergenceError, x0: np.ndarray) -> DivergenceError:
    if err.partial is not None:
        times, series, led, states = err.partial
        i = getattr(err, "local_index", 0)
        err.partial = Trajectory(
            times=times,
            series={k: v[i] for k, v in series.items()},
            ledger=led.select(i),
            x0=SpectralField(x0[i]),
            states=None if states is None else states[i],
        )
    return err


def run_trajectory(
    x0: SpectralField,
    p: ModelParams,
    spec: NoiseSpec | None,
    cfg: SolverConfig,
    seed: int = 0,
    traj_index: int = 0,
    value_index: int = 0,
    cutoff: CutoffSpec | None = None,
    forcing=None,
) -> Trajectory:
    """Integrate one path; its noise stream is keyed by (seed, value_index, traj_index)."""
    x = _as_batch(x0, cfg.n_modes)
    streams = None
    if spec is not None:
        streams = [NoiseStream(seed, traj_index, cfg.noise_modes, value_index)]
    try:
        times, series, led, states, _ = integrate_block(x, p, spec, cfg, streams, cutoff, forcing)
    except DivergenceError as err:
        raise _wrap_divergence(err, x) from None
    return Trajectory(
        times=times,
        series={k: v[0] for k, v in series.items()},
        ledger=led.select(0),
        x0=SpectralField(x[0]),
        states=None if states is None else states[0],
        meta={"seed": seed, "traj_index": traj_index, "value_index": value_index, "scheme": cfg.scheme},
    )


def _run_block(args):
    x0, p, spec, cfg, seed, start, value_index, cutoff = args
    streams = None
    if spec is not None:
        streams = [NoiseStream(seed, start + i, cfg.noise_modes, value_index) for i in range(x0.shape[0])]
    return integrate_block(x0, p, spec, cfg, streams, cutoff, None, path_offset=start)


def default_workers() -> int:
    env = os.environ.get("SGBH_WORKERS")
    if env:
        return max(1, int(env))
    return 1


def run_ensemble(
    x0,
    p: ModelParams,
    spec: NoiseSpec | None,
    cfg: SolverConfig,
    seed: int,
    n_paths: int | None = None,
    workers: int | None = None,
    block_size: int = 64,
    value_index: int = 0,
    cutoff: CutoffSpec | None = None,
) -> Ensemble:
    """Integrate many independent paths.

    Paths are grouped in fixed blocks of ``block_size`` regardless of the
    worker count, and path i always uses the stream (seed, value_index, i),
    so results do not depend on scheduling.
    """
    x = _as_batch(x0, cfg.n_modes)
    if n_paths is not None:
        if x.shape[0] == 1:
            x = np.repeat(x, n_paths, axis=0)
        elif x.shape[0] != n_paths:
            raise ValueError("x0 rows must match n_paths")
    total = x.shape[0]
    jobs = [
        (x[s : s + block_size], p, spec, cfg, seed, s, value_index, cutoff)
        for s in range(0, total, block_size)
    ]
    workers = default_workers() if workers is None else max(1, int(workers))
    try:
        if workers == 1 or len(jobs) == 1:
            results = [_run_block(j) for j in jobs]
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_run_block, jobs))
    except DivergenceError as err:
        start = err.path_index - getattr(err, "local_index", 0)
        raise _wrap_divergence(err, x[start : start + block_size]) from None
    times = results[0][0]
    series = {k: np.concatenate([r[1][k] for r in results]) for k in SERIES}
    leds = [r[2] for r in results]
    led = EnergyLedger(*(np.concatenate([getattr(l, f) for l in leds]) for f in EnergyLedger.__dataclass_fields__))
    states = None
    if cfg.store_states:
        states = np.concatenate([r[3] for r in results])
    return Ensemble(times=times, series=series, ledger=led, x0=x, states=states, meta={"seed": seed, "value_index": value_index, "scheme": cfg.scheme})


# ledger diagnostics

def energy_residual(traj) -> np.ndarray:
    """residual(t) at the recorded times."""
    return np.asarray(traj.series["residual"])


def residual_headline(traj) -> float:
    """max_t |residual| / max(1, ||x||^2)."""
    x_sq = float(np.dot(traj.x0.coeffs, traj.x0.coeffs))
    return float(np.max(np.abs(energy_residual(traj))) / max(1.0, x_sq))


# Galerkin refinement

@dataclass
class RefinementReport:
    n_list: list
    functional: list
    functional_sup: list
    cauchy: list
    cauchy_sup: list
    monotone: bool

    def to_dict(self) -> dict:
        return {
            "n_list": self.n_list,
            "functional": self.functional,
            "functional_sup": self.functional_sup,
            "cauchy": self.cauchy,
            "cauchy_sup": self.cauchy_sup,
            "monotone": self.monotone,
        }


def galerkin_functional(series: dict) -> np.ndarray:
    """||u_N||^2 + 2 nu int ||u_N'||^2 + beta int ||u_N||_{2(d+1)}^{2(d+1)}."""
    return series["l2_sq"] + series["diss"] + 0.5 * series["absorb"]


def galerkin_refinement(x0: SpectralField, p: ModelParams, spec: NoiseSpec, cfg: SolverConfig, seeds, n_list) -> RefinementReport:
    """Energy functional per truncation level on one shared noise realization.

    Noise is drawn at the finest level; coarser levels read the leading
    modes of the same draws.
    """
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("N_list must be strictly increasing")
    n_max = n_list[-1]
    spec_max = spec.resized(n_max) if spec is not None else None
    funcs = []
    for n in n_list:
        c = replace(cfg, n_modes=n, n_noise=n_max, m_points=None if cfg.m_points is None else max(cfg.m_points, n))
        per_seed = []
        for sd in seeds:
            tr = run_trajectory(x0.resized(n), p, spec_max, c, seed=sd)
            per_seed.append(galerkin_functional(tr.series))
        funcs.append(np.array(per_seed))
    final = [float(f[:, -1].mean()) for f in funcs]
    sup = [float(np.abs(f).max()) for f in funcs]
    cauchy = [float(np.mean(np.abs(b[:, -1] - a[:, -1]))) for a, b in zip(funcs, funcs[1:])]
    cauchy_sup = [float(np.max(np.abs(b - a))) for a, b in zip(funcs, funcs[1:])]
    mono = all(y <= x for x, y in zip(cauchy_sup, cauchy_sup[1:]))
    return RefinementReport(n_list, final, sup, cauchy, cauchy_sup, mono)


# export

def write_trajectory_csv(traj: Trajectory, path, snapshots: bool = False) -> None:
    """Columns t, l2, h1_semi, l2p, residual (+ c1..cN when snapshots)."""
    cols = ["l2", "h1_semi", "l2p", "residual"]
    header = ["t"] + cols
    if snapshots and traj.states is not None:
        header += [f"c{k}" for k in range(1, traj.states.shape[1] + 1)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, t in enumerate(traj.times):
            row = [repr(float(t))] + [repr(float(traj.series[c][i])) for c in cols]
            if len(header) > 5:
                row += [repr(float(x)) for x in traj.states[i]]
            w.writerow(row)
