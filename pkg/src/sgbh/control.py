"""Explicit exact-controllability construction and the first-variation solver.

Linear step: the path
    z(t) = e^{-nu A t} a                                        on [0, t0],
    z(t) = ((t - t0) b + (T - t) z(t0)) / (T - t0)              on (t0, T],
is driven by v_ctrl := z' + nu A z (zero on [0, t0]).

Lifted step: u_ctrl := alpha B(z) - beta c(z) + v_ctrl, so that x = z solves
    x' = -nu A x - alpha B(x) + beta c(x) + u_ctrl.
B and c are the same discrete operators the integrator uses, which makes
the substitution residual roundoff-level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .integrator import SolverConfig, Stepper, Trajectory, run_trajectory
from .model import ModelParams
from .noise import NoiseSpec
from .nonlinear import CutoffSpec, Nonlinearity, mollify_coeffs, mollify_jvp
from .spectral import SpectralField, eigenvalues, semigroup_factors


class ControlError(ValueError):
    pass


@dataclass
class ControlPlan:
    a: SpectralField
    b: SpectralField
    T: float
    t0: float
    nu: float
    params: ModelParams | None = None

    def __post_init__(self):
        if self.a.n_modes != self.b.n_modes:
            raise ControlError("a and b must share the mode count")
        if not 0 < self.t0 < self.T:
            raise ControlError(f"t0 must lie in (0, T), got t0={self.t0}, T={self.T}")
        n = self.a.n_modes
        self.lam = eigenvalues(n)
        self.z_t0 = self.a.coeffs * semigroup_factors(n, self.t0, self.nu)
        self.slope = (self.b.coeffs - self.z_t0) / (self.T - self.t0)
        self._nl = Nonlinearity(self.params, n) if self.params is not None else None

    @property
    def n_modes(self) -> int:
        return self.a.n_modes

    def path(self, t: float) -> np.ndarray:
        if t <= self.t0:
            return self.a.coeffs * np.exp(-self.nu * self.lam * t)
        s = (t - self.t0) / (self.T - self.t0)
        return s * self.b.coeffs + (1.0 - s) * self.z_t0

    def path_derivative(self, t: float) -> np.ndarray:
        if t <= self.t0:
            return -self.nu * self.lam * self.path(t)
        return self.slope.copy()

    def v_ctrl(self, t: float) -> np.ndarray:
        """Linear control: zero on [0, t0], z' + nu A z after."""
        if t <= self.t0:
            return np.zeros(self.n_modes)
        return self.slope + self.nu * self.lam * self.path(t)

    def u_ctrl(self, t: float) -> np.ndarray:
        """Lifted control alpha B(z) - beta c(z) + v_ctrl."""
        if self._nl is None:
            raise ControlError("plan has no nonlinear part; call lift_control first")
        z = self.path(t)
        return -self._nl.drift(z) + self.v_ctrl(t)

    def linear_residual(self, t: float) -> float:
        """||z' + nu A z - v_ctrl|| at t."""
        r = self.path_derivative(t) + self.nu * self.lam * self.path(t) - self.v_ctrl(t)
        return float(np.linalg.norm(r))

    def nonlinear_residual(self, t: float) -> float:
        """||z' + nu A z + alpha B(z) - beta c(z) - u_ctrl|| at t."""
        z = self.path(t)
        r = self.path_derivative(t) + self.nu * self.lam * z - self._nl.drift(z) - self.u_ctrl(t)
        return float(np.linalg.norm(r))

    def control_energy(self, n_t: int = 2001) -> float:
        """int_0^T ||u_ctrl||^2 dt by the trapezoid rule on a grid through t0."""
        k0 = max(2, int(round(n_t * self.t0 / self.T)))
        ts = np.unique(np.concatenate([np.linspace(0.0, self.t0, k0), np.linspace(self.t0, self.T, n_t - k0 + 1)]))
        vals = np.array([np.dot(u, u) for u in map(self.u_ctrl, ts)])
        return float(np.trapezoid(vals, ts))

    def to_dict(self) -> dict:
        return {
            "a": self.a.coeffs.tolist(),
            "b": self.b.coeffs.tolist(),
            "T": self.T,
            "t0": self.t0,
            "nu": self.nu,
            "lifted": self.params is not None,
        }


def linear_control(a: SpectralField, b: SpectralField, T: float, t0: float | None = None, nu: float = 1.0) -> ControlPlan:
    if not T > 0:
        raise ControlError(f"T must be positive, got {T}")
    t0 = T / 2.0 if t0 is None else t0
    return ControlPlan(a, b, T, t0, nu)


def lift_control(plan: ControlPlan, p: ModelParams) -> ControlPlan:
    if p.nu != plan.nu:
        raise ControlError("plan and model disagree on nu")
    return ControlPlan(plan.a, plan.b, plan.T, plan.t0, plan.nu, p)


@dataclass
class SteeringReport:
    terminal_error: float
    tolerance: float
    passed: bool
    b_norm: float
    dt: float
    n_modes: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def verify_steering(plan: ControlPlan, p: ModelParams, cfg: SolverConfig) -> SteeringReport:
    """Integrate the controlled deterministic equation from a and compare x(T) with b."""
    if plan.params is None:
        plan = lift_control(plan, p)
    c = replace(cfg, n_modes=plan.n_modes, t_end=plan.T, record_stride=max(1, int(round(plan.T / cfg.dt))))
    tr = run_trajectory(plan.a, p, None, c, forcing=plan.u_ctrl)
    err = float(np.linalg.norm(tr.states[-1] - plan.b.coeffs))
    bn = float(np.linalg.norm(plan.b.coeffs))
    tol = 1e-4 * max(1.0, bn)
    return SteeringReport(err, tol, bool(err <= tol), bn, cfg.dt, plan.n_modes)


# first variation

def first_variation(u_path: Trajectory, h: SpectralField, p: ModelParams, spec: CutoffSpec | None, cfg: SolverConfig) -> Trajectory:
    """Directional derivative U^R(t) of x -> u^R(t, x) along h.

    This is the tangent-linear model of the time-stepping scheme, i.e. the
    discrete counterpart of
        dU/dt = -nu A U + DF(M_R(u)) D M_R(u) U,   U(0) = h,
    evaluated along the stored path. It agrees with difference quotients of
    the mollified flow to O(epsilon).
    """
    if u_path.states is None:
        raise ControlError("first_variation needs stored path states")
    n_steps = cfg.n_steps
    if u_path.states.shape[0] != n_steps + 1:
        raise ControlError("path too sparse: record the path at every step (record_stride=1)")
    if not np.allclose(np.diff(u_path.times), cfg.dt, rtol=1e-9, atol=0):
        raise ControlError("path time grid does not match the solver step")
    st = Stepper(p, None, cfg)
    nl = st.nl
    U = h.resized(cfg.n_modes).coeffs.astype(float).copy()
    out = np.zeros((n_steps + 1, cfg.n_modes))
    out[0] = U
    mild = cfg.scheme == "mild_exponential"
    for i in range(n_steps):
        u = u_path.states[i]
        if spec is not None:
            ue = mollify_coeffs(u, spec)
            w = mollify_jvp(u, U, spec)
        else:
            ue, w = u, U
        g = np.zeros_like(U) if p.linear else nl.drift_jvp(ue, w)
        if mild:
            U = st.decay * U + st.phi_dt * g
        else:
            U = (U + cfg.dt * g) * st.inv
        out[i + 1] = U
    l2 = np.sqrt(np.sum(out * out, axis=1))
    return Trajectory(
        times=np.asarray(u_path.times),
        series={"l2": l2},
        ledger=None,
        x0=SpectralField(out[0]),
        states=out,
        meta={"kind": "first_variation"},
    )


@dataclass
class VariationAudit:
    ratios: list
    scaled_ratios: list
    max_ratio: float
    max_rel_change: float
    passed: bool
    scale: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def variation_ratio(U: Trajectory, h: SpectralField) -> float:
    """sup_t ||U(t)|| / ||h||."""
    return float(np.max(U.series["l2"]) / np.linalg.norm(h.coeffs))


def variation_bound_audit(runs, p: ModelParams, spec: CutoffSpec | None, cfg: SolverConfig, scale: float = 2.0, tol: float = 1e-8) -> VariationAudit:
    """sup_t ||U^R(t)|| / ||h|| over (path, h) pairs, and its invariance under h -> scale h."""
    runs = list(runs)
    if len(runs) < 10:
        raise ControlError("variation_bound_audit needs at least 10 (x, h) pairs")
    r1, r2 = [], []
    for path, h in runs:
        r1.append(variation_ratio(first_variation(path, h, p, spec, cfg), h))
        hs = h * scale
        r2.append(variation_ratio(first_variation(path, hs, p, spec, cfg), hs))
    rel = max(abs(a - b) / abs(a) for a, b in zip(r1, r2))
    ok = all(math.isfinite(r) for r in r1) and rel <= tol
    return VariationAudit(r1, r2, float(max(r1)), float(rel), bool(ok), scale)


# stopping-time consistency of the mollified system

@dataclass
class ConsistencyReport:
    n_paths: int
    stop_times: list
    max_gap_before_stop: float
    passed: bool
    tol: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def stopping_consistency(x0: SpectralField, p: ModelParams, noise: NoiseSpec, cfg: SolverConfig, radius: float, seeds, tol: float = 1e-9) -> ConsistencyReport:
    """Compare u and u^R on shared noise up to tau = inf{t : ||u^R(t)|| > R}."""
    cut = CutoffSpec(radius)
    c = replace(cfg, record_stride=1, store_states=True)
    gaps, taus = [], []
    for sd in seeds:
        u = run_trajectory(x0, p, noise, c, seed=sd)
        ur = run_trajectory(x0, p, noise, c, seed=sd, cutoff=cut)
        norms = np.sqrt(np.sum(ur.states**2, axis=1))
        above = np.nonzero(norms > radius)[0]
        stop = int(above[0]) if above.size else norms.size - 1
        taus.append(float(ur.times[stop]))
        gaps.append(float(np.max(np.abs(u.states[: stop + 1] - ur.states[: stop + 1]))))
    g = max(gaps) if gaps else 0.0
    return ConsistencyReport(len(gaps), taus, g, bool(g <= tol), tol)
