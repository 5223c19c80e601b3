"""Experiment configuration, orchestration and file outputs.

A run writes three kinds of files into ``output_dir``:

* ``manifest.json``: resolved config, every constant used by the audits and
  a ``metadata`` block (the only place holding timestamps, host data and
  the output location);
* ``report.json``: the audit report with a flat ``summary`` and ``passed``;
* columnar CSV series (header row, comma separated).

Randomness: path i of sweep value j draws from the Philox stream keyed by
SeedSequence(seed, spawn_key=(j, i)); plain runs use j = 0.
"""

from __future__ import annotations

import copy
import csv
import datetime as _dt
import json
import math
import os
import platform
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .control import first_variation, lift_control, linear_control, stopping_consistency, variation_bound_audit, verify_steering
from .ergodics import (
    AuditRefusal,
    ergodicity_trend,
    exp_moment_audit,
    gradient_occupation_fraction,
    krylov_bogoliubov,
    min_recurrence_radius,
    recurrence_constant,
    recurrence_tails,
)
from .integrator import (
    DivergenceError,
    SolverConfig,
    galerkin_refinement,
    residual_headline,
    run_ensemble,
    run_trajectory,
    write_trajectory_csv,
)
from .model import ModelParams, ParameterError, cramer_constant, lambda0_max, validate_params
from .noise import NoiseError, NoiseSpec, validate_noise
from .nonlinear import CutoffSpec
from .spectral import SpectralField, eigenvalue

EXPERIMENTS = ("simulate", "verify-energy", "invariant", "exp-moment", "recurrence", "control", "variation", "refine")

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3


class ConfigError(ValueError):
    """Invalid experiment configuration."""

    def __init__(self, message: str, **info):
        super().__init__(message)
        self.info = info


DEFAULT_CONFIG = {
    "experiment": "simulate",
    "model": {"nu": 1.0, "alpha": 1.0, "beta": 1.0, "gamma": 0.5, "delta": 1.0},
    "noise": {"power_law": {"c_lo": 0.1, "c_hi": 0.5, "eps": 0.25}, "epsilon": 0.75, "kappa": 1.0},
    "solver": {"n_modes": 16, "dt": 0.001, "t_end": 1.0, "scheme": "direct_semi_implicit", "record_stride": 10},
    "initial": {"coeffs": [0.5]},
    "ensemble_size": 1,
    "seed": 0,
    "output_dir": "sgbh_out",
    "observables": ["l2_sq"],
    "audit": {},
}


@dataclass
class ExperimentConfig:
    experiment: str
    model: ModelParams
    noise: NoiseSpec
    solver: SolverConfig
    initial: SpectralField
    ensemble_size: int = 1
    seed: int = 0
    output_dir: str = "sgbh_out"
    observables: list = field(default_factory=lambda: ["l2_sq"])
    audit: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        d = copy.deepcopy(raw)
        unknown = set(d) - set(DEFAULT_CONFIG)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}", fields=sorted(unknown))
        merged = copy.deepcopy(DEFAULT_CONFIG)
        merged.update(d)
        exp = merged["experiment"]
        if exp not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {exp!r}", field="experiment")
        try:
            model = ModelParams.from_dict(merged["model"])
        except (ParameterError, TypeError) as e:
            raise ConfigError(str(e), field="model") from None
        try:
            solver = SolverConfig.from_dict(merged["solver"])
        except (ValueError, TypeError) as e:
            raise ConfigError(str(e), field="solver") from None
        try:
            noise = NoiseSpec.from_dict(merged["noise"], n_modes=solver.noise_modes)
        except (NoiseError, KeyError, TypeError) as e:
            raise ConfigError(str(e), field="noise") from None
        if noise.n_modes < solver.n_modes:
            noise = noise.resized(solver.n_modes)
        init = merged["initial"]
        try:
            x0 = SpectralField(init.get("coeffs", [])).resized(solver.n_modes)
        except (ValueError, AttributeError) as e:
            raise ConfigError(f"initial: {e}", field="initial") from None
        n = merged["ensemble_size"]
        if not isinstance(n, int) or n < 1:
            raise ConfigError("ensemble_size must be a positive integer", field="ensemble_size")
        seed = merged["seed"]
        if not isinstance(seed, int) or seed < 0 or seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer", field="seed")
        if not isinstance(merged["audit"], dict):
            raise ConfigError("audit must be a mapping", field="audit")
        return cls(exp, model, noise, solver, x0, n, seed, str(merged["output_dir"]), list(merged["observables"]), dict(merged["audit"]))

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "model": self.model.to_dict(),
            "noise": self.noise.to_dict(),
            "solver": self.solver.to_dict(),
            "initial": {"coeffs": self.initial.coeffs.tolist()},
            "ensemble_size": self.ensemble_size,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "observables": list(self.observables),
            "audit": copy.deepcopy(self.audit),
        }

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}", field="config") from None
        if not isinstance(raw, dict):
            raise ConfigError("config document must be a mapping", field="config")
        return cls.from_dict(raw)


# constants

def constants(cfg: ExperimentConfig) -> dict:
    p, s = cfg.model, cfg.noise.resized(cfg.solver.n_modes)
    out = {
        "lambda_1": eigenvalue(1),
        "lambda_N": eigenvalue(cfg.solver.n_modes),
        "trace_Q": s.trace,
        "q_norm": s.q_norm,
        "C_beta_delta": cramer_constant(p),
        "lambda0_max": lambda0_max(p, s.q_norm) if s.q_norm > 0 else None,
        "x_sq": float(np.dot(cfg.initial.coeffs, cfg.initial.coeffs)),
    }
    if cfg.experiment in ("exp-moment", "recurrence") and out["lambda0_max"] is not None:
        try:
            out["lambda0"] = _lambda0(cfg)
        except ConfigError:
            out["lambda0"] = None
    if "M" in cfg.audit:
        M = float(cfg.audit["M"])
        out["M"] = M
        out["C1"] = recurrence_constant(M, p, s)
        out["min_M"] = min_recurrence_radius(p, s)
    return out


def check_regime(cfg: ExperimentConfig, override: bool) -> dict:
    reg = validate_params(cfg.model)
    nrep = validate_noise(cfg.noise)
    info = {"regime": reg.to_dict(), "noise": nrep.to_dict()}
    if override:
        return info
    if not cfg.model.linear and not reg.uniqueness:
        raise ConfigError(
            f"uniqueness regime not met: beta*nu={cfg.model.beta * cfg.model.nu:g} <= {reg.uniqueness_threshold:g} (use --override-regime)",
            **info,
        )
    if not nrep.regularity_passed:
        raise ConfigError(f"noise regularity check failed (slope {nrep.regularity_slope:g}); use --override-regime", **info)
    return info


# output helpers

def _clean(o):
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, np.ndarray):
        return _clean(o.tolist())
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        f = float(o)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    return o


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


def _metadata() -> dict:
    return {
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "host": platform.node(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "sgbh": __version__,
    }


@dataclass
class RunResult:
    status: int
    report: dict
    out_dir: Path


# experiments

def _x(cfg: ExperimentConfig, key: str, default=None) -> SpectralField:
    raw = cfg.audit.get(key, default)
    if raw is None:
        return SpectralField.zeros(cfg.solver.n_modes)
    return SpectralField(raw).resized(cfg.solver.n_modes)


def _ensemble(cfg: ExperimentConfig, x0, ctx, solver=None, n=None, value_index=None):
    return run_ensemble(
        x0,
        cfg.model,
        cfg.noise,
        solver or cfg.solver,
        cfg.seed,
        n_paths=n or cfg.ensemble_size,
        workers=ctx["workers"],
        value_index=ctx["value_index"] if value_index is None else value_index,
    )


def exp_simulate(cfg, out, ctx):
    ens = _ensemble(cfg, cfg.initial, ctx)
    for i in range(ens.n_paths):
        write_trajectory_csv(ens.trajectory(i), out / f"traj_{i:04d}.csv", snapshots=bool(cfg.audit.get("snapshots", False)))
    heads = [residual_headline(ens.trajectory(i)) for i in range(ens.n_paths)]
    summary = {
        "n_paths": ens.n_paths,
        "final_l2_mean": float(ens.series["l2"][:, -1].mean()),
        "max_residual_headline": float(max(heads)),
    }
    return {"summary": summary, "passed": True}


def exp_verify_energy(cfg, out, ctx):
    rungs = int(cfg.audit.get("rungs", 4))
    min_ratio = float(cfg.audit.get("min_ratio", 1.7))
    base = cfg.solver
    rows, heads = [], []
    for r in range(rungs):
        dt = base.dt / 2**r
        sub = 2 ** (rungs - 1 - r)
        s = replace(base, dt=dt, noise_substeps=base.noise_substeps * sub, record_stride=base.record_stride * 2**r)
        tr = run_trajectory(cfg.initial, cfg.model, cfg.noise, s, seed=cfg.seed, value_index=ctx["value_index"])
        h = residual_headline(tr)
        heads.append(h)
        write_trajectory_csv(tr, out / f"energy_rung{r}.csv")
    ratios = [a / b if b > 0 else math.inf for a, b in zip(heads, heads[1:])]
    for r, h in enumerate(heads):
        rows.append([r, base.dt / 2**r, h, ratios[r - 1] if r else float("nan")])
    write_table(out / "energy_ladder.csv", ["rung", "dt", "headline", "ratio"], rows)
    passed = all(x >= min_ratio for x in ratios)
    return {
        "summary": {"headline_dt": heads[0], "headline_finest": heads[-1], "min_ratio": min(ratios) if ratios else None},
        "headlines": heads,
        "ratios": ratios,
        "min_ratio_required": min_ratio,
        "passed": passed,
    }


def exp_invariant(cfg, out, ctx):
    a = cfg.audit
    horizons = [float(h) for h in a.get("horizons", [cfg.solver.t_end / 8, cfg.solver.t_end / 4, cfg.solver.t_end / 2, cfg.solver.t_end])]
    if max(horizons) > cfg.solver.t_end + 1e-12:
        raise ConfigError("horizons exceed solver.t_end", field="audit.horizons")
    xb = _x(cfg, "x_b")
    bins = int(a.get("bins", 40))
    ea = _ensemble(cfg, cfg.initial, ctx)
    eb = _ensemble(cfg, xb, ctx)
    trend = ergodicity_trend(ea, eb, horizons, "l2_sq", bins)
    burn = float(a.get("burn_in", cfg.solver.t_end / 2))
    hists = krylov_bogoliubov(ea, burn, cfg.observables, bins=bins)
    for obs, h in hists.items():
        rows = [[lo, hi, w / h.total_time] for lo, hi, w in zip(h.edges[:-1], h.edges[1:], h.weights)]
        write_table(out / f"occupation_{obs}.csv", ["lo", "hi", "mass"], rows)
    m_grid = [float(m) for m in a.get("M_grid", [1, 2, 4, 8, 16, 32, 64])]
    tab = gradient_occupation_fraction(ea, m_grid, cfg.model, cfg.noise.resized(cfg.solver.n_modes))
    write_table(out / "tightness.csv", ["M", "fraction", "bound", "passed"], [[m, f, b, int(ok)] for m, f, b, ok in zip(tab.m_grid, tab.fractions, tab.bounds, tab.passed)])
    write_table(out / "coupling.csv", ["T", "distance"], [[t, d] for t, d in zip(trend.horizons, trend.distances)])
    max_slope = float(a.get("max_slope", -1.8))
    slope_ok = tab.slope is not None and tab.slope <= max_slope
    passed = trend.monotone and all(tab.passed) and slope_ok
    return {
        "summary": {"coupling_final": trend.distances[-1], "tightness_slope": tab.slope, "trend_monotone": trend.monotone},
        "coupling": trend.to_dict(),
        "tightness": tab.to_dict(),
        "occupation": {k: v.to_dict() for k, v in hists.items()},
        "passed": passed,
    }


def _lambda0(cfg) -> float:
    s = cfg.noise.resized(cfg.solver.n_modes)
    lmax = lambda0_max(cfg.model, s.q_norm)
    if "lambda0" in cfg.audit:
        lam = float(cfg.audit["lambda0"])
    else:
        lam = float(cfg.audit.get("lambda0_fraction", 0.5)) * lmax
    if not 0 < lam < lmax:
        raise ConfigError(f"lambda0={lam:g} outside the window (0, lambda0_max={lmax:g})", field="audit.lambda0", lambda0=lam, lambda0_max=lmax)
    return lam


def exp_moment(cfg, out, ctx):
    lam = _lambda0(cfg)
    s = cfg.noise.resized(cfg.solver.n_modes)
    times = [float(t) for t in cfg.audit.get("times", [cfg.solver.t_end])]
    min_paths = int(cfg.audit.get("min_paths", 1000))
    if cfg.ensemble_size < min_paths:
        raise ConfigError(f"exp-moment needs ensemble_size >= {min_paths}", field="ensemble_size")
    ens = _ensemble(cfg, cfg.initial, ctx)
    audit = exp_moment_audit(ens, lam, cfg.model, s, times=times, min_paths=min_paths, closed_form=cfg.model.linear)
    # expectation bound on the moment functional
    idx = [int(np.argmin(np.abs(ens.times - t))) for t in times]
    mf = ens.series["l2_sq"] + ens.series["diss"] + 0.25 * ens.series["absorb"]
    x_sq = audit.x_sq
    mrows, mpass = [], []
    for t, j in zip(times, idx):
        m = float(mf[:, j].mean())
        se = float(mf[:, j].std(ddof=1) / math.sqrt(mf.shape[0]))
        bnd = x_sq + (s.trace + cramer_constant(cfg.model)) * t
        ok = m - 3.0 * se <= bnd
        mrows.append([t, m, se, bnd, int(ok)])
        mpass.append(ok)
    write_table(out / "moment_functional.csv", ["t", "mean", "se", "bound", "passed"], mrows)
    rows = [[t, b] + [audit.empirical[k][i] for k in ("Z", "l2", "grad", "absorb")] for i, (t, b) in enumerate(zip(audit.times, audit.bound))]
    write_table(out / "exp_moment.csv", ["t", "bound", "Z", "l2", "grad", "absorb"], rows)
    passed = audit.all_passed and all(mpass)
    return {
        "summary": {"lambda0": lam, "max_Z_over_bound": max(e / b for e, b in zip(audit.empirical["Z"], audit.bound))},
        "exp_moment": audit.to_dict(),
        "moment_functional": {"rows": mrows, "passed": all(mpass)},
        "passed": passed,
    }


def exp_recurrence(cfg, out, ctx):
    lam = _lambda0(cfg)
    s = cfg.noise.resized(cfg.solver.n_modes)
    M = float(cfg.audit.get("M", 3.0))
    c1 = recurrence_constant(M, cfg.model, s)
    if c1 <= 0:
        raise ConfigError(f"C1 = {c1:g} <= 0 for M={M:g}; minimal admissible M is {min_recurrence_radius(cfg.model, s):g}", field="audit.M", C1=c1, min_M=min_recurrence_radius(cfg.model, s))
    starts = cfg.audit.get("starts", [cfg.initial.coeffs.tolist()])
    reports, passed, margins = [], True, []
    for j, x in enumerate(starts):
        ens = _ensemble(cfg, SpectralField(x).resized(cfg.solver.n_modes), ctx)
        st = recurrence_tails(ens, M, lam, cfg.model, s, n_max=cfg.audit.get("n_max"))
        rows = [[n, t, c, e, se, int(inc), int(ok)] for n, t, c, e, se, inc, ok in zip(st.n_values, st.tails, st.counts, st.envelope, st.strict_envelope, st.included, st.passed_n)]
        write_table(out / f"recurrence_start{j}.csv", ["n", "tail", "count", "envelope", "strict_envelope", "included", "passed"], rows)
        reports.append(st.to_dict())
        margins += [e - t for e, t, inc in zip(st.envelope, st.tails, st.included) if inc]
        passed = passed and st.passed
    return {
        "summary": {
            "M": M,
            "C1": c1,
            "C1_lambda0": c1 * lam,
            "passed_starts": sum(int(r["passed"]) for r in reports),
            "min_envelope_margin": min(margins) if margins else None,
        },
        "starts": reports,
        "passed": passed,
    }


def exp_control(cfg, out, ctx):
    a = cfg.audit
    n = cfg.solver.n_modes
    xa = _x(cfg, "a", cfg.initial.coeffs.tolist())
    xb = _x(cfg, "b")
    T = float(a.get("T", cfg.solver.t_end))
    t0 = a.get("t0")
    plan = lift_control(linear_control(xa, xb, T, None if t0 is None else float(t0), cfg.model.nu), cfg.model)
    ts = np.linspace(0.0, T, int(a.get("samples", 101)))
    lin = max(plan.linear_residual(t) for t in ts)
    nonlin = max(plan.nonlinear_residual(t) for t in ts)
    hit = float(np.linalg.norm(plan.path(T) - xb.coeffs))
    s1 = replace(cfg.solver, n_modes=n, t_end=T)
    r1 = verify_steering(plan, cfg.model, s1)
    r2 = verify_steering(plan, cfg.model, replace(s1, dt=s1.dt / 2))
    ratio = r1.terminal_error / r2.terminal_error if r2.terminal_error > 0 else math.inf
    write_table(out / "control_path.csv", ["t", "u_ctrl_l2", "v_ctrl_l2"], [[t, float(np.linalg.norm(plan.u_ctrl(t))), float(np.linalg.norm(plan.v_ctrl(t)))] for t in ts])
    passed = hit <= 1e-12 and nonlin <= 1e-9 and r1.passed and ratio >= float(a.get("min_ratio", 1.7))
    return {
        "summary": {"terminal_error": r1.terminal_error, "refinement_ratio": ratio, "lifted_residual": nonlin},
        "linear_residual": lin,
        "endpoint_gap": hit,
        "control_energy": plan.control_energy(),
        "steering": r1.to_dict(),
        "steering_half_dt": r2.to_dict(),
        "plan": plan.to_dict(),
        "passed": passed,
    }


def exp_variation(cfg, out, ctx):
    a = cfg.audit
    n = cfg.solver.n_modes
    cut = CutoffSpec(float(a.get("cutoff_radius", 1.0)))
    pairs = int(a.get("pairs", 10))
    s = replace(cfg.solver, record_stride=1, store_states=True)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed, spawn_key=(ctx["value_index"], 2**32))))
    k = np.arange(1, n + 1)
    runs = []
    for i in range(pairs):
        x = rng.standard_normal(n) / k**2
        h = rng.standard_normal(n) / k**2
        path = run_trajectory(SpectralField(x), cfg.model, cfg.noise, s, seed=cfg.seed, traj_index=i, value_index=ctx["value_index"], cutoff=cut)
        runs.append((path, SpectralField(h)))
    audit = variation_bound_audit(runs, cfg.model, cut, s)
    # finite-difference consistency on the first pair
    path, h = runs[0]
    U = first_variation(path, h, cfg.model, cut, s)
    gaps = []
    for eps in [float(e) for e in a.get("eps", [1e-3, 2.5e-4, 6.25e-5])]:
        pe = run_trajectory(SpectralField(path.x0.coeffs + eps * h.coeffs), cfg.model, cfg.noise, s, seed=cfg.seed, traj_index=0, value_index=ctx["value_index"], cutoff=cut)
        gaps.append(float(np.max(np.abs((pe.states - path.states) / eps - U.states))))
    fd_ratios = [g1 / g2 for g1, g2 in zip(gaps, gaps[1:])]
    cons = stopping_consistency(SpectralField(path.x0.coeffs), cfg.model, cfg.noise, s, cut.radius, [cfg.seed + j for j in range(int(a.get("consistency_paths", 5)))])
    write_table(out / "variation.csv", ["pair", "ratio", "scaled_ratio"], [[i, r1, r2] for i, (r1, r2) in enumerate(zip(audit.ratios, audit.scaled_ratios))])
    passed = audit.passed and all(r >= 3.0 for r in fd_ratios) and cons.passed
    return {
        "summary": {"max_ratio": audit.max_ratio, "rescale_change": audit.max_rel_change, "fd_min_ratio": min(fd_ratios)},
        "bound_audit": audit.to_dict(),
        "fd_gaps": gaps,
        "fd_ratios": fd_ratios,
        "consistency": cons.to_dict(),
        "passed": passed,
    }


def exp_refine(cfg, out, ctx):
    n_list = [int(n) for n in cfg.audit.get("n_list", [4, 8, 16])]
    seeds = [cfg.seed + j for j in range(int(cfg.audit.get("seeds", 2)))]
    rep = galerkin_refinement(cfg.initial, cfg.model, cfg.noise.resized(max(n_list)), cfg.solver, seeds, n_list)
    write_table(out / "refinement.csv", ["N", "functional", "functional_sup"], [[n, f, fs] for n, f, fs in zip(rep.n_list, rep.functional, rep.functional_sup)])
    return {"summary": {"cauchy_last": rep.cauchy_sup[-1] if rep.cauchy_sup else None, "monotone": rep.monotone}, "refinement": rep.to_dict(), "passed": rep.monotone}


RUNNERS = {
    "simulate": exp_simulate,
    "verify-energy": exp_verify_energy,
    "invariant": exp_invariant,
    "exp-moment": exp_moment,
    "recurrence": exp_recurrence,
    "control": exp_control,
    "variation": exp_variation,
    "refine": exp_refine,
}


def run(cfg: ExperimentConfig, workers: int | None = None, override_regime: bool = False, value_index: int = 0, out_dir=None) -> RunResult:
    """Run one experiment and write manifest, report and series files."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ctx = {"workers": workers, "value_index": value_index}
    resolved = cfg.to_dict()
    meta = _metadata()
    # location is not content: keep it out of the reproducible part
    meta["output_dir"] = str(resolved.pop("output_dir"))
    manifest = {"config": resolved, "value_index": value_index, "metadata": meta}
    try:
        manifest["constants"] = constants(cfg)
        manifest.update(check_regime(cfg, override_regime))
        manifest["override_regime"] = bool(override_regime)
        report = RUNNERS[cfg.experiment](cfg, out, ctx)
        status = EXIT_PASS if report.get("passed") else EXIT_FAIL
    except (ConfigError, AuditRefusal) as e:
        report = {"error": "invalid_config", "message": str(e), "details": getattr(e, "info", {}), "passed": False}
        status = EXIT_CONFIG
    except DivergenceError as e:
        report = {"error": "divergence", "message": str(e), "t": e.t, "path_index": e.path_index, "passed": False}
        status = EXIT_DIVERGENCE
    report["experiment"] = cfg.experiment
    report["exit_status"] = status
    write_json(out / "manifest.json", manifest)
    write_json(out / "report.json", report)
    return RunResult(status, report, out)


def _set_path(d: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    cur = d
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
        if not isinstance(cur, dict):
            raise ConfigError(f"axis {dotted!r} does not name a scalar field", field=dotted)
    cur[keys[-1]] = value


def _get_path(d: dict, dotted: str):
    cur = d
    for k in dotted.split("."):
        if not isinstance(cur, dict) or k not in cur:
            return None
        cur = cur[k]
    return cur


def sweep(cfg: ExperimentConfig, axis: str, values, workers: int | None = None, override_regime: bool = False, shared_noise: bool = False, out_dir=None) -> RunResult:
    """Run the experiment once per value of a scalar config field.

    Value j uses sub-seed index j + 1 unless ``shared_noise`` is set, in
    which case every value reuses the plain-run stream (index 0); use that
    for dt ladders that must see one noise path.
    """
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value", field="values")
    base = cfg.to_dict()
    cur = _get_path(base, axis)
    if isinstance(cur, (dict, list)):
        raise ConfigError(f"axis {axis!r} is not a scalar field", field=axis)
    if cur is None and not axis.startswith("audit."):
        raise ConfigError(f"axis {axis!r} is not a config field", field=axis)
    for v in values:
        if isinstance(v, (dict, list)):
            raise ConfigError("sweep values must be scalars", field="values")
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    summaries, statuses = [], []
    for j, v in enumerate(values):
        d = copy.deepcopy(base)
        _set_path(d, axis, v)
        if axis == "solver.dt" and shared_noise:
            finest = min(float(x) for x in values)
            ratio = float(v) / finest
            if abs(ratio - round(ratio)) > 1e-9:
                raise ConfigError("shared-noise dt sweep needs dt values that are integer multiples of the finest", field="values")
            d["solver"]["noise_substeps"] = int(round(ratio))
            d["solver"]["record_stride"] = max(1, int(round(d["solver"]["t_end"] / float(v))))
        sub = ExperimentConfig.from_dict(d)
        res = run(sub, workers, override_regime, value_index=0 if shared_noise else j + 1, out_dir=out / f"value_{j:03d}")
        summaries.append(res.report.get("summary", {}))
        statuses.append(res.status)
    # refused or diverged values have no summary; the header is the union
    keys = sorted({k for sm in summaries for k, x in sm.items() if isinstance(x, (int, float, bool)) or x is None})
    rows = [[v, st] + [sm.get(k) for k in keys] for v, st, sm in zip(values, statuses, summaries)]
    write_table(out / "sweep.csv", [axis, "exit_status"] + keys, rows)
    status = max(statuses) if any(s != EXIT_PASS for s in statuses) else EXIT_PASS
    report = {"axis": axis, "values": values, "columns": [axis, "exit_status"] + keys, "rows": rows, "passed": status == EXIT_PASS, "exit_status": status}
    write_json(out / "sweep.json", report)
    return RunResult(status, report, out)
