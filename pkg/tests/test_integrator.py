import csv
import math
from dataclasses import replace

import numpy as np
import pytest

from sgbh.integrator import (
    DivergenceError,
    SolverConfig,
    energy_residual,
    galerkin_refinement,
    residual_headline,
    run_ensemble,
    run_trajectory,
    step_direct,
    step_mild,
    write_trajectory_csv,
)
from sgbh.model import ModelParams
from sgbh.noise import NoiseSpec, OUState
from sgbh.spectral import SpectralField, apply_semigroup, eigenvalues

P = ModelParams(1.0, 1.0, 1.0, 0.5, 1.0)
HEAT = ModelParams.linear_limit(1.0)


def sigmas(amp, n):
    return NoiseSpec(tuple(amp / k for k in range(1, n + 1)), epsilon=0.99)


def x0(n, *c):
    return SpectralField(list(c)).resized(n)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(n_modes=0, dt=0.1, t_end=1.0)
    with pytest.raises(ValueError):
        SolverConfig(n_modes=4, dt=0.3, t_end=1.0)
    with pytest.raises(ValueError):
        SolverConfig(n_modes=4, dt=0.1, t_end=1.0, scheme="rk4")
    c = SolverConfig(n_modes=4, dt=0.1, t_end=1.0)
    assert SolverConfig.from_dict(c.to_dict()) == c and c.n_steps == 10


def test_step_mild_rest_point_and_heat_limit():
    z = OUState.zero(6)
    assert not np.any(step_mild(SpectralField.zeros(6), z, 0.01, P).coeffs)
    v = x0(6, 0.4, -0.3, 0.2)
    assert np.allclose(step_mild(v, z, 0.01, HEAT).coeffs, apply_semigroup(v, 0.01, 1.0).coeffs, rtol=1e-15, atol=0)


def test_step_mild_local_error_order():
    # one step of dt against a 100-substep reference: halving dt cuts the defect about 4x
    v = x0(8, 0.8, 0.3, -0.2)
    z = OUState.zero(8)
    defects = []
    for dt in (4e-3, 2e-3, 1e-3):
        one = step_mild(v, z, dt, P).coeffs
        ref = v
        for _ in range(100):
            ref = step_mild(ref, z, dt / 100, P)
        defects.append(np.linalg.norm(one - ref.coeffs))
    r = [a / b for a, b in zip(defects, defects[1:])]
    assert all(3.3 <= x <= 4.7 for x in r), r


def test_step_direct_examples():
    u = x0(5, 1.0, 0.5, 0.25)
    dt = 0.01
    got = step_direct(u, SpectralField.zeros(5), dt, ModelParams.linear_limit(50.0)).coeffs
    assert np.allclose(got, u.coeffs / (1 + 50.0 * eigenvalues(5) * dt), rtol=1e-15)
    assert np.all(np.abs(got) <= np.abs(u.coeffs))
    assert not np.any(step_direct(SpectralField.zeros(5), SpectralField.zeros(5), dt, P).coeffs)


def test_t_end_zero():
    tr = run_trajectory(x0(4, 0.5), P, sigmas(0.3, 4), SolverConfig(n_modes=4, dt=0.1, t_end=0.0))
    assert tr.times.tolist() == [0.0]
    assert energy_residual(tr).tolist() == [0.0]
    assert np.array_equal(tr.states[0], x0(4, 0.5).coeffs)


def test_zero_data_zero_noise_residual_identically_zero():
    tr = run_trajectory(SpectralField.zeros(6), P, None, SolverConfig(n_modes=6, dt=0.01, t_end=0.5))
    assert not np.any(energy_residual(tr))


def test_heat_energy_balance_exact():
    cfg = SolverConfig(n_modes=8, dt=0.01, t_end=1.0, scheme="mild_exponential")
    tr = run_trajectory(x0(8, 1.0, 0.5, 0.2), HEAT, None, cfg)
    assert residual_headline(tr) <= 1e-10


def test_small_data_decay_rate():
    # linearization at 0: rate nu pi^2 + beta gamma
    cfg = SolverConfig(n_modes=8, dt=1e-3, t_end=0.5, scheme="mild_exponential")
    tr = run_trajectory(x0(8, 1e-4), P, None, cfg)
    t, l2 = tr.times, tr.series["l2"]
    sel = t >= 0.1
    slope = np.polyfit(t[sel], np.log(l2[sel]), 1)[0]
    assert slope == pytest.approx(-(math.pi**2 + 0.5), rel=1e-2)
    assert np.all(np.diff(l2) <= 0)


def test_linear_contractivity():
    for scheme in ("direct_semi_implicit", "mild_exponential"):
        cfg = SolverConfig(n_modes=8, dt=1e-3, t_end=0.5, scheme=scheme)
        tr = run_trajectory(x0(8, 1.0, 1.0, 1.0), HEAT, None, cfg)
        slope = np.polyfit(tr.times, np.log(tr.series["l2"]), 1)[0]
        assert slope <= -math.pi**2 * 0.95


def test_energy_residual_first_order():
    spec = sigmas(0.1, 8)
    base = SolverConfig(n_modes=8, dt=4e-3, t_end=1.0)
    h = []
    for r in range(3):
        c = replace(base, dt=base.dt / 2**r, noise_substeps=2 ** (2 - r))
        h.append(residual_headline(run_trajectory(x0(8, 1.0, 0.5), P, spec, c, seed=3)))
    assert h[0] / h[1] >= 1.7 and h[1] / h[2] >= 1.7


def test_fine_noise_path_is_shared_across_rungs():
    # one coarse step with 2 substeps equals the Wiener path of two fine steps
    spec = sigmas(0.3, 4)
    a = run_trajectory(x0(4, 0.2), HEAT, spec, SolverConfig(n_modes=4, dt=0.02, t_end=0.2, noise_substeps=2, scheme="mild_exponential"), seed=1)
    b = run_trajectory(x0(4, 0.2), HEAT, spec, SolverConfig(n_modes=4, dt=0.01, t_end=0.2, record_stride=2, scheme="mild_exponential"), seed=1)
    # exact OU composition: the linear case is exact in both, so the paths agree
    assert np.allclose(a.states[-1], b.states[-1], atol=1e-13)


def test_cross_scheme_convergence():
    spec = sigmas(0.3, 8)
    base = SolverConfig(n_modes=8, dt=4e-3, t_end=1.0)
    diffs, dts = [], []
    for r in range(4):
        c = replace(base, dt=base.dt / 2**r, noise_substeps=2 ** (3 - r))
        a = run_trajectory(x0(8, 1.0, 0.5), P, spec, c, seed=5)
        b = run_trajectory(x0(8, 1.0, 0.5), P, spec, replace(c, scheme="mild_exponential"), seed=5)
        diffs.append(np.linalg.norm(a.states[-1] - b.states[-1]))
        dts.append(c.dt)
    order = np.polyfit(np.log(dts), np.log(diffs), 1)[0]
    assert order >= 0.5


def test_determinism_and_worker_independence():
    spec = sigmas(0.3, 6)
    cfg = SolverConfig(n_modes=6, dt=0.01, t_end=0.2)
    a = run_trajectory(x0(6, 0.5), P, spec, cfg, seed=11)
    b = run_trajectory(x0(6, 0.5), P, spec, cfg, seed=11)
    assert np.array_equal(a.states, b.states)
    e1 = run_ensemble(x0(6, 0.5), P, spec, cfg, seed=11, n_paths=10, workers=1, block_size=3)
    e2 = run_ensemble(x0(6, 0.5), P, spec, cfg, seed=11, n_paths=10, workers=2, block_size=3)
    assert np.array_equal(e1.states, e2.states)
    for k in e1.series:
        assert np.array_equal(e1.series[k], e2.series[k])
    # path 0 of the ensemble is the single trajectory with traj_index 0
    assert np.array_equal(e1.states[0], a.states)


def test_divergence_error_carries_time_and_partial():
    cfg = SolverConfig(n_modes=4, dt=0.01, t_end=1.0, guard=2.0)
    p = ModelParams(1.0, 1.0, 1.0, 0.5, 1.0)
    with pytest.raises(DivergenceError) as ei:
        run_trajectory(x0(4, 5.0), p, None, cfg)
    assert ei.value.t >= 0
    with pytest.raises(DivergenceError) as ej:
        run_ensemble(np.array([[0.1, 0, 0, 0], [5.0, 0, 0, 0]]), p, None, cfg, seed=0, workers=1)
    assert ej.value.path_index == 1


def test_galerkin_truncation_invariant_linear():
    spec = NoiseSpec((0.3, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0), epsilon=0.99)
    cfg = SolverConfig(n_modes=2, dt=0.01, t_end=0.5, scheme="mild_exponential")
    rep = galerkin_refinement(x0(2, 0.5, 0.1), HEAT, spec, cfg, [1, 2], [2, 4, 8])
    assert max(rep.cauchy_sup) <= 1e-12


def test_galerkin_refinement_monotone():
    spec = NoiseSpec(tuple(0.3 * 2.0**-k for k in range(1, 17)), epsilon=0.99)
    cfg = SolverConfig(n_modes=4, dt=2e-3, t_end=0.5)
    rep = galerkin_refinement(x0(4, 0.8, 0.3), P, spec, cfg, [0, 1], [4, 8, 16])
    assert rep.monotone


def test_galerkin_single_mode_linear_mean():
    # E[|u|^2 + 2 nu int |u'|^2] = |x|^2 + sigma^2 t in the heat limit
    sig, x, T = 0.8, 0.5, 0.5
    spec = NoiseSpec((sig,), epsilon=0.99)
    cfg = SolverConfig(n_modes=1, dt=5e-3, t_end=T, scheme="mild_exponential")
    vals = np.array([galerkin_refinement(x0(1, x), HEAT, spec, cfg, [s], [1]).functional[0] for s in range(400)])
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - (x * x + sig * sig * T)) <= 3 * se


def test_trajectory_csv(tmp_path):
    tr = run_trajectory(x0(4, 0.5), P, sigmas(0.2, 4), SolverConfig(n_modes=4, dt=0.1, t_end=0.3))
    path = tmp_path / "t.csv"
    write_trajectory_csv(tr, path, snapshots=True)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "l2", "h1_semi", "l2p", "residual", "c1", "c2", "c3", "c4"]
    assert len(rows) == 5
