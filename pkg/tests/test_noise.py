import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sgbh.noise import (
    NoiseError,
    NoiseSpec,
    NoiseStream,
    OUCoefficients,
    OUState,
    _cond_var_factor,
    compose_fine,
    ou_rates,
    ou_step,
    ou_variance,
    power_law_noise,
    stationary_variance,
    stream_rng,
    validate_noise,
    wiener_increment,
)


def within_3se(samples, target):
    se = samples.std(ddof=1) / math.sqrt(samples.size)
    return abs(samples.mean() - target) <= 3 * se


def test_power_law_example():
    s = power_law_noise(64, 0.1, 1.0, 0.25)
    assert s.sigma[0] == pytest.approx(1.0)
    assert s.sigma[3] == pytest.approx(4**-0.75, rel=1e-14)
    assert s.sigma[3] == pytest.approx(0.3536, abs=1e-4)


def test_power_law_band_respected():
    s = power_law_noise(200, 0.2, 0.7, 0.3)
    k = np.arange(1, 201)
    assert np.all(s.sigma >= 0.2 / k * (1 - 1e-14))
    assert np.all(s.sigma <= 0.7 * k**-0.8 * (1 + 1e-14))


def test_empty_band_names_k():
    with pytest.raises(NoiseError, match="k=1"):
        power_law_noise(8, 2.0, 1.0, 0.25)


def test_trace_partial_sum():
    s = NoiseSpec(tuple(1.0 / k for k in range(1, 65)))
    assert s.trace == pytest.approx(math.fsum(1.0 / k**2 for k in range(1, 65)), rel=1e-14)
    # the partial sum is 1.62943 (pi^2/6 minus a tail of about 0.0155)
    assert s.trace == pytest.approx(1.62943, abs=1e-5)
    assert s.trace < math.pi**2 / 6


def test_single_mode_trace():
    s = power_law_noise(1, 0.1, 0.4, 0.2)
    assert s.trace == pytest.approx(s.sigma[0] ** 2)


def test_regularity_examples():
    bad = validate_noise(NoiseSpec(tuple(1.0 / k for k in range(1, 65)), epsilon=0.9))
    assert not bad.regularity_passed
    assert bad.regularity_slope == pytest.approx(0.1, abs=1e-9)
    good = validate_noise(NoiseSpec(tuple(k**-0.75 for k in range(1, 65)), epsilon=0.9))
    assert good.regularity_passed
    assert good.regularity_slope == pytest.approx(-0.15, abs=1e-9)


@given(st.floats(0.01, 3.0), st.integers(1, 50))
def test_equal_sigmas(sig, n):
    r = validate_noise(NoiseSpec((sig,) * n))
    assert r.q_norm == pytest.approx(sig**2)
    assert r.trace == pytest.approx(n * sig**2)


def test_negative_sigma_rejected():
    with pytest.raises(NoiseError):
        NoiseSpec((1.0, -0.1))


def test_spec_dict_round_trip():
    s = NoiseSpec((0.3, 0.2, 0.1), epsilon=0.8, kappa=0.5)
    assert NoiseSpec.from_dict(s.to_dict()) == s
    p = power_law_noise(10, 0.1, 1.0, 0.25)
    q = NoiseSpec.from_dict(p.to_dict())
    assert q.sigmas == p.sigmas
    assert p.resized(20).sigmas[:10] == p.sigmas


def test_cond_var_factor_against_high_precision():
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 50
    for x in [1e-6, 1e-3, 0.0199, 0.02, 0.0201, 0.5, 5.0, 50.0]:
        X = mpmath.mpf(x)
        want = (1 - mpmath.exp(-2 * X)) / (2 * X) - ((1 - mpmath.exp(-X)) / X) ** 2
        got = _cond_var_factor(np.array([x]))[0]
        assert got == pytest.approx(float(want), rel=1e-9)


def test_noiseless_ou_decay():
    spec = NoiseSpec((0.0, 0.0, 0.0))
    z0 = np.array([1.0, -0.5, 0.25])
    st0 = OUState(z0.copy())
    new, dw = ou_step(st0, 0.1, spec, 1.0, np.random.default_rng(0), kappa=0.0)
    assert np.allclose(new.z_coeffs, np.exp(-ou_rates(3, 1.0) * 0.1) * z0, rtol=1e-15)
    assert not np.any(dw.coeffs)


def test_stationary_variance_mode1():
    spec = NoiseSpec((1.0,))
    assert stationary_variance(spec, 1.0)[0] == pytest.approx(1 / (2 * math.pi**2))
    assert stationary_variance(spec, 1.0)[0] == pytest.approx(0.05066, abs=1e-5)
    # one long chain; dt = 0.5 makes successive samples nearly independent
    rng = np.random.default_rng(2024)
    state = OUState.zero(1)
    out = np.empty(100_000)
    for i in range(out.size):
        state, _ = ou_step(state, 0.5, spec, 1.0, rng, kappa=0.0)
        out[i] = state.z_coeffs[0] ** 2
    assert within_3se(out, 1 / (2 * math.pi**2))


def test_ou_reproducible():
    spec = NoiseSpec((1.0, 0.5))
    a = ou_step(OUState.zero(2), 0.01, spec, 1.0, stream_rng(9, 0))
    b = ou_step(OUState.zero(2), 0.01, spec, 1.0, stream_rng(9, 0))
    assert np.array_equal(a[0].z_coeffs, b[0].z_coeffs) and a[1] == b[1]


def test_wiener_increment_moments():
    spec = NoiseSpec((1.0, 1.0))
    rng = np.random.default_rng(1)
    d = np.array([wiener_increment(spec, 0.01, rng).coeffs for _ in range(100_000)])
    assert within_3se(d[:, 0] ** 2, 0.01)
    assert within_3se(d[:, 0] * d[:, 1], 0.0)
    assert not np.any(wiener_increment(NoiseSpec((0.0, 0.0)), 0.01, rng).coeffs)


def test_substeps_compose_to_one_step_in_distribution():
    # 4 substeps of dt/4 vs one step of dt: same law of (dW, z) from z0
    n, paths, dt, sub = 3, 20_000, 0.02, 4
    mu = ou_rates(n, 1.0)
    sig = np.array([1.0, 0.6, 0.3])
    rng = np.random.default_rng(5)
    z0 = np.array([0.3, -0.2, 0.1])
    coarse = OUCoefficients.build(mu, dt)
    db, inn = coarse.innovations(rng.standard_normal((paths, 2, n)))
    z_one = coarse.decay * z0 + sig * inn
    fine = OUCoefficients.build(mu, dt / sub)
    dbf, innf = fine.innovations(rng.standard_normal((sub, paths, 2, n)))
    db4, inn4 = compose_fine(dbf, innf, fine.decay)
    z_four = coarse.decay * z0 + sig * inn4
    var = ou_variance(NoiseSpec(tuple(sig)), 1.0, dt)
    for z in (z_one, z_four):
        for k in range(n):
            assert within_3se(z[:, k], coarse.decay[k] * z0[k])
            assert within_3se((z[:, k] - coarse.decay[k] * z0[k]) ** 2, var[k])
    for d in (db, db4):
        for k in range(n):
            assert within_3se(d[:, k] ** 2, dt)
    # cross-moment E[dbeta I] = h * gain
    assert within_3se(db[:, 0] * inn[:, 0], dt * coarse.gain[0])
    assert within_3se(db4[:, 0] * inn4[:, 0], dt * coarse.gain[0])
    # mode independence
    assert within_3se(z_four[:, 0] * z_four[:, 1] - z_four[:, 0].mean() * z_four[:, 1].mean(), 0.0)


@settings(max_examples=25)
@given(st.integers(0, 2**32), st.integers(0, 100), st.integers(1, 600), st.integers(1, 600))
def test_stream_chunking_is_invisible(seed, traj, a, b):
    s1 = NoiseStream(seed, traj, 3)
    s2 = NoiseStream(seed, traj, 3)
    assert np.array_equal(np.concatenate([s1.draw(a), s1.draw(b)]), s2.draw(a + b))


def test_streams_differ_by_key():
    a = NoiseStream(1, 0, 2).draw(4)
    assert not np.array_equal(a, NoiseStream(1, 1, 2).draw(4))
    assert not np.array_equal(a, NoiseStream(1, 0, 2, value_index=1).draw(4))
    assert not np.array_equal(a, NoiseStream(2, 0, 2).draw(4))
