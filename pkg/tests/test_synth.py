import math
from dataclasses import replace

import numpy as np
import pytest

from builders import notch_trace
from resloss import ConfigurationError, NotchParams, ParameterDomainError, eval_full_notch, fit_trace
from resloss import LossFitOptions, PILossSeries, fit_loss_surface, single_photon_inverse_q, total_inverse_q
from resloss.loss import LossSurface
from resloss.synth import (
    RNG_ALGORITHM,
    SynthScenario,
    complex_noise,
    default_scenario,
    generate_loss_surface,
    generate_trace,
    rng_for,
    solve_operating_point,
)
from resloss.power import circulating_power, dbm_to_watt, photon_number_linear

TRUTH = NotchParams.from_q_int(7.5e9, 1e6, 5e5, 0.1, a=0.8, alpha0=0.3, tau=2e-9)


def test_zero_noise_is_exact_model():
    tr = notch_trace(TRUTH)
    np.testing.assert_array_equal(tr.s21, eval_full_notch(tr.freqs, TRUTH))


def test_same_seed_identical_traces():
    a = notch_trace(TRUTH, snr_db=40, seed=7, key=(1, 2, 3))
    b = notch_trace(TRUTH, snr_db=40, seed=7, key=(1, 2, 3))
    np.testing.assert_array_equal(a.s21, b.s21)
    c = notch_trace(TRUTH, snr_db=40, seed=8, key=(1, 2, 3))
    d = notch_trace(TRUTH, snr_db=40, seed=7, key=(1, 2, 4))
    assert not np.array_equal(a.s21, c.s21)
    assert not np.array_equal(a.s21, d.s21)


def test_snr_sets_noise_rms():
    n = 20001
    tr = notch_trace(TRUTH, snr_db=40, seed=3, n_points=n)
    noise = tr.s21 - eval_full_notch(tr.freqs, TRUTH)
    rms = math.sqrt(np.mean(np.abs(noise) ** 2))
    assert rms == pytest.approx(0.8 * 1e-2, rel=0.05)
    # circular: equal variance on both quadratures, no correlation
    assert np.var(noise.real) == pytest.approx(np.var(noise.imag), rel=0.05)
    assert abs(np.mean(noise.real * noise.imag)) < 0.05 * np.var(noise.real)


def test_noise_mean_zero_averaging():
    exact = eval_full_notch(notch_trace(TRUTH).freqs, TRUTH)
    resid = {}
    for N in (1, 16, 256):
        avg = np.mean([notch_trace(TRUTH, snr_db=30, seed=s).s21 for s in range(N)], axis=0)
        resid[N] = math.sqrt(np.mean(np.abs(avg - exact) ** 2))
    sigma = 0.8 * 10 ** (-30 / 20)
    for N, r in resid.items():
        assert r * math.sqrt(N) == pytest.approx(sigma, rel=0.1), N


def test_rng_stream_documented_and_pinned():
    assert "PCG64" in RNG_ALGORITHM
    ref = np.random.Generator(np.random.PCG64(np.random.SeedSequence(5, spawn_key=(0, 1))))
    np.testing.assert_array_equal(rng_for(5, 0, 1).standard_normal(8), ref.standard_normal(8))
    assert np.all(complex_noise(rng_for(0), 10, 0.0) == 0)


def test_scenario_validation():
    with pytest.raises(ParameterDomainError):
        SynthScenario(noise_amplitude=-1.0)
    with pytest.raises(ParameterDomainError):
        SynthScenario(temperatures=())
    with pytest.raises(ConfigurationError):
        generate_trace(SynthScenario())


# --- presets ----------------------------------------------------------------

@pytest.mark.parametrize("name", ["wafer-like-A", "wafer-like-B", "wafer-like-C", "wafer-like-D"])
def test_preset_frequencies_and_coupling(name):
    sc = default_scenario(name)
    assert [r.f_r for r in sc.resonators] == [7e9, 7.5e9, 8e9, 8.5e9]
    assert all(4e4 <= r.q_c <= 4e6 for r in sc.resonators)


def test_preset_b_single_photon_q():
    sc = default_scenario("wafer-like-B")
    for r in sc.resonators:
        q1 = 1.0 / single_photon_inverse_q(r.tls, r.pi, 0.01)
        assert q1 == pytest.approx(1.1e6, rel=0.02)


def test_unknown_preset():
    with pytest.raises(ConfigurationError, match="unknown preset"):
        default_scenario("wafer-like-Z")


# --- loss surfaces ----------------------------------------------------------

def test_operating_point_self_consistent():
    r = default_scenario("wafer-like-A").resonators[0]
    for p_dbm in (-140.0, -100.0, -60.0):
        n, qi = solve_operating_point(r, 0.05, float(dbm_to_watt(p_dbm)))
        again = photon_number_linear(circulating_power(dbm_to_watt(p_dbm), qi, r.q_c), r.f_r)
        assert n == pytest.approx(float(again), rel=1e-10)


def test_surface_truth_matches_equation():
    sc = default_scenario("wafer-like-C")
    surf, traces, pts = generate_loss_surface(sc, 1, with_traces=False)
    r = sc.resonators[1]
    np.testing.assert_allclose(surf.inverse_q, total_inverse_q(surf.temperature, surf.n_ph, r.tls, r.pi),
                               rtol=1e-12)
    assert traces == [] and len(pts) == 60


def test_surface_generation_order_independent():
    sc = default_scenario("wafer-like-A")
    _, tr_all, pts = generate_loss_surface(sc, 2, seed=4)
    # regenerate a single node directly from its truth and spawn key
    k = 37
    ti, pi_ = divmod(k, len(sc.powers_dbm))
    one = generate_trace(replace(sc, truth=pts[k].params), seed=4, key=(2, ti, pi_))
    np.testing.assert_array_equal(one.s21, tr_all[k].s21)


def test_noiseless_end_to_end_round_trip():
    sc = default_scenario("wafer-like-A")
    r = sc.resonators[0]
    sc = SynthScenario(resonators=[r], snr_db=None)
    _, traces, pts = generate_loss_surface(sc)
    T, n, y, se = [], [], [], []
    for tr, pt in zip(traces, pts):
        fit = fit_trace(tr)
        p_chip = dbm_to_watt(pt.p_on_chip_dbm)
        T.append(pt.temperature_k)
        n.append(float(photon_number_linear(circulating_power(p_chip, fit.q_int, fit.q_c), fit.f_r)))
        y.append(1.0 / fit.q_int)
        se.append(0.0)
    res = fit_loss_surface(LossSurface(np.array(T), np.array(n), np.array(y), np.array(se), r.name, r.f_r))
    assert res.params.delta_tls == pytest.approx(r.tls.delta_tls, rel=1e-3)


def test_zero_pi_surface_gives_zero_pi():
    r = default_scenario("wafer-like-A").resonators[0]
    r = replace(r, pi=PILossSeries.constant(r.pi.temperatures, 0.0))
    surf, _, _ = generate_loss_surface(SynthScenario(resonators=[r]), with_traces=False)
    res = fit_loss_surface(surf)
    assert np.all(res.pi.delta_pi <= 1e-9)


def test_single_temperature_surface_under_determined():
    r = default_scenario("wafer-like-A").resonators[0]
    surf, _, _ = generate_loss_surface(SynthScenario(resonators=[r], temperatures=(0.01,)), with_traces=False)
    with pytest.raises(ConfigurationError, match="under-determined"):
        fit_loss_surface(surf, LossFitOptions())
