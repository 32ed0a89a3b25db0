import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from builders import NOTCH_SHARED, duffing_trace, duffing_truth, notch_trace, notch_truth, rel_err
from resloss import (
    ComplexTrace,
    ConfigurationError,
    FitError,
    FitOptions,
    NoResonanceError,
    NotchParams,
    classify_coupling,
    estimate_initial,
    fit_background,
    fit_duffing,
    fit_full,
    fit_trace,
)
from resloss.fitting import estimate_noise_rms
from resloss.synth import complex_noise, rng_for


def test_round_trip_noiseless():
    rng = np.random.default_rng(11)
    for _ in range(10):
        truth = notch_truth(rng)
        fit = fit_trace(notch_trace(truth))
        for k in NOTCH_SHARED:
            assert rel_err(getattr(fit.params, k), getattr(truth, k)) < 1e-6, k
        assert abs(fit.params.phi - truth.phi) < 1e-6
        assert abs(math.remainder(fit.params.alpha0 - truth.alpha0, 2 * math.pi)) < 1e-6
        assert rel_err(fit.q_int, truth.q_int) < 1e-6


def test_estimate_initial_within_tenth_linewidth():
    rng = np.random.default_rng(5)
    for _ in range(20):
        truth = notch_truth(rng)
        seed = estimate_initial(notch_trace(truth))
        assert abs(seed.f_r - truth.f_r) < 0.1 * truth.f_r / truth.Q_l


def test_flat_trace_has_no_resonance():
    f = np.linspace(7e9, 7.01e9, 501)
    z = np.ones(f.size) + complex_noise(rng_for(0), f.size, 1e-3)
    with pytest.raises(NoResonanceError):
        estimate_initial(ComplexTrace(f, z))


def test_zero_delay_phase_slope():
    truth = NotchParams.from_q_int(7e9, 3e5, 2e5, 0.2, a=1.0, alpha0=0.4, tau=0.0)
    tr = notch_trace(truth)
    span = tr.freqs[-1] - tr.freqs[0]
    assert abs(estimate_initial(tr).tau) < 1.0 / (10.0 * span)


def test_background_identity():
    truth = NotchParams.from_q_int(7e9, 3e5, 2e5, 0.0)
    bg = fit_background(notch_trace(truth, span=40.0, n_points=2001))
    assert abs(bg.a - 1.0) < 1e-6
    assert abs(bg.alpha0) < 1e-6
    assert abs(bg.tau) * 2 * math.pi * 7e9 < 1e-6


@pytest.mark.parametrize("span,n_points,phi", [(150.0, 3001, 0.0), (10.0, 801, 0.0), (10.0, 801, 0.4)])
def test_background_recovered(span, n_points, phi):
    truth = NotchParams.from_q_int(7e9, 5e5, 2e5, phi, a=0.8, alpha0=0.3, tau=2e-9)
    bg = fit_background(notch_trace(truth, span=span, n_points=n_points))
    assert rel_err(bg.a, 0.8) < 0.01
    assert rel_err(bg.alpha0, 0.3) < 0.01
    assert rel_err(bg.tau, 2e-9) < 0.01


def test_background_tail_bias_without_refinement():
    # a plain off-resonance fit of the seed's tail leaves the delay biased,
    # which alpha0 (referenced at f = 0) amplifies by 2 pi f_r
    truth = NotchParams.from_q_int(7e9, 5e5, 2e5, 0.4, a=0.8, alpha0=0.3, tau=2e-9)
    tr = notch_trace(truth)
    crude = fit_background(tr, refine=0)
    fine = fit_background(tr)
    assert abs(fine.tau - 2e-9) < 1e-3 * abs(crude.tau - 2e-9)


def test_background_window_covering_span():
    truth = NotchParams.from_q_int(7e9, 3e5, 2e5)
    with pytest.raises(ConfigurationError):
        fit_background(notch_trace(truth), exclusion_halfwidth=50.0)


def test_excluded_regime_when_heavily_overcoupled():
    truth = NotchParams.from_q_int(7e9, 8e5, 4e4, 0.1)
    fit = fit_trace(notch_trace(truth))
    assert fit.coupling_regime == "excluded"
    assert classify_coupling(2e6, 1e5) == "excluded"
    assert classify_coupling(9.9e5, 1e5) == "overcoupled"
    assert classify_coupling(1e5, 1e5) == "critical"
    assert classify_coupling(1e3, 1e5) == "undercoupled"


def test_joint_fit_recovers_background_on_default_span():
    truth = NotchParams.from_q_int(7e9, 5e5, 3e5, -0.2, a=0.8, alpha0=0.3, tau=2e-9)
    fit = fit_trace(notch_trace(truth))
    assert rel_err(fit.params.tau, 2e-9) < 1e-6


@settings(max_examples=15, deadline=None)
@given(factor=st.floats(0.05, 20.0), seed=st.integers(0, 1000))
def test_scale_invariance(factor, seed):
    # resolvable dips only: depth Q_l/Q_c well above the 50 dB noise floor
    truth = notch_truth(np.random.default_rng(seed), q_int_range=(1e5, 1e7), q_c_range=(4e4, 4e5))
    tr = notch_trace(truth, snr_db=50, seed=seed)
    base = fit_trace(tr)
    scaled = fit_trace(tr.scaled(factor))
    assert rel_err(scaled.params.a, base.params.a * factor) < 1e-6
    for k in ("f_r", "Q_l", "Q_c_mag"):
        assert rel_err(getattr(scaled.params, k), getattr(base.params, k)) < 1e-6
    assert rel_err(scaled.stderr["q_int"], base.stderr["q_int"]) < 1e-4


def test_fit_is_deterministic():
    truth = notch_truth(np.random.default_rng(3))
    tr = notch_trace(truth, snr_db=40, seed=9)
    a, b = fit_trace(tr), fit_trace(tr)
    assert a.params == b.params
    assert a.stderr == b.stderr


def test_q_int_stderr_grows_with_overcoupling():
    means = []
    for ratio in (1.0, 3.0, 10.0, 30.0):
        q_c = 1e5
        vals = []
        for s in range(8):
            truth = NotchParams.from_q_int(7e9, ratio * q_c, q_c, 0.0)
            fit = fit_trace(notch_trace(truth, snr_db=40, seed=s))
            vals.append(fit.stderr["q_int"] / fit.q_int)
        means.append(np.mean(vals))
    assert np.all(np.diff(means) > 0)


def test_stderr_matches_scatter():
    # curvature errors agree with the seed-to-seed spread within sampling error
    truth = NotchParams.from_q_int(7.5e9, 1e6, 5e5, 0.0)
    fits = [fit_trace(notch_trace(truth, snr_db=40, seed=s)) for s in range(40)]
    spread = np.std([f.q_int for f in fits], ddof=1)
    reported = np.mean([f.stderr["q_int"] for f in fits])
    assert 0.7 < spread / reported < 1.4


def test_noise_rms_estimator():
    z = 1.0 + complex_noise(rng_for(4), 20000, 0.01)
    assert estimate_noise_rms(z) == pytest.approx(0.01, rel=0.03)


def test_fit_error_carries_best_point():
    truth = NotchParams.from_q_int(7e9, 3e5, 2e5, 0.2, a=0.9, alpha0=0.2, tau=1e-9)
    with pytest.raises(FitError) as info:
        fit_full(notch_trace(truth, snr_db=30), options=FitOptions(max_iterations=2))
    assert set(info.value.best) >= {"f_r", "Q_l"}


# --- Duffing ----------------------------------------------------------------

@pytest.mark.parametrize("phi", [0.0, 0.3, -0.25])
def test_duffing_beta_zero_agrees_with_linear(phi):
    truth = duffing_truth(0.0, phi=phi)
    tr = duffing_trace(truth, snr_db=45, seed=2)
    lin = fit_trace(tr)
    duf = fit_duffing(tr, 1e13)
    assert rel_err(duf.f_r, lin.f_r) < 0.01
    assert rel_err(duf.params.Q_l, lin.params.Q_l) < 0.01
    assert rel_err(duf.q_c, lin.q_c) < 0.01
    assert rel_err(duf.q_int, lin.q_int) < 0.01
    assert abs(duf.params.phi - lin.params.phi) < 0.01
    assert rel_err(duf.background.a, lin.params.a) < 0.01
    assert duf.reliable


@pytest.mark.parametrize("shift", [2.0, 5.0, -6.0])
def test_duffing_jump_recovers_kappa(shift):
    truth = duffing_truth(shift)
    tr = duffing_trace(truth)
    mag = np.abs(tr.s21)
    assert np.max(np.abs(np.diff(mag))) > 0.05  # a bistable jump is present
    fit = fit_duffing(tr, 1e13)
    assert rel_err(fit.params.kappa, truth.kappa) < 0.05
    assert rel_err(fit.params.kappa_c, truth.kappa_c) < 0.05
    assert fit.reliable


@pytest.mark.parametrize("gamma_frac", [0.3, 1.0])
def test_duffing_deformed_trace_flagged(gamma_frac):
    truth = duffing_truth(4.0)
    n_peak = 2.0 * truth.kappa_c * 1e13 / truth.kappa ** 2
    tr = duffing_trace(truth, damping=gamma_frac * truth.kappa / n_peak)
    fit = fit_duffing(tr, 1e13)
    assert not fit.reliable


def test_duffing_kappa_int_identity():
    truth = duffing_truth(3.0, phi=0.2)
    fit = fit_duffing(duffing_trace(truth), 1e13)
    p = fit.params
    assert fit.kappa_int == pytest.approx(p.kappa - p.kappa_c * math.cos(p.phi), rel=1e-12)
    assert rel_err(fit.kappa_int, truth.kappa_int) < 1e-4
