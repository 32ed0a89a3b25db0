import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import H, hemt_attenuation_by_hand
from resloss import (
    AttenuationCurve,
    CalibrationModel,
    calibrate_attenuation,
    circulating_power,
    photon_number_linear,
)
from resloss.errors import DataQualityError, ParameterDomainError
from resloss.power import dbm_to_watt, hemt_noise_power, snr_for_attenuation, watt_to_dbm


def test_hemt_noise_power():
    assert hemt_noise_power(2.0, 5e3) == pytest.approx(1.380649e-19, rel=1e-12)
    assert hemt_noise_power(1e-300, 5e3) < 1e-300
    assert hemt_noise_power(2.0, 1e4) == 2 * hemt_noise_power(2.0, 5e3)


def test_snr_doubling_adds_6db():
    cal = CalibrationModel()
    c = calibrate_attenuation([7e9, 8e9], [1e5, 2e5], cal)
    a = np.asarray(c.att_db)
    assert a[1] - a[0] == pytest.approx(20 * math.log10(2), abs=1e-12)


def test_calibration_hand_chain():
    cal = CalibrationModel(hemt_noise_temperature=2.0, if_bandwidth=5e3, post_sample_offset=2.0)
    got = calibrate_attenuation([7.5e9], [1e6], cal).att_db[0]
    # -158.6 dBm noise + 120 dB + 2 dB
    assert got == pytest.approx(hemt_attenuation_by_hand(2.0, 5e3, 1e6, 2.0), abs=1e-9)
    assert got == pytest.approx(-36.599, abs=1e-3)


def test_calibration_rejects_snr_below_one():
    with pytest.raises(DataQualityError):
        calibrate_attenuation([7e9], [0.5], CalibrationModel())


@settings(max_examples=50, deadline=None)
@given(att=st.floats(-120, -10))
def test_snr_for_attenuation_inverts(att):
    cal = CalibrationModel()
    snr = snr_for_attenuation(att, cal)
    assert calibrate_attenuation([7e9], [snr], cal).att_db[0] == pytest.approx(att, abs=1e-9)


def test_attenuation_curve_interpolates_and_clamps():
    c = AttenuationCurve(np.array([1e9, 2e9]), np.array([-60.0, -70.0]))
    assert c(1.5e9) == pytest.approx(-65.0)
    assert c(0.5e9) == pytest.approx(-60.0)
    assert c(5e9) == pytest.approx(-70.0)
    cal = CalibrationModel(attenuation_curve=c)
    assert cal.on_chip_power_dbm(-20.0, 1.5e9) == pytest.approx(-85.0)
    with pytest.raises(ParameterDomainError):
        CalibrationModel().on_chip_power_dbm(0.0, 1e9)


def test_circulating_power_examples():
    assert circulating_power(1e-12, 1e6, 5e5) == pytest.approx(1e-12 * 1e12 * 5e5 / (math.pi * 2.25e12), rel=1e-12)
    assert circulating_power(1e-12, 1e6, 5e5) == pytest.approx(7.074e-8, rel=1e-3)
    assert circulating_power(2e-12, 3e5, 3e5) == pytest.approx(2e-12 * 3e5 / (4 * math.pi), rel=1e-12)
    assert circulating_power(1e-12, 0.0, 5e5) == 0.0


def test_photon_number_linear():
    f_r = 7.5e9
    assert photon_number_linear(H * f_r ** 2, f_r) == pytest.approx(1.0, rel=1e-12)
    assert photon_number_linear(0.0, f_r) == 0.0
    assert photon_number_linear(3.727e-14, 7.5e9) == pytest.approx(1.0, abs=1e-3)


def test_dbm_conversions():
    assert dbm_to_watt(0.0) == pytest.approx(1e-3, rel=1e-15)
    assert dbm_to_watt(-30.0) == pytest.approx(1e-6, rel=1e-14)
    assert dbm_to_watt(10.0) == pytest.approx(1e-2, rel=1e-14)
    assert watt_to_dbm(1e-6) == pytest.approx(-30.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(p=st.floats(-150, 30))
def test_dbm_round_trip(p):
    assert watt_to_dbm(dbm_to_watt(p)) == pytest.approx(p, abs=1e-10)
