"""Power calibration (HEMT noise referenced) and photon-number conversion.

The input-line attenuation is inferred from the SNR measured with 0 dBm at the
source, assuming the detected noise floor is the HEMT's thermal noise
``k_B T_HEMT df`` into 50 ohm.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import h, k as k_B

from .errors import DataQualityError, ParameterDomainError

__all__ = [
    "Z0",
    "CalibrationModel",
    "AttenuationCurve",
    "hemt_noise_power",
    "hemt_signal_power_dbm",
    "calibrate_attenuation",
    "snr_for_attenuation",
    "circulating_power",
    "photon_number_linear",
    "photon_flux",
    "dbm_to_watt",
    "watt_to_dbm",
]

Z0 = 50.0


def dbm_to_watt(p_dbm):
    return 1e-3 * np.power(10.0, np.asarray(p_dbm, dtype=float) / 10.0)


def watt_to_dbm(p_w):
    return 10.0 * np.log10(np.asarray(p_w, dtype=float) / 1e-3)


def hemt_noise_power(t_hemt, bandwidth):
    """Thermal noise power ``k_B T df`` in watts."""
    if not (t_hemt >= 0 and bandwidth > 0):
        raise ParameterDomainError("noise temperature must be >= 0 and bandwidth > 0")
    return k_B * t_hemt * bandwidth


@dataclass(frozen=True)
class AttenuationCurve:
    """Piecewise-linear attenuation (dB, negative = loss) versus frequency (Hz)."""

    freqs: np.ndarray
    att_db: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.freqs, dtype=float)
        a = np.asarray(self.att_db, dtype=float)
        if f.ndim != 1 or f.shape != a.shape or f.size == 0:
            raise ParameterDomainError("attenuation curve needs matching 1-D arrays")
        if f.size > 1 and np.any(np.diff(f) <= 0):
            raise ParameterDomainError("attenuation curve frequencies must increase strictly")
        object.__setattr__(self, "freqs", f)
        object.__setattr__(self, "att_db", a)

    def __call__(self, f):
        # clamped at the ends
        return np.interp(f, self.freqs, self.att_db)

    @classmethod
    def constant(cls, att_db: float) -> AttenuationCurve:
        return cls(np.array([0.0]), np.array([float(att_db)]))


@dataclass(frozen=True)
class CalibrationModel:
    """Calibration constants. ``post_sample_offset`` adds to the HEMT-referenced power."""

    hemt_noise_temperature: float = 2.0
    if_bandwidth: float = 5e3
    post_sample_offset: float = 2.0
    attenuation_curve: AttenuationCurve | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.hemt_noise_temperature > 0:
            raise ParameterDomainError("HEMT noise temperature must be positive")
        if not self.if_bandwidth > 0:
            raise ParameterDomainError("IF bandwidth must be positive")

    def on_chip_power_dbm(self, p_applied_dbm, f):
        if self.attenuation_curve is None:
            raise ParameterDomainError("calibration has no attenuation curve yet")
        return np.asarray(p_applied_dbm, dtype=float) + self.attenuation_curve(f)


def hemt_signal_power_dbm(snr, cal: CalibrationModel):
    """Signal power at the HEMT for 0 dBm applied, in dBm."""
    snr = np.asarray(snr, dtype=float)
    if np.any(~(snr > 1)):
        raise DataQualityError("SNR values must exceed 1")
    p_noise = hemt_noise_power(cal.hemt_noise_temperature, cal.if_bandwidth)
    v_rms = np.sqrt(p_noise * Z0)
    return 10.0 * np.log10((v_rms * snr) ** 2 / (Z0 / 1000.0))


def calibrate_attenuation(freqs, snr, cal: CalibrationModel) -> AttenuationCurve:
    """Attenuation ``P_on_chip - P_applied`` per frequency from an SNR spectrum.

    ``snr`` is the linear amplitude SNR (mean over standard deviation of
    |S21|) measured with 0 dBm applied.
    """
    freqs = np.asarray(freqs, dtype=float)
    order = np.argsort(freqs, kind="stable")
    att = cal.post_sample_offset + hemt_signal_power_dbm(np.asarray(snr, dtype=float)[order], cal)
    return AttenuationCurve(freqs[order], att)


def snr_for_attenuation(att_db, cal: CalibrationModel):
    """Inverse of :func:`calibrate_attenuation`: SNR spectrum producing ``att_db``."""
    p_noise = hemt_noise_power(cal.hemt_noise_temperature, cal.if_bandwidth)
    p_noise_dbm = float(watt_to_dbm(p_noise))
    return np.power(10.0, (np.asarray(att_db, dtype=float) - cal.post_sample_offset - p_noise_dbm) / 20.0)


def circulating_power(p_on_chip, q_int, q_c):
    """``P_on_chip Q_int^2 Q_c / (pi (Q_int + Q_c)^2)`` in the units of ``p_on_chip``."""
    q_int = np.asarray(q_int, dtype=float)
    q_c = np.asarray(q_c, dtype=float)
    if np.any(q_int < 0) or np.any(q_c <= 0):
        raise ParameterDomainError("quality factors must be positive")
    return np.asarray(p_on_chip, dtype=float) * q_int ** 2 * q_c / (math.pi * (q_int + q_c) ** 2)


def photon_number_linear(p_in, f_r):
    """Photon number ``P_in / (h f_r^2)`` from circulating power (W)."""
    p_in = np.asarray(p_in, dtype=float)
    if np.any(p_in < 0):
        raise ParameterDomainError("circulating power must be non-negative")
    return p_in / (h * np.asarray(f_r, dtype=float) ** 2)


def photon_flux(p_on_chip_w, f_r):
    """Photon flux ``P / (h f_r)`` (photons/s) of the drive reaching the resonator."""
    return np.asarray(p_on_chip_w, dtype=float) / (h * np.asarray(f_r, dtype=float))
