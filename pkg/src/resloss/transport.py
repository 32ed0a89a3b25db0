"""Superconducting film parameters from DC transport data.

Critical temperature from the resistive transition, upper critical field
slope near T_c, the dirty-limit extrapolation ``B_c2(0) = 0.69 T_c |dB_c2/dT|``,
the Ginzburg-Landau coherence length and the mean free path from the
residual resistivity via a fixed ``rho * l`` product.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParameterDomainError

__all__ = [
    "FLUX_QUANTUM",
    "RHO_L_PRODUCT",
    "WHH_FACTOR",
    "TransportCurve",
    "FilmParameters",
    "extract_tc",
    "fit_bc2_slope",
    "bc2_zero",
    "gl_coherence_length",
    "bc2_from_coherence_length",
    "mean_free_path",
    "film_parameters",
]

FLUX_QUANTUM = 2.067833848e-15  # Wb
RHO_L_PRODUCT = 3.72e-6  # uOhm cm^2, rho * l for the film material
WHH_FACTOR = 0.69


@dataclass(frozen=True)
class TransportCurve:
    """Upper critical field versus temperature plus residual resistivity of one film."""

    bc2_vs_t: np.ndarray  # shape (n, 2): temperature K, B_c2 T
    rho_10k: float  # uOhm cm
    film: str = ""
    r_vs_t: np.ndarray | None = field(default=None, compare=False)  # optional (K, Ohm)

    def __post_init__(self):
        arr = np.asarray(self.bc2_vs_t, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ParameterDomainError("bc2_vs_t must be a sequence of (T, B_c2) pairs")
        if np.any(~np.isfinite(arr)) or np.any(arr[:, 0] < 0) or np.any(arr[:, 1] < 0):
            raise ParameterDomainError("temperatures and fields must be finite and non-negative")
        if not self.rho_10k > 0:
            raise ParameterDomainError("residual resistivity must be positive")
        object.__setattr__(self, "bc2_vs_t", arr[np.argsort(arr[:, 0], kind="stable")])

    @property
    def temperatures(self) -> np.ndarray:
        return self.bc2_vs_t[:, 0]

    @property
    def fields(self) -> np.ndarray:
        return self.bc2_vs_t[:, 1]


def extract_tc(r_vs_t, fraction: float = 0.5, plateau_fraction: float = 0.1) -> float:
    """Critical temperature at ``fraction`` of the normal-state resistance.

    The normal plateau is the median resistance of the warmest
    ``plateau_fraction`` of points (at least one). The crossing is found by
    linear interpolation, scanning down from the warm side so a noisy
    superconducting baseline cannot produce spurious crossings.

    Raises
    ------
    DataError
        If the curve does not cross the threshold (no transition).
    """
    arr = np.asarray(r_vs_t, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
        raise DataError("need at least two (T, R) points")
    if not 0 < fraction < 1:
        raise ParameterDomainError("fraction must lie in (0, 1)")
    arr = arr[np.argsort(arr[:, 0], kind="stable")]
    t, r = arr[:, 0], arr[:, 1]
    n_plat = max(1, int(round(plateau_fraction * t.size)))
    r_n = float(np.median(r[-n_plat:]))
    if not r_n > 0:
        raise DataError("normal-state resistance is not positive")
    thr = fraction * r_n
    above = r >= thr
    if above.all() or not above.any():
        raise DataError("no superconducting transition found")
    for i in range(t.size - 1, 0, -1):
        if above[i] and not above[i - 1]:
            t0, t1, r0, r1 = t[i - 1], t[i], r[i - 1], r[i]
            if r1 == r0:
                return float(t1)
            return float(t0 + (thr - r0) * (t1 - t0) / (r1 - r0))
    raise DataError("no superconducting transition found")


def fit_bc2_slope(curve: TransportCurve, t_c: float | None = None, window: float = 0.9,
                  return_stderr: bool = False):
    """Linear-regression slope dB_c2/dT (T/K) over points with T >= window * T_c.

    ``t_c`` defaults to :func:`extract_tc` on ``curve.r_vs_t``. With
    ``return_stderr`` a ``(slope, stderr)`` pair is returned.

    Raises
    ------
    DataError
        If fewer than 3 points fall inside the window, or no T_c is available.
    """
    if t_c is None:
        if curve.r_vs_t is None:
            raise DataError(f"film {curve.film!r}: no T_c given and no R(T) curve")
        t_c = extract_tc(curve.r_vs_t)
    if not t_c > 0:
        raise ParameterDomainError("T_c must be positive")
    t, b = curve.temperatures, curve.fields
    sel = t >= window * t_c
    if np.count_nonzero(sel) < 3:
        raise DataError(f"need >= 3 points with T >= {window:g} T_c, got {np.count_nonzero(sel)}")
    ts, bs = t[sel], b[sel]
    if np.ptp(ts) == 0:
        raise DataError("all near-T_c points share one temperature")
    A = np.column_stack([ts, np.ones_like(ts)])
    coef = np.linalg.lstsq(A, bs, rcond=None)[0]
    if not return_stderr:
        return float(coef[0])
    resid = bs - A @ coef
    s2 = float(resid @ resid) / (ts.size - 2)
    cov = s2 * np.linalg.inv(A.T @ A)
    return float(coef[0]), float(math.sqrt(max(cov[0, 0], 0.0)))


def bc2_zero(t_c: float, slope: float) -> float:
    """Zero-temperature upper critical field ``0.69 T_c |slope|`` (T)."""
    if not t_c > 0:
        raise ParameterDomainError("T_c must be positive")
    return WHH_FACTOR * t_c * abs(slope)


def gl_coherence_length(b_c2):
    """``sqrt(Phi_0 / (2 pi B_c2))`` in meters."""
    b = np.asarray(b_c2, dtype=float)
    if np.any(~(b > 0)):
        raise ParameterDomainError("B_c2 must be positive")
    out = np.sqrt(FLUX_QUANTUM / (2.0 * math.pi * b))
    return float(out) if out.ndim == 0 else out


def bc2_from_coherence_length(xi):
    """Inverse of :func:`gl_coherence_length`."""
    xi = np.asarray(xi, dtype=float)
    if np.any(~(xi > 0)):
        raise ParameterDomainError("coherence length must be positive")
    out = FLUX_QUANTUM / (2.0 * math.pi * xi * xi)
    return float(out) if out.ndim == 0 else out


def mean_free_path(rho_10k):
    """Mean free path (m) from residual resistivity in uOhm cm: ``l = 3.72e-6 / rho`` cm."""
    rho = np.asarray(rho_10k, dtype=float)
    if np.any(~(rho > 0)):
        raise ParameterDomainError("resistivity must be positive")
    out = RHO_L_PRODUCT / rho * 1e-2
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class FilmParameters:
    film: str
    t_c_k: float
    slope_t_per_k: float
    slope_stderr_t_per_k: float
    bc2_zero_t: float
    xi_gl_m: float
    rho_10k_uohm_cm: float
    mean_free_path_m: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def film_parameters(curve: TransportCurve, t_c: float | None = None, window: float = 0.9,
                    fraction: float = 0.5) -> FilmParameters:
    """All derived film quantities. T_c comes from ``curve.r_vs_t`` unless given."""
    if t_c is None:
        if curve.r_vs_t is None:
            raise DataError(f"film {curve.film!r}: no T_c and no R(T) curve")
        t_c = extract_tc(curve.r_vs_t, fraction)
    slope, slope_se = fit_bc2_slope(curve, t_c, window, return_stderr=True)
    b0 = bc2_zero(t_c, slope)
    xi = gl_coherence_length(b0) if b0 > 0 else float("inf")
    return FilmParameters(curve.film, float(t_c), slope, slope_se, b0, xi, float(curve.rho_10k),
                          mean_free_path(curve.rho_10k))
