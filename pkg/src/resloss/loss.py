"""TLS plus power-independent loss model and its fit over a (T, n_ph) grid.

``1/Q_int(T, n) = delta_TLS tanh(x) / sqrt(1 + n^alpha tanh(x) / (D T^beta)) + delta_PI(T)``
with ``x = h f_r / (2 k_B T)``. ``delta_PI`` is a free nuisance parameter per
temperature.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import h, k as k_B
from scipy.optimize import least_squares

from .errors import ConfigurationError, FitError, ParameterDomainError, TemperatureLookupError

__all__ = [
    "TLSModelParams",
    "PILossSeries",
    "LossSurface",
    "LossFitResult",
    "LossFitOptions",
    "thermal_factor",
    "saturation_photon_number",
    "tls_inverse_q",
    "tls_inverse_q_simple",
    "total_inverse_q",
    "high_power_exclusion",
    "fit_loss_surface",
    "single_photon_inverse_q",
    "fractional_frequency_shift",
]

SURFACE_FORMAT = "resloss.loss_surface"
SURFACE_VERSION = 1


@dataclass(frozen=True)
class TLSModelParams:
    delta_tls: float
    alpha_exp: float
    beta_exp: float
    d_sat: float
    f_r: float

    def __post_init__(self):
        if not (self.delta_tls >= 0 and np.isfinite(self.delta_tls)):
            raise ParameterDomainError("delta_tls must be finite and >= 0")
        if not self.d_sat > 0:
            raise ParameterDomainError("d_sat must be positive")
        if not self.f_r > 0:
            raise ParameterDomainError("f_r must be positive")


@dataclass(frozen=True)
class PILossSeries:
    """Power-independent loss tabulated on a temperature grid."""

    temperatures: np.ndarray
    delta_pi: np.ndarray
    stderr: np.ndarray | None = None

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.temperatures, dtype=float))
        d = np.atleast_1d(np.asarray(self.delta_pi, dtype=float))
        if t.shape != d.shape or t.size == 0:
            raise ParameterDomainError("temperatures and delta_pi must be equal-length, non-empty")
        order = np.argsort(t, kind="stable")
        t, d = t[order], d[order]
        if np.any(np.diff(t) <= 0):
            raise ParameterDomainError("duplicate temperature in PI loss series")
        if np.any(d < 0):
            raise ParameterDomainError("delta_pi must be >= 0")
        se = np.zeros_like(d) if self.stderr is None else np.asarray(self.stderr, dtype=float)[order]
        object.__setattr__(self, "temperatures", t)
        object.__setattr__(self, "delta_pi", d)
        object.__setattr__(self, "stderr", se)

    @classmethod
    def constant(cls, temperatures, value) -> PILossSeries:
        t = np.asarray(temperatures, dtype=float)
        return cls(t, np.full(t.shape, float(value)))

    def at(self, T, interpolate: bool = False, rtol: float = 1e-6):
        """delta_PI at temperature(s) ``T``.

        Without ``interpolate`` the temperature must match a grid node within
        ``rtol`` (relative); otherwise linear interpolation, clamped at the ends.
        """
        T = np.asarray(T, dtype=float)
        if interpolate:
            return np.interp(T, self.temperatures, self.delta_pi)
        flat = np.atleast_1d(T)
        idx = np.searchsorted(self.temperatures, flat)
        out = np.empty(flat.shape)
        for i, (t, j) in enumerate(zip(flat, idx)):
            hit = None
            for c in (j - 1, j):
                if 0 <= c < self.temperatures.size and abs(self.temperatures[c] - t) <= rtol * max(abs(t), 1e-300):
                    hit = c
            if hit is None:
                raise TemperatureLookupError(f"temperature {t:g} K not in PI loss series")
            out[i] = self.delta_pi[hit]
        return out.reshape(T.shape) if T.ndim else float(out[0])


def thermal_factor(T, f_r):
    """``tanh(h f_r / (2 k_B T))``; tends to 1 as T -> 0."""
    T = np.asarray(T, dtype=float)
    if np.any(T <= 0):
        raise ParameterDomainError("temperature must be positive")
    return np.tanh(h * f_r / (2.0 * k_B * T))


def saturation_photon_number(T, p: TLSModelParams):
    """``n_s(T) = D T^beta coth(h f_r / 2 k_B T)``."""
    return p.d_sat * np.power(T, p.beta_exp) / thermal_factor(T, p.f_r)


def tls_inverse_q_simple(T, n_ph, delta_tls, f_r, alpha_exp, n_s):
    """TLS loss with the saturation photon number given directly."""
    th = thermal_factor(T, f_r)
    return delta_tls * th / np.sqrt(1.0 + np.power(n_ph, alpha_exp) / n_s)


def tls_inverse_q(T, n_ph, p: TLSModelParams):
    n_ph = np.asarray(n_ph, dtype=float)
    if np.any(n_ph < 0):
        raise ParameterDomainError("photon number must be >= 0")
    th = thermal_factor(T, p.f_r)
    sat = np.power(n_ph, p.alpha_exp) / (p.d_sat * np.power(T, p.beta_exp))
    return p.delta_tls * th / np.sqrt(1.0 + sat * th)


def total_inverse_q(T, n_ph, p: TLSModelParams, pi: PILossSeries, interpolate: bool = False):
    """TLS loss plus the power-independent term at the same temperature."""
    return tls_inverse_q(T, n_ph, p) + pi.at(T, interpolate=interpolate)


def single_photon_inverse_q(p: TLSModelParams, pi: PILossSeries, t_base: float = 0.01):
    """``1/Q`` at one photon and the base temperature (PI term interpolated)."""
    return float(total_inverse_q(t_base, 1.0, p, pi, interpolate=True))


# --- surfaces ---------------------------------------------------------------------

@dataclass
class LossSurface:
    """Measured (or synthetic) ``1/Q_int`` on a temperature/photon-number grid."""

    temperature: np.ndarray
    n_ph: np.ndarray
    inverse_q: np.ndarray
    inverse_q_stderr: np.ndarray
    resonator: str = ""
    f_r: float = float("nan")
    power_dbm: np.ndarray | None = None

    def __post_init__(self):
        cols = [np.asarray(getattr(self, k), dtype=float) for k in
                ("temperature", "n_ph", "inverse_q", "inverse_q_stderr")]
        n = cols[0].size
        if any(c.shape != (n,) for c in cols):
            raise ParameterDomainError("loss surface columns must be 1-D and equal length")
        if np.any(cols[2] <= 0):
            raise ParameterDomainError("inverse_q must be positive")
        if np.any(cols[3] < 0) or np.any(cols[1] < 0) or np.any(cols[0] <= 0):
            raise ParameterDomainError("stderr and n_ph must be >= 0, temperature > 0")
        self.temperature, self.n_ph, self.inverse_q, self.inverse_q_stderr = cols
        if self.power_dbm is not None:
            self.power_dbm = np.asarray(self.power_dbm, dtype=float)
            if self.power_dbm.shape != (n,):
                raise ParameterDomainError("power_dbm must match the other columns")

    def __len__(self):
        return self.temperature.size

    def subset(self, mask) -> LossSurface:
        """Rows selected by a boolean mask or an integer index array (in that order)."""
        mask = np.asarray(mask)
        if mask.dtype != bool and not np.issubdtype(mask.dtype, np.integer):
            raise ParameterDomainError("subset needs a boolean mask or integer indices")
        return LossSurface(
            self.temperature[mask], self.n_ph[mask], self.inverse_q[mask],
            self.inverse_q_stderr[mask], self.resonator, self.f_r,
            None if self.power_dbm is None else self.power_dbm[mask],
        )

    def temperatures(self):
        return np.unique(self.temperature)

    def to_json(self) -> str:
        entries = []
        for i in range(len(self)):
            e = {
                "temperature_k": float(self.temperature[i]),
                "n_ph": float(self.n_ph[i]),
                "inverse_q": float(self.inverse_q[i]),
                "inverse_q_stderr": float(self.inverse_q_stderr[i]),
            }
            if self.power_dbm is not None:
                e["power_dbm"] = float(self.power_dbm[i])
            entries.append(e)
        doc = {
            "header": {
                "format": SURFACE_FORMAT,
                "version": SURFACE_VERSION,
                "resonator": self.resonator,
                "f_r_hz": None if not np.isfinite(self.f_r) else float(self.f_r),
                "units": {
                    "temperature_k": "K", "n_ph": "photons", "inverse_q": "1",
                    "inverse_q_stderr": "1", "power_dbm": "dBm", "f_r_hz": "Hz",
                },
            },
            "entries": entries,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> LossSurface:
        doc = json.loads(text)
        hdr = doc.get("header", {})
        if hdr.get("format") != SURFACE_FORMAT:
            raise ConfigurationError(f"not a loss surface document (format={hdr.get('format')!r})")
        ent = doc["entries"]
        col = lambda k: np.array([e[k] for e in ent], dtype=float)  # noqa: E731
        power = col("power_dbm") if ent and all("power_dbm" in e for e in ent) else None
        f_r = hdr.get("f_r_hz")
        return cls(col("temperature_k"), col("n_ph"), col("inverse_q"), col("inverse_q_stderr"),
                   hdr.get("resonator", ""), float("nan") if f_r is None else float(f_r), power)


def high_power_exclusion(surface: LossSurface, n_sigma: float = 3.0,
                         rule: str = "sustained") -> np.ndarray:
    """Mask (True = keep) dropping the high-power tail where Q_int turns down.

    Per temperature, points are ordered by drive (power if present, else photon
    number). With ``rule="first"`` the tail is cut at the first point whose
    Q_int falls below the running maximum by more than ``n_sigma`` combined
    standard errors. ``rule="sustained"`` (default) cuts at position k only
    when every point from k on lies that far below the maximum of the points
    before k, so a single low point followed by a recovery is kept as noise.
    """
    if rule not in ("sustained", "first"):
        raise ConfigurationError(f"unknown high-power rule {rule!r}")
    keep = np.ones(len(surface), dtype=bool)
    q = 1.0 / surface.inverse_q
    q_se = surface.inverse_q_stderr / surface.inverse_q ** 2
    drive = surface.power_dbm if surface.power_dbm is not None else surface.n_ph
    for T in surface.temperatures():
        idx = np.flatnonzero(surface.temperature == T)
        idx = idx[np.argsort(drive[idx], kind="stable")]
        for k in range(1, idx.size):
            best = idx[np.argmax(q[idx[:k]])]
            tail = idx[k:] if rule == "sustained" else idx[k:k + 1]
            margin = n_sigma * np.hypot(q_se[tail], q_se[best])
            if np.all(q[best] - q[tail] > margin):
                keep[idx[k:]] = False
                break
    return keep


# --- fitting ------------------------------------------------------------------------

@dataclass
class LossFitOptions:
    alpha_bounds: tuple = (0.1, 2.0)
    beta_bounds: tuple = (0.1, 7.0)
    delta_tls_bounds: tuple = (1e-12, 1.0)
    d_sat_bounds: tuple = (1e-9, 1e15)
    exclude_high_power: bool = True
    exclusion_sigma: float = 3.0
    exclusion_rule: str = "sustained"
    min_temperatures: int = 2
    min_powers: int = 4
    max_nfev: int = 2000


@dataclass
class LossFitResult:
    params: TLSModelParams
    pi: PILossSeries
    stderr: dict
    goodness: dict
    kept: np.ndarray
    surface: LossSurface = field(repr=False)

    @property
    def degenerate(self) -> bool:
        return bool(self.goodness.get("degenerate", False))


def _initial_guesses(surface: LossSurface, temps, opt: LossFitOptions):
    f_r = surface.f_r
    y, n, T = surface.inverse_q, surface.n_ph, surface.temperature
    lo_T = temps[0]
    sel = T == lo_T
    y_lo, n_lo = y[sel], n[sel]
    pi0 = np.array([max(np.min(y[T == t]), 0.0) * 0.9 for t in temps])
    swing = float(np.max(y_lo) - np.min(y_lo))
    th = float(thermal_factor(lo_T, f_r))
    d0 = min(max(swing / th, opt.delta_tls_bounds[0]), opt.delta_tls_bounds[1])
    # photon number where the low-temperature loss is halfway down
    order = np.argsort(n_lo)
    ys, ns = y_lo[order], np.maximum(n_lo[order], 1e-3)
    mid = 0.5 * (ys[0] + ys[-1])
    below = np.flatnonzero(ys <= mid)
    n_mid = float(ns[below[0]]) if below.size else float(np.sqrt(ns[0] * ns[-1]))
    starts = []
    for a0 in (0.3, 0.6, 1.0):
        for b0 in (0.5, 1.5, 3.0):
            # halfway down when n^alpha tanh / (D T^beta) = 3
            D0 = n_mid ** a0 * th / (3.0 * lo_T ** b0)
            D0 = min(max(D0, opt.d_sat_bounds[0] * 10), opt.d_sat_bounds[1] / 10)
            starts.append((d0, a0, b0, D0))
    return starts, pi0


def fit_loss_surface(surface: LossSurface, options: LossFitOptions | None = None) -> LossFitResult:
    """Weighted bounded least squares of the loss model.

    Global parameters {delta_TLS, alpha, beta, D} plus one delta_PI >= 0 per
    temperature. Residuals are weighted by ``inverse_q_stderr``; when any
    stderr is zero (noiseless data) relative residuals are used instead.

    Raises
    ------
    ConfigurationError
        Fewer than ``min_temperatures`` temperatures (beta is then
        under-determined) or fewer than ``min_powers`` points at a temperature.
    FitError
        If no start converges.
    """
    opt = options or LossFitOptions()
    if not np.isfinite(surface.f_r) or surface.f_r <= 0:
        raise ConfigurationError("loss surface needs a resonance frequency")
    kept = high_power_exclusion(surface, opt.exclusion_sigma, opt.exclusion_rule) if opt.exclude_high_power \
        else np.ones(len(surface), dtype=bool)
    surf = surface.subset(kept)
    temps = surf.temperatures()
    if temps.size < opt.min_temperatures:
        raise ConfigurationError(
            f"under-determined: {temps.size} temperature(s); beta needs >= {opt.min_temperatures}"
        )
    for t in temps:
        cnt = int(np.sum(surf.temperature == t))
        if cnt < opt.min_powers:
            raise ConfigurationError(
                f"under-determined: {cnt} powers at T={t:g} K, need >= {opt.min_powers}"
            )
    K = temps.size
    T, n, y = surf.temperature, surf.n_ph, surf.inverse_q
    sigma = surf.inverse_q_stderr
    weighting = "stderr"
    if np.any(sigma <= 0):
        sigma = y.copy()
        weighting = "relative"
    t_index = np.searchsorted(temps, T)
    f_r = surf.f_r
    th = thermal_factor(T, f_r)
    y_scale = float(np.median(y))
    lnT = np.log(T)

    def model(theta):
        ln_d, a, b, ln_D = theta[:4]
        pis = theta[4:] * y_scale
        with np.errstate(over="ignore"):
            sat = np.exp(a * np.log(np.maximum(n, 1e-300)) - ln_D - b * lnT) * th
        sat = np.where(n > 0, sat, 0.0)
        return np.exp(ln_d) * th / np.sqrt(1.0 + sat) + pis[t_index]

    def resid(theta):
        return (model(theta) - y) / sigma

    lb = np.concatenate([[math.log(opt.delta_tls_bounds[0]), opt.alpha_bounds[0],
                          opt.beta_bounds[0], math.log(opt.d_sat_bounds[0])], np.zeros(K)])
    ub = np.concatenate([[math.log(opt.delta_tls_bounds[1]), opt.alpha_bounds[1],
                          opt.beta_bounds[1], math.log(opt.d_sat_bounds[1])], np.full(K, np.inf)])
    starts, pi0 = _initial_guesses(surf, temps, opt)
    best = None
    for d0, a0, b0, D0 in starts:
        x0 = np.concatenate([[math.log(d0), a0, b0, math.log(D0)], pi0 / y_scale])
        x0 = np.clip(x0, lb, ub)
        try:
            res = least_squares(resid, x0, bounds=(lb, ub), method="trf", x_scale="jac",
                                ftol=1e-14, xtol=1e-14, gtol=1e-14, max_nfev=opt.max_nfev)
        except (ValueError, FloatingPointError):
            continue
        if not np.all(np.isfinite(res.fun)):
            continue
        if best is None or res.cost < best.cost:
            best = res
    if best is None or best.status < 0:
        raise FitError("loss-surface fit failed from every start",
                       best=None if best is None else best.x)

    theta = best.x
    m = y.size
    p_count = theta.size
    dof = max(m - p_count, 1)
    chi2 = float(2.0 * best.cost)
    J = best.jac
    # covariance scaled by reduced chi^2 (the lmfit convention)
    s2 = chi2 / dof
    try:
        cov = np.linalg.pinv(J.T @ J) * s2
    except np.linalg.LinAlgError:
        cov = np.full((p_count, p_count), np.nan)
    var = np.clip(np.diag(cov), 0.0, None)
    ln_d, a, b, ln_D = theta[:4]
    delta = math.exp(ln_d)
    D = math.exp(ln_D)
    stderr = {
        "delta_tls": delta * math.sqrt(var[0]),
        "alpha_exp": math.sqrt(var[1]),
        "beta_exp": math.sqrt(var[2]),
        "d_sat": D * math.sqrt(var[3]),
    }
    pi_vals = theta[4:] * y_scale
    pi_se = np.sqrt(var[4:]) * y_scale
    params = TLSModelParams(delta, float(a), float(b), D, f_r)
    pi = PILossSeries(temps, np.maximum(pi_vals, 0.0), pi_se)

    at_lower = ln_d <= lb[0] + math.log(10.0)
    rel_err = stderr["delta_tls"] / delta if delta > 0 else np.inf
    flags = []
    if at_lower:
        flags.append("delta_tls_at_lower_bound")
    if not rel_err < 1.0:
        flags.append("delta_tls_unresolved")
    for name, idx, bnd in (("alpha_exp", 1, opt.alpha_bounds), ("beta_exp", 2, opt.beta_bounds)):
        if np.isclose(theta[idx], bnd[0]) or np.isclose(theta[idx], bnd[1]):
            flags.append(f"{name}_at_bound")
    goodness = {
        "chi2": chi2,
        "dof": dof,
        "reduced_chi2": chi2 / dof,
        "weighting": weighting,
        "n_points": int(m),
        "n_excluded": int(np.sum(~kept)),
        "degenerate": bool(at_lower or not rel_err < 1.0),
        "flags": flags,
        "nfev": int(best.nfev),
    }
    return LossFitResult(params, pi, stderr, goodness, kept, surface)


def fractional_frequency_shift(temperatures, f_r):
    """``(f_r(T) - f_r(T_min)) / f_r(T_min)`` using the lowest-temperature entry.

    Returns ``(sorted temperatures, shifts)``.
    """
    t = np.asarray(temperatures, dtype=float)
    f = np.asarray(f_r, dtype=float)
    if t.size == 0:
        raise ConfigurationError("empty resonance-frequency series")
    if t.shape != f.shape:
        raise ParameterDomainError("temperature and frequency series differ in length")
    order = np.argsort(t, kind="stable")
    t, f = t[order], f[order]
    f0 = f[0]
    return t, (f - f0) / f0
