"""Least-squares extraction of notch resonance parameters from complex traces.

The procedure has two steps. First the data around the resonance is cut out
and only the cable background ``a e^{i alpha0} e^{-2 pi i f tau}`` is fitted.
Then that background seeds a joint fit of all seven parameters, background
included, on the stacked real/imaginary residual. A Duffing variant fits the
same background around the Kerr-nonlinear steady-state response.

Parameters are optimized in normalized coordinates ``v = 1 + (u - u0)/scale``
so every coordinate is O(1) for the trust-region stopping tests. The cable
phase is referenced to the trace centre frequency internally and converted
back to the ``f = 0`` convention of :class:`~resloss.scattering.NotchParams`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares

from .errors import (
    ConfigurationError,
    FitError,
    NoResonanceError,
    ParameterDomainError,
    RootFindingError,
)
from .scattering import (
    DuffingParams,
    NotchParams,
    diameter_correct,
    duffing_peak_photon_number,
    duffing_photon_number,
    eval_duffing_s21,
    eval_ideal_notch,
    smallest_positive_root,
    wrap_phase,
)

__all__ = [
    "ComplexTrace",
    "Background",
    "NotchFit",
    "DuffingFit",
    "FitOptions",
    "classify_coupling",
    "estimate_noise_rms",
    "estimate_initial",
    "fit_background",
    "fit_full",
    "fit_trace",
    "seed_duffing",
    "fit_duffing",
]

MIN_TRACE_POINTS = 32
MIN_BACKGROUND_POINTS = 16

NOTCH_KEYS = ("f_r", "Q_l", "Q_c_mag", "phi", "a", "alpha0", "tau")
DUFFING_KEYS = ("omega_r", "kappa", "kappa_c", "beta_kerr", "phi", "a", "alpha0", "tau")


@dataclass(frozen=True)
class ComplexTrace:
    """Frequency-ordered complex S21 samples of one sweep."""

    freqs: np.ndarray
    s21: np.ndarray
    applied_power: float | None = None
    stage_temperature: float | None = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        f = np.asarray(self.freqs, dtype=float)
        z = np.asarray(self.s21, dtype=complex)
        if f.ndim != 1 or z.shape != f.shape:
            raise ParameterDomainError("freqs and s21 must be 1-D arrays of equal length")
        if f.size < MIN_TRACE_POINTS:
            raise ParameterDomainError(f"a trace needs at least {MIN_TRACE_POINTS} samples, got {f.size}")
        if np.any(np.diff(f) <= 0):
            raise ParameterDomainError("frequencies must be strictly increasing")
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(z))):
            raise ParameterDomainError("trace contains non-finite values")
        object.__setattr__(self, "freqs", f)
        object.__setattr__(self, "s21", z)

    def __len__(self):
        return self.freqs.size

    def scaled(self, factor: float) -> ComplexTrace:
        return replace(self, s21=self.s21 * factor)


@dataclass(frozen=True)
class Background:
    a: float
    alpha0: float
    tau: float
    stderr: dict = field(default_factory=dict, compare=False)


@dataclass
class FitOptions:
    """Tunable knobs of the trace fitter."""

    exclusion_halfwidth: float = 5.0  # background window, in estimated linewidths
    max_iterations: int = 500
    ftol: float = 1e-12
    xtol: float = 1e-12
    excluded_ratio: float = 10.0
    undercoupled_ratio: float = 0.1
    # Duffing reliability gate: rms > factor * noise + floor (both relative to a)
    unreliable_noise_factor: float = 2.0
    unreliable_floor: float = 2e-3


def classify_coupling(q_int: float, q_c: float, excluded_ratio=10.0, undercoupled_ratio=0.1) -> str:
    r = q_int / q_c
    if r >= excluded_ratio:
        return "excluded"
    if r > 1.0:
        return "overcoupled"
    if r >= undercoupled_ratio:
        return "critical"
    return "undercoupled"


@dataclass
class NotchFit:
    params: NotchParams
    q_int: float
    stderr: dict
    residual_rms: float
    coupling_regime: str
    noise_rms: float = 0.0
    nfev: int = 0
    model: str = field(default="linear", init=False)

    @property
    def q_c(self) -> float:
        return self.params.Q_c_mag

    @property
    def f_r(self) -> float:
        return self.params.f_r


@dataclass
class DuffingFit:
    params: DuffingParams
    background: Background
    flux: float
    q_int: float
    stderr: dict
    residual_rms: float
    coupling_regime: str
    reliable: bool
    noise_rms: float = 0.0
    nfev: int = 0
    model: str = field(default="duffing", init=False)

    @property
    def q_c(self) -> float:
        return self.params.Q_c_mag

    @property
    def f_r(self) -> float:
        return self.params.f_r

    @property
    def kappa_int(self) -> float:
        return self.params.kappa_int

    @property
    def peak_photon_number(self) -> float:
        return duffing_peak_photon_number(self.params, self.flux)


# --- seeding ------------------------------------------------------------------

def estimate_noise_rms(z, mask=None) -> float:
    """Per-sample RMS of complex white noise, from second differences.

    With ``mask``, only second differences of three consecutive masked
    samples contribute.
    """
    z = np.asarray(z)
    d2 = z[2:] - 2.0 * z[1:-1] + z[:-2]
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        d2 = d2[mask[2:] & mask[1:-1] & mask[:-2]]
    if d2.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(np.abs(d2) ** 2) / 6.0))


def _smooth(x, width):
    if width <= 1:
        return x
    kernel = np.ones(width) / width
    pad = width // 2
    xp = np.concatenate([np.repeat(x[:1], pad), x, np.repeat(x[-1:], width - 1 - pad)])
    return np.convolve(xp, kernel, mode="valid")


def _edge_mask(n):
    m = np.zeros(n, dtype=bool)
    e = max(4, n // 10)
    m[:e] = True
    m[-e:] = True
    return m


def _phase_line(f, z, mask, f_ref):
    """Common-slope line through the unwrapped phase on each side of the dip.

    Returns (slope rad/Hz, phase at f_ref). Sides are unwrapped separately so
    noisy phase near a deep dip cannot inject a 2 pi offset between them.
    """
    idx = np.flatnonzero(mask)
    low = idx[f[idx] < f_ref]
    high = idx[f[idx] >= f_ref]
    cols, ys, groups = [], [], []
    for g, side in enumerate((low, high)):
        if side.size < 2:
            continue
        ph = np.unwrap(np.angle(z[side]))
        cols.append(f[side] - f_ref)
        ys.append(ph)
        groups.append(np.full(side.size, g))
    x = np.concatenate(cols)
    y = np.concatenate(ys)
    gr = np.concatenate(groups)
    used = np.unique(gr)
    A = np.column_stack([x] + [(gr == g).astype(float) for g in used])
    sol, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(sol[0]), float(sol[1])


def _dip_width(f, mag, base, noise, smooth_w):
    """Full width at half depth of the smoothed |S21| dip."""
    n = f.size
    mag_s = _smooth(mag, smooth_w)
    i_min = int(np.argmin(mag_s))
    depth = base - float(mag_s[i_min])
    if depth < max(3.0 * noise, 1e-6 * base):
        raise NoResonanceError(
            f"no resonance found: dip depth {depth:.3g} vs noise rms {noise:.3g}"
        )
    level = base - 0.5 * depth
    lo = i_min
    while lo > 0 and mag_s[lo] < level:
        lo -= 1
    hi = i_min
    while hi < n - 1 and mag_s[hi] < level:
        hi += 1

    def cross(i, j):
        # linear interpolation of the level crossing between samples i and j
        mi, mj = mag_s[i], mag_s[j]
        if mi == mj:
            return f[i]
        return f[i] + (level - mi) * (f[j] - f[i]) / (mj - mi)

    f_lo = cross(lo, lo + 1) if lo < i_min else f[lo]
    f_hi = cross(hi - 1, hi) if hi > i_min else f[hi]
    df = float(np.median(np.diff(f)))
    return max(f_hi - f_lo, df), lo, hi, i_min, depth


def estimate_initial(trace: ComplexTrace) -> NotchParams:
    """Heuristic seed from dip position, half-depth width and off-resonance phase."""
    f, z = trace.freqs, trace.s21
    n = f.size
    mag = np.abs(z)
    edges = _edge_mask(n)
    base = float(np.median(mag[edges]))
    noise = estimate_noise_rms(z, edges)

    width, lo, hi, i_min, depth = _dip_width(f, mag, base, noise, max(1, n // 200))
    df = float(np.median(np.diff(f)))
    smooth_w = max(1, n // 200)
    if smooth_w > 1 and width / df < 8 * smooth_w:
        # the default smoothing is too wide for a narrow dip; redo with less
        width, lo, hi, i_min, depth = _dip_width(f, mag, base, noise, max(1, int(width / df / 8)))

    # resonance point: fastest traversal of the circle, independent of phi
    win = slice(max(lo - 1, 1), min(hi + 2, n - 1))
    pts_per_lw = width / df
    zs = _smooth(z.real, max(1, int(pts_per_lw / 8))) + 1j * _smooth(z.imag, max(1, int(pts_per_lw / 8)))
    speed = np.abs(np.gradient(zs, f))
    j = win.start + int(np.argmax(speed[win]))
    f_r = float(f[j])
    if 0 < j < n - 1:
        y0, y1, y2 = speed[j - 1], speed[j], speed[j + 1]
        den = y0 - 2 * y1 + y2
        if den < 0:
            f_r += 0.5 * (y0 - y2) / den * (f[j + 1] - f[j - 1]) / 2.0
    if not (f[0] < f_r < f[-1]):
        f_r = float(f[i_min])
    # half-depth of |S21| sits at |x| = x_half (x = 2 Q_l (f/f_r - 1)), which is
    # 1 only for shallow dips
    d = min(depth / base, 0.999)
    c = (1.0 - 0.5 * d) ** 2
    x_half = math.sqrt(max(c - (1.0 - d) ** 2, 0.0) / (1.0 - c))
    q_l = x_half * f_r / width

    off = np.abs(f - f_r) > 5.0 * width
    if off.sum() < MIN_BACKGROUND_POINTS:
        off = edges
    a = float(np.mean(mag[off]))
    slope, phase_at_fr = _phase_line(f, z, off, f_r)
    tau = -slope / (2.0 * math.pi)
    alpha0 = float(wrap_phase(phase_at_fr + 2.0 * math.pi * f_r * tau))

    ratio = min(depth / base, 0.999)
    q_c = q_l / ratio
    return NotchParams(f_r=f_r, Q_l=q_l, Q_c_mag=q_c, phi=0.0, a=a, alpha0=alpha0, tau=tau)


# --- background -----------------------------------------------------------------

def _center(f):
    return 0.5 * (f[0] + f[-1])


def fit_background(trace: ComplexTrace, exclusion_halfwidth: float = 5.0,
                   seed: NotchParams | None = None, refine: int = 20) -> Background:
    """Fit ``a e^{i alpha0} e^{-2 pi i f tau}`` to the samples outside the resonance window.

    The window is ``f_r +- exclusion_halfwidth * f_r/Q_l`` using the seed
    (default: :func:`estimate_initial`). The retained samples are divided by
    the seed's ideal notch response before fitting, so the Lorentzian tails
    do not masquerade as cable delay. Up to ``refine`` rounds then alternate
    a four-parameter fit of the resonance (background held fixed) with a
    refit of the background, stopping once the background settles;
    ``refine=0`` uses the seed's tail as is.

    ``stderr`` holds ``a``, ``tau`` and ``alpha_c``, the phase at the trace
    centre that is fitted in place of ``alpha0``.
    """
    if seed is None:
        seed = estimate_initial(trace)
    f, z = trace.freqs, trace.s21
    lw = seed.f_r / seed.Q_l
    keep = np.abs(f - seed.f_r) > exclusion_halfwidth * lw
    if keep.sum() < MIN_BACKGROUND_POINTS:
        raise ConfigurationError(
            f"only {int(keep.sum())} samples outside +-{exclusion_halfwidth} linewidths; "
            f"need {MIN_BACKGROUND_POINTS} for the background fit"
        )
    fk = f[keep]
    bg = _fit_background_samples(f, fk, z[keep] / eval_ideal_notch(fk, seed), seed)
    span = max(f[-1] - f[0], 1e-30)
    for _ in range(max(int(refine), 0)):
        new = _refine_resonance(f, z, bg, seed)
        if new is None:
            break
        seed = new
        prev = bg
        bg = _fit_background_samples(f, fk, z[keep] / eval_ideal_notch(fk, seed), seed)
        moved = abs(bg.a / prev.a - 1.0) + abs(wrap_phase(bg.alpha0 - prev.alpha0)) \
            + 2.0 * math.pi * span * abs(bg.tau - prev.tau)
        if moved < 1e-13:
            break
    return bg


def _fit_background_samples(f, fk, zk, start: NotchParams) -> Background:
    fc = _center(f)
    span = max(f[-1] - f[0], 1e-30)
    a0 = start.a
    ac0 = start.alpha0 - 2.0 * math.pi * fc * start.tau
    s = np.array([a0, 1.0, 1.0 / (2.0 * math.pi * span)])
    u0 = np.array([a0, ac0, start.tau])

    def unpack(v):
        return u0 + (v - 1.0) * s

    def resid(v):
        a, ac, tau = unpack(v)
        m = a * np.exp(1j * (ac - 2.0 * math.pi * (fk - fc) * tau)) - zk
        return np.concatenate([m.real, m.imag])

    def jac(v):
        a, ac, tau = unpack(v)
        B = a * np.exp(1j * (ac - 2.0 * math.pi * (fk - fc) * tau))
        cols = [B / a, 1j * B, -2j * math.pi * (fk - fc) * B]
        J = np.column_stack(cols) * s
        return np.vstack([J.real, J.imag])

    res = least_squares(resid, np.ones(3), jac=jac, method="lm", ftol=1e-12, xtol=1e-12,
                        gtol=1e-15, max_nfev=500)
    a, ac, tau = unpack(res.x)
    stderr = _stderr(res.jac, res.fun, s, ("a", "alpha_c", "tau"))
    if a < 0:
        a, ac = -a, ac + math.pi
    return Background(a=float(a), alpha0=float(wrap_phase(ac + 2.0 * math.pi * fc * tau)),
                      tau=float(tau), stderr=stderr)


def _refine_resonance(f, z, bg: Background, seed: NotchParams) -> NotchParams | None:
    """Ideal-notch fit of ``z`` with the background divided out; None on failure."""
    zn = z / (bg.a * np.exp(1j * (bg.alpha0 - 2.0 * math.pi * f * bg.tau)))
    lw = seed.f_r / seed.Q_l
    u0 = np.array([seed.f_r, seed.Q_l, seed.Q_c_mag, seed.phi])
    s = np.array([lw, seed.Q_l, seed.Q_c_mag, 1.0])

    def resid(v):
        f_r, q_l, q_c, phi = u0 + (v - 1.0) * s
        x = 2.0 * q_l * (f / f_r - 1.0)
        d = 1.0 - (q_l / q_c) * np.exp(1j * phi) / (1.0 + 1j * x) - zn
        return np.concatenate([d.real, d.imag])

    try:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            res = least_squares(resid, np.ones(4), method="lm", xtol=1e-12, ftol=1e-12, max_nfev=200)
        f_r, q_l, q_c, phi = u0 + (res.x - 1.0) * s
        if q_c < 0:
            q_c, phi = -q_c, phi + math.pi
        return NotchParams(float(f_r), float(q_l), float(q_c), float(phi), bg.a, bg.alpha0, bg.tau)
    except (ParameterDomainError, ValueError):
        return None


def _covariance(J, r, scale):
    """Gauss-Newton covariance in physical units, scaled by residual variance."""
    m, p = J.shape
    dof = max(m - p, 1)
    s2 = float(r @ r) / dof
    _, sv, vt = np.linalg.svd(J, full_matrices=False)
    cutoff = np.finfo(float).eps * max(J.shape) * (sv[0] if sv.size else 0.0)
    inv = np.where(sv > cutoff, 1.0 / np.where(sv > cutoff, sv, 1.0) ** 2, 0.0)
    cov_v = (vt.T * inv) @ vt * s2
    return cov_v * np.outer(scale, scale)


def _stderr(J, r, scale, names):
    cov = _covariance(J, r, scale)
    return {k: float(math.sqrt(max(cov[i, i], 0.0))) for i, k in enumerate(names)}


# --- linear notch fit -----------------------------------------------------------

def _notch_model_and_jac(f, fc, u, want_jac=True):
    f_r, q_l, q_c, phi, a, ac, tau = u
    B = a * np.exp(1j * (ac - 2.0 * math.pi * (f - fc) * tau))
    x = 2.0 * q_l * (f / f_r - 1.0)
    den = 1.0 + 1j * x
    g = (q_l / q_c) * np.exp(1j * phi) / den
    S = 1.0 - g
    m = B * S
    if not want_jac:
        return m, None
    cols = [
        -B * g * (2j * q_l * f / (f_r * f_r)) / den,  # d/d f_r
        -B * g / (q_l * den),                           # d/d Q_l
        B * g / q_c,                                    # d/d Q_c
        -1j * B * g,                                    # d/d phi
        B * S / a,                                      # d/d a
        1j * m,                                         # d/d alpha_c
        -2j * math.pi * (f - fc) * m,                   # d/d tau
    ]
    return m, np.column_stack(cols)


def _q_int_stderr(p: NotchParams, cov):
    """Delta-method error of Q_int over (Q_l, Q_c, phi)."""
    qi = p.q_int
    grad = np.zeros(7)
    grad[1] = qi * qi / (p.Q_l * p.Q_l)
    grad[2] = -qi * qi * math.cos(p.phi) / (p.Q_c_mag * p.Q_c_mag)
    grad[3] = -qi * qi * math.sin(p.phi) / p.Q_c_mag
    return float(math.sqrt(max(grad @ cov @ grad, 0.0)))


def fit_full(trace: ComplexTrace, seed: NotchParams | None = None,
             options: FitOptions | None = None) -> NotchFit:
    """Joint seven-parameter fit of the full notch model.

    Without a seed, runs the two-step procedure: :func:`estimate_initial`,
    then :func:`fit_background` on the off-resonance samples, whose result
    seeds the joint fit.

    Raises
    ------
    FitError
        On non-convergence within ``options.max_iterations``; ``best`` holds
        the last parameter dict.
    UnphysicalFitError
        If the optimum has no positive internal quality factor.
    """
    opt = options or FitOptions()
    if seed is None:
        seed = estimate_initial(trace)
        try:
            bg = fit_background(trace, opt.exclusion_halfwidth, seed)
            seed = seed.with_background(bg.a, bg.alpha0, bg.tau)
        except ConfigurationError:
            # narrow sweep: keep the heuristic background
            pass
    f, z = trace.freqs, trace.s21
    fc = _center(f)
    span = max(f[-1] - f[0], 1e-30)
    u0 = np.array([seed.f_r, seed.Q_l, seed.Q_c_mag, seed.phi, seed.a,
                   seed.alpha0 - 2.0 * math.pi * fc * seed.tau, seed.tau])
    scale = np.array([seed.f_r / seed.Q_l, seed.Q_l, seed.Q_c_mag, 1.0, seed.a, 1.0,
                      1.0 / (2.0 * math.pi * span)])

    def unpack(v):
        return u0 + (v - 1.0) * scale

    def resid(v):
        m, _ = _notch_model_and_jac(f, fc, unpack(v), want_jac=False)
        d = m - z
        return np.concatenate([d.real, d.imag])

    def jac(v):
        _, J = _notch_model_and_jac(f, fc, unpack(v))
        J = J * scale
        return np.vstack([J.real, J.imag])

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        res = least_squares(resid, np.ones(7), jac=jac, method="lm", ftol=opt.ftol,
                            xtol=opt.xtol, gtol=1e-15, max_nfev=opt.max_iterations)
    u = unpack(res.x)
    best = dict(zip(("f_r", "Q_l", "Q_c_mag", "phi", "a", "alpha_c", "tau"), map(float, u)))
    if res.status <= 0 or not np.all(np.isfinite(u)):
        raise FitError(f"notch fit did not converge: {res.message}", best=best, nfev=res.nfev)
    f_r, q_l, q_c, phi, a, ac, tau = map(float, u)
    if q_c < 0:
        q_c, phi = -q_c, phi + math.pi
    if a < 0:
        a, ac = -a, ac + math.pi
    if q_l <= 0 or f_r <= 0:
        raise FitError("notch fit converged to non-positive Q_l or f_r", best=best, nfev=res.nfev)
    alpha0 = float(wrap_phase(ac + 2.0 * math.pi * fc * tau))
    params = NotchParams(f_r, q_l, q_c, phi, a, alpha0, tau)

    cov = _covariance(res.jac, res.fun, scale)
    # alpha0 = alpha_c + 2 pi fc tau
    t = np.eye(7)
    t[5, 6] = 2.0 * math.pi * fc
    cov = t @ cov @ t.T
    stderr = {k: float(math.sqrt(max(cov[i, i], 0.0))) for i, k in enumerate(NOTCH_KEYS)}
    q_int = params.q_int
    stderr["q_int"] = _q_int_stderr(params, cov)
    rms = float(np.sqrt(np.mean(res.fun ** 2) * 2.0)) / a
    return NotchFit(
        params=params,
        q_int=q_int,
        stderr=stderr,
        residual_rms=rms,
        coupling_regime=classify_coupling(q_int, q_c, opt.excluded_ratio, opt.undercoupled_ratio),
        noise_rms=estimate_noise_rms(z, _edge_mask(f.size)) / a,
        nfev=int(res.nfev),
    )


def fit_trace(trace: ComplexTrace, options: FitOptions | None = None) -> NotchFit:
    """Two-step linear fit (background first, then everything)."""
    return fit_full(trace, None, options)


# --- Duffing fit ----------------------------------------------------------------

def _duffing_model_and_jac(f, fc, flux, u, want_jac=True):
    omega_r, kappa, kappa_c, beta, phi, a, ac, tau = u
    p = DuffingParams(omega_r, kappa, kappa_c, beta, phi)
    B = a * np.exp(1j * (ac - 2.0 * math.pi * (f - fc) * tau))
    S = eval_duffing_s21(f, p, flux)
    m = B * S
    if not want_jac:
        return m, None
    delta = 2.0 * math.pi * f - omega_r
    n = duffing_photon_number(delta, p, flux)
    D = delta - beta * n
    den = 0.5 * kappa + 1j * D
    g = 1.0 - S
    # implicit derivatives of n from F = n (D^2 + kappa^2/4) - kappa_c flux / 2 = 0
    Fn = D * D + 0.25 * kappa * kappa - 2.0 * beta * n * D
    Fn = np.where(np.abs(Fn) > 1e-300, Fn, 1e-300)
    n_wr = 2.0 * n * D / Fn
    n_k = -0.5 * n * kappa / Fn
    n_kc = 0.5 * flux / Fn
    n_b = 2.0 * n * n * D / Fn
    dg_dD = -1j * g / den
    cols = [
        -B * dg_dD * (-1.0 - beta * n_wr),
        -B * (-0.5 * g / den + dg_dD * (-beta * n_k)),
        -B * (g / kappa_c + dg_dD * (-beta * n_kc)),
        -B * dg_dD * (-n - beta * n_b),
        -1j * B * g,
        B * S / a,
        1j * m,
        -2j * math.pi * (f - fc) * m,
    ]
    return m, np.column_stack(cols)


def _universal_response(x, s):
    """Dimensionless Kerr response ``g = 1 / (1 + 2i (x - s m))`` on detuning ``x = delta / kappa``.

    ``m = n / n_peak`` solves ``s^2 m^3 - 2 x s m^2 + (x^2 + 1/4) m - 1/4 = 0``
    (smallest positive root), so ``S21 = 1 - (kappa_c / kappa) e^{i phi} g``.
    """
    x = np.asarray(x, dtype=float)
    if s == 0.0:
        m = 0.25 / (x * x + 0.25)
    else:
        m = smallest_positive_root(np.full(x.shape, s * s), -2.0 * x * s, x * x + 0.25,
                                   np.full(x.shape, -0.25))
    return 1.0 / (1.0 + 2j * (x - s * m))


def seed_duffing(trace: ComplexTrace, flux: float, linear: NotchFit | None = None,
                 n_best: int = 1, shifts=None, kappa_scales=None, n_offsets: int = 61):
    """Duffing seed from a scan over Kerr shift, linewidth and resonance position.

    For fixed cable delay the trace is linear in two complex numbers,
    ``z e^{2 pi i f tau} = A - C g(x)`` with the universal response ``g`` of
    :func:`_universal_response`, so the background amplitude, coupling ratio
    and asymmetry phase are solved in closed form for every grid candidate.
    Returns ``(DuffingParams, Background)``, or lists of both when
    ``n_best > 1``.
    """
    if linear is None:
        try:
            lp = fit_full(trace).params
        except (FitError, ParameterDomainError, RootFindingError):
            lp = estimate_initial(trace)
    else:
        lp = linear.params
    taus = [lp.tau]
    try:
        taus.append(fit_background(trace, seed=lp).tau)
    except (ConfigurationError, FitError):
        pass
    base = DuffingParams.from_notch(lp)
    if shifts is None:
        shifts = np.concatenate([-np.geomspace(0.25, 16.0, 13)[::-1], [0.0], np.geomspace(0.25, 16.0, 13)])
    if kappa_scales is None:
        kappa_scales = np.geomspace(0.3, 1.3, 11)
    f, z = trace.freqs, trace.s21
    w_all = [z * np.exp(2j * math.pi * f * t) for t in taus]
    om = 2.0 * math.pi * f
    offs = base.omega_r + np.linspace(-10.0, 10.0, n_offsets) * base.kappa
    k_min = base.kappa * float(np.min(kappa_scales))
    x_lo, x_hi = (om[0] - offs[-1]) / k_min, (om[-1] - offs[0]) / k_min
    # fine tabulation of g, interpolated per candidate; blurs the jump by one cell
    x_tab = np.linspace(x_lo, x_hi, int(min(max(40 * (x_hi - x_lo), 4001), 200001)))
    cands = []
    for s_k in shifts:
        try:
            g_tab = _universal_response(x_tab, float(s_k))
        except (ParameterDomainError, RootFindingError):
            continue
        for ks in kappa_scales:
            k = base.kappa * ks
            x = (om[None, :] - offs[:, None]) / k
            g = np.interp(x, x_tab, g_tab.real) + 1j * np.interp(x, x_tab, g_tab.imag)
            sg, sgg = g.sum(axis=1), (np.abs(g) ** 2).sum(axis=1)
            n = f.size
            det = n * sgg - np.abs(sg) ** 2
            for ti, w in enumerate(w_all):
                sw = w.sum()
                sgw = (np.conj(g) * w[None, :]).sum(axis=1)
                # normal equations of min |w - A + C g|^2
                A = (sgg * sw - sg * sgw) / det
                C = (np.conj(sg) * sw - n * sgw) / det
                r = w[None, :] - A[:, None] + C[:, None] * g
                cost = (np.abs(r) ** 2).sum(axis=1)
                for j in np.flatnonzero(np.isfinite(cost)):
                    cands.append((float(cost[j]), len(cands), s_k, k, offs[j], A[j], C[j], taus[ti]))
    out = []
    cands.sort(key=lambda c: c[:2])
    for cost, _, s_k, k, om_r, A, C, tau in cands:
        if A == 0:
            continue
        ratio = C / A
        kc = min(abs(ratio) * k, 0.999 * k / max(math.cos(np.angle(ratio)), 1e-3))
        phi = float(np.angle(ratio))
        try:
            dp = DuffingParams(float(om_r), float(k), float(kc), 0.0, phi)
            dp = replace(dp, beta_kerr=float(s_k) * k / duffing_peak_photon_number(dp, flux))
        except ParameterDomainError:
            continue
        bg = Background(float(abs(A)), float(np.angle(A)), float(tau))
        out.append((dp, bg))
        if len(out) >= n_best:
            break
    if not out:
        raise FitError("no valid Duffing seed on the scan grid")
    if n_best > 1:
        return [o[0] for o in out], [o[1] for o in out]
    return out[0]


def fit_duffing(trace: ComplexTrace, flux: float, seed: DuffingParams | None = None,
                background: Background | None = None,
                options: FitOptions | None = None) -> DuffingFit:
    """Fit the Kerr-nonlinear notch model times the cable background.

    ``flux`` is the drive photon flux (photons/s) at the resonator, i.e. the
    calibrated on-chip power over ``h f_r``. The fit is flagged unreliable when
    its normalized residual RMS exceeds
    ``unreliable_noise_factor * noise + unreliable_floor``, which catches
    resonance circles deformed beyond a simple bistable jump.
    """
    opt = options or FitOptions()
    if not flux > 0:
        raise ParameterDomainError("photon flux must be positive")
    if seed is not None and background is not None:
        return _fit_duffing_from(trace, flux, seed, background, opt)
    # cheap attempt from the linear fit first; the grid scan only when that fails
    linear = None
    try:
        linear = fit_full(trace, options=opt)
    except (FitError, ParameterDomainError, RootFindingError):
        pass
    if linear is not None:
        lp = linear.params
        try:
            quick = _fit_duffing_from(trace, flux, seed or DuffingParams.from_notch(lp),
                                      background or Background(lp.a, lp.alpha0, lp.tau), opt)
            if quick.reliable:
                return quick
        except (FitError, ParameterDomainError, RootFindingError):
            pass
    seeds, bgs = seed_duffing(trace, flux, linear, n_best=3)
    if seed is not None:
        seeds = [seed] * len(bgs)
    if background is not None:
        bgs = [background] * len(seeds)
    best, err = None, None
    for cand, cbg in zip(seeds, bgs):
        try:
            fit = _fit_duffing_from(trace, flux, cand, cbg, opt)
        except (FitError, ParameterDomainError, RootFindingError) as exc:
            err = exc
            continue
        if best is None or fit.residual_rms < best.residual_rms:
            best = fit
    if best is None:
        raise err
    return best


def _fit_duffing_from(trace, flux, seed: DuffingParams, background: Background,
                      opt: FitOptions) -> DuffingFit:
    f, z = trace.freqs, trace.s21
    fc = _center(f)
    span = max(f[-1] - f[0], 1e-30)
    n_peak = duffing_peak_photon_number(seed, flux)
    u0 = np.array([seed.omega_r, seed.kappa, seed.kappa_c, seed.beta_kerr, seed.phi,
                   background.a, background.alpha0 - 2.0 * math.pi * fc * background.tau,
                   background.tau])
    scale = np.array([seed.kappa, seed.kappa, seed.kappa_c, seed.kappa / n_peak, 1.0,
                      background.a, 1.0, 1.0 / (2.0 * math.pi * span)])
    big = np.full(2 * f.size, 1e3 * max(np.max(np.abs(z)), 1.0))

    def unpack(v):
        return u0 + (v - 1.0) * scale

    def resid(v):
        try:
            m, _ = _duffing_model_and_jac(f, fc, flux, unpack(v), want_jac=False)
        except (ParameterDomainError, RootFindingError):
            return big
        d = m - z
        return np.concatenate([d.real, d.imag])

    def jac(v):
        try:
            _, J = _duffing_model_and_jac(f, fc, flux, unpack(v))
        except (ParameterDomainError, RootFindingError):
            return np.zeros((2 * f.size, 8))
        J = J * scale
        return np.vstack([J.real, J.imag])

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        res = least_squares(resid, np.ones(8), jac=jac, method="lm", ftol=opt.ftol,
                            xtol=opt.xtol, gtol=1e-15, max_nfev=opt.max_iterations)
    u = unpack(res.x)
    best = dict(zip(("omega_r", "kappa", "kappa_c", "beta_kerr", "phi", "a", "alpha_c", "tau"),
                    map(float, u)))
    if res.status <= 0 or not np.all(np.isfinite(u)):
        raise FitError(f"Duffing fit did not converge: {res.message}", best=best, nfev=res.nfev)
    omega_r, kappa, kappa_c, beta, phi, a, ac, tau = map(float, u)
    if kappa_c < 0:
        kappa_c, phi = -kappa_c, phi + math.pi
    if a < 0:
        a, ac = -a, ac + math.pi
    try:
        params = DuffingParams(omega_r, kappa, kappa_c, beta, phi)
    except ParameterDomainError as exc:
        raise FitError(f"Duffing fit converged to invalid parameters: {exc}", best=best,
                       nfev=res.nfev) from exc
    if np.array_equal(res.fun, big):
        raise FitError("Duffing fit ended outside the model domain", best=best, nfev=res.nfev)

    cov = _covariance(res.jac, res.fun, scale)
    t = np.eye(8)
    t[6, 7] = 2.0 * math.pi * fc
    cov = t @ cov @ t.T
    stderr = {k: float(math.sqrt(max(cov[i, i], 0.0))) for i, k in enumerate(DUFFING_KEYS)}
    kappa_int = params.kappa_int
    # Q_int = omega_r / (kappa - kappa_c cos phi)
    grad = np.zeros(8)
    grad[0] = 1.0 / kappa_int
    grad[1] = -omega_r / kappa_int ** 2
    grad[2] = omega_r * math.cos(phi) / kappa_int ** 2
    grad[4] = -omega_r * kappa_c * math.sin(phi) / kappa_int ** 2
    stderr["q_int"] = float(math.sqrt(max(grad @ cov @ grad, 0.0)))
    # kappa_int = kappa - kappa_c cos phi
    gk = np.zeros(8)
    gk[1], gk[2], gk[4] = 1.0, -math.cos(phi), kappa_c * math.sin(phi)
    stderr["kappa_int"] = float(math.sqrt(max(gk @ cov @ gk, 0.0)))
    q_int = params.q_int
    rms = float(np.sqrt(np.mean(res.fun ** 2) * 2.0)) / a
    noise = estimate_noise_rms(z, _edge_mask(f.size)) / a
    reliable = rms <= opt.unreliable_noise_factor * noise + opt.unreliable_floor
    bg = Background(a, float(wrap_phase(ac + 2.0 * math.pi * fc * tau)), tau,
                    {k: stderr[k] for k in ("a", "alpha0", "tau")})
    return DuffingFit(
        params=params,
        background=bg,
        flux=float(flux),
        q_int=q_int,
        stderr=stderr,
        residual_rms=rms,
        coupling_regime=classify_coupling(q_int, params.Q_c_mag, opt.excluded_ratio,
                                          opt.undercoupled_ratio),
        reliable=bool(reliable),
        noise_rms=noise,
        nfev=int(res.nfev),
    )
