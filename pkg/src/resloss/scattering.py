"""Forward models for notch-type resonator transmission.

Two families live here: the linear notch response (with and without the
cable/background prefactor) and the Kerr-nonlinear (Duffing) steady state,
whose mode occupation is the smallest positive root of a cubic.

Rates in :class:`DuffingParams` are angular (rad/s). A notch resonator with
frequency ``f_r`` and quality factors ``Q_l``, ``|Q_c|`` maps to
``omega_r = 2*pi*f_r``, ``kappa = omega_r/Q_l`` and ``kappa_c = omega_r/|Q_c|``
(see :meth:`DuffingParams.from_notch`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ParameterDomainError, RootFindingError, UnphysicalFitError

__all__ = [
    "NotchParams",
    "DuffingParams",
    "wrap_phase",
    "eval_ideal_notch",
    "eval_full_notch",
    "diameter_correct",
    "cubic_real_roots",
    "smallest_positive_root",
    "duffing_photon_number",
    "duffing_peak_photon_number",
    "eval_duffing_s21",
]


def wrap_phase(phi):
    """Wrap an angle to the half-open interval (-pi, pi]."""
    return math.pi - np.mod(math.pi - phi, 2.0 * math.pi)


def diameter_correct(q_l, q_c_mag, phi):
    """Internal quality factor from ``1/Q_l = 1/Q_int + cos(phi)/|Q_c|``.

    Raises
    ------
    UnphysicalFitError
        If the implied ``1/Q_int`` is not positive.
    """
    if not (q_l > 0 and q_c_mag > 0):
        raise ParameterDomainError(f"Q_l and |Q_c| must be positive (got {q_l}, {q_c_mag})")
    inv = 1.0 / q_l - math.cos(phi) / q_c_mag
    if not inv > 0:
        raise UnphysicalFitError(
            f"unphysical fit: 1/Q_int = {inv:.3e} <= 0 (Q_l={q_l:.6g}, |Q_c|={q_c_mag:.6g}, phi={phi:.4f})"
        )
    return 1.0 / inv


@dataclass(frozen=True)
class NotchParams:
    """Notch resonance plus background. ``phi`` is wrapped on construction."""

    f_r: float
    Q_l: float
    Q_c_mag: float
    phi: float = 0.0
    a: float = 1.0
    alpha0: float = 0.0
    tau: float = 0.0

    def __post_init__(self):
        for name in ("f_r", "Q_l", "Q_c_mag", "a"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ParameterDomainError(f"{name} must be finite and positive, got {v!r}")
        for name in ("phi", "alpha0", "tau"):
            if not np.isfinite(getattr(self, name)):
                raise ParameterDomainError(f"{name} must be finite")
        object.__setattr__(self, "phi", float(wrap_phase(self.phi)))
        # rejects parameter sets without a positive internal Q
        diameter_correct(self.Q_l, self.Q_c_mag, self.phi)

    @property
    def q_int(self) -> float:
        return diameter_correct(self.Q_l, self.Q_c_mag, self.phi)

    @classmethod
    def from_q_int(cls, f_r, q_int, q_c_mag, phi=0.0, **background):
        """Build from internal rather than loaded quality factor."""
        q_l = 1.0 / (1.0 / q_int + math.cos(phi) / q_c_mag)
        return cls(f_r=f_r, Q_l=q_l, Q_c_mag=q_c_mag, phi=phi, **background)

    def with_background(self, a=None, alpha0=None, tau=None) -> NotchParams:
        return replace(
            self,
            a=self.a if a is None else a,
            alpha0=self.alpha0 if alpha0 is None else alpha0,
            tau=self.tau if tau is None else tau,
        )

    def as_dict(self) -> dict:
        return {
            "f_r": self.f_r, "Q_l": self.Q_l, "Q_c_mag": self.Q_c_mag, "phi": self.phi,
            "a": self.a, "alpha0": self.alpha0, "tau": self.tau,
        }


@dataclass(frozen=True)
class DuffingParams:
    """Kerr-nonlinear mode; all rates in rad/s, ``beta_kerr`` in rad/s per photon."""

    omega_r: float
    kappa: float
    kappa_c: float
    beta_kerr: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        for name in ("omega_r", "kappa", "kappa_c"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ParameterDomainError(f"{name} must be finite and positive, got {v!r}")
        if not (np.isfinite(self.beta_kerr) and np.isfinite(self.phi)):
            raise ParameterDomainError("beta_kerr and phi must be finite")
        object.__setattr__(self, "phi", float(wrap_phase(self.phi)))
        if self.kappa_int < 0:
            raise ParameterDomainError(
                f"kappa_int = kappa - kappa_c*cos(phi) = {self.kappa_int:.4e} < 0"
            )

    @property
    def kappa_int(self) -> float:
        return self.kappa - self.kappa_c * math.cos(self.phi)

    @property
    def f_r(self) -> float:
        return self.omega_r / (2 * math.pi)

    @property
    def Q_l(self) -> float:
        return self.omega_r / self.kappa

    @property
    def Q_c_mag(self) -> float:
        return self.omega_r / self.kappa_c

    @property
    def q_int(self) -> float:
        if self.kappa_int <= 0:
            raise UnphysicalFitError("kappa_int <= 0: internal Q undefined")
        return self.omega_r / self.kappa_int

    @classmethod
    def from_notch(cls, p: NotchParams, beta_kerr: float = 0.0) -> DuffingParams:
        omega_r = 2 * math.pi * p.f_r
        return cls(omega_r=omega_r, kappa=omega_r / p.Q_l, kappa_c=omega_r / p.Q_c_mag,
                   beta_kerr=beta_kerr, phi=p.phi)

    def to_notch(self, a=1.0, alpha0=0.0, tau=0.0) -> NotchParams:
        """Linear notch with the same f_r, Q_l, |Q_c|, phi (drops the Kerr term)."""
        return NotchParams(self.f_r, self.Q_l, self.Q_c_mag, self.phi, a, alpha0, tau)


def _check_freq(f):
    f = np.asarray(f, dtype=float)
    if np.any(~np.isfinite(f)) or np.any(f <= 0):
        raise ParameterDomainError("frequencies must be finite and positive")
    return f


def eval_ideal_notch(f, p: NotchParams):
    """``1 - (Q_l/|Q_c|) e^{i phi} / (1 + 2i Q_l (f/f_r - 1))``; background ignored."""
    f = _check_freq(f)
    x = 2.0 * p.Q_l * (f / p.f_r - 1.0)
    return 1.0 - (p.Q_l / p.Q_c_mag) * np.exp(1j * p.phi) / (1.0 + 1j * x)


def eval_full_notch(f, p: NotchParams):
    """Notch response times the background ``a e^{i alpha0} e^{-2 pi i f tau}``."""
    f = _check_freq(f)
    return p.a * np.exp(1j * (p.alpha0 - 2.0 * math.pi * f * p.tau)) * eval_ideal_notch(f, p)


# --- cubic solver -----------------------------------------------------------

_NEWTON_STEPS = 4


def cubic_real_roots(b, c, d):
    """Real roots of the monic cubic ``x^3 + b x^2 + c x + d`` (vectorized).

    Returns an array of shape ``(..., 3)`` sorted ascending, with NaN where a
    root is complex. Closed-form (trigonometric / Cardano) roots are polished
    with a few Newton steps on the monic polynomial.
    """
    b, c, d = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (b, c, d)))
    shift = b / 3.0
    p = c - b * shift
    q = (2.0 * shift * shift - c) * shift + d
    half_q = 0.5 * q
    third_p = p / 3.0
    disc = half_q * half_q + third_p ** 3

    roots = np.full(b.shape + (3,), np.nan)

    one = disc > 0
    if np.any(one):
        hq = half_q[one]
        sq = np.sqrt(disc[one])
        # pick the branch that avoids cancellation
        u = np.cbrt(-hq - np.copysign(sq, hq))
        tp = third_p[one]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(u != 0, u - tp / u, 0.0)
        roots[one, 0] = t - shift[one]

    three = ~one
    if np.any(three):
        tp = third_p[three]
        hq = half_q[three]
        m = np.sqrt(np.maximum(-tp, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            cos_arg = np.where(m > 0, -hq / (m ** 3), 0.0)
        theta = np.arccos(np.clip(cos_arg, -1.0, 1.0)) / 3.0
        for k in range(3):
            roots[three, k] = 2.0 * m * np.cos(theta - 2.0 * math.pi * k / 3.0) - shift[three]

    # The largest-magnitude real root is well conditioned in closed form; the
    # other two come from the deflated quadratic, which avoids the cancellation
    # that wrecks small roots when |b| dominates.
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        big = np.nanargmax(np.where(np.isnan(roots), -np.inf, np.abs(roots)), axis=-1)
        r = np.take_along_axis(roots, big[..., None], axis=-1)[..., 0]
        ok = np.isfinite(r) & (r != 0)
        q0 = np.where(ok, -d / r, np.nan)
        q1_syn = b + r
        q1_vieta = (q0 - c) / r
        err_syn = np.maximum(np.abs(b), np.abs(r))
        err_vieta = (np.abs(q0) + np.abs(c)) / np.abs(r)
        q1 = np.where(err_vieta < err_syn, q1_vieta, q1_syn)
        disc2 = q1 * q1 - 4.0 * q0
        # a slightly negative discriminant within rounding is a double root
        tol = 1e-10 * (q1 * q1 + 4.0 * np.abs(q0))
        disc2 = np.where((disc2 < 0) & (disc2 >= -tol), 0.0, disc2)
        sq = np.sqrt(np.where(disc2 >= 0, disc2, np.nan))
        qq = -0.5 * (q1 + np.copysign(sq, q1))
        x1 = qq
        x2 = np.where(qq != 0, q0 / qq, 0.0)
        defl = np.stack([r, x1, x2], axis=-1)
        roots = np.where(ok[..., None], defl, roots)

    bb, cc, dd = b[..., None], c[..., None], d[..., None]
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        for _ in range(_NEWTON_STEPS):
            fx = ((roots + bb) * roots + cc) * roots + dd
            dfx = (3.0 * roots + 2.0 * bb) * roots + cc
            step = np.where(dfx != 0, fx / dfx, 0.0)
            # Newton is only trusted while it shrinks the residual
            cand = roots - step
            fc = ((cand + bb) * cand + cc) * cand + dd
            roots = np.where(np.abs(fc) <= np.abs(fx), cand, roots)
    return np.sort(roots, axis=-1)


def smallest_positive_root(a3, a2, a1, a0):
    """Smallest real positive root of ``a3 n^3 + a2 n^2 + a1 n + a0`` (vectorized).

    Requires ``a3 >= 0``. The variable is rescaled as ``x = sqrt(a3) n`` so the
    monic cubic stays well conditioned for small ``a3``. Where ``a3 == 0`` the
    quadratic/linear remainder is solved directly. Entries with ``a0 == 0``
    return 0.

    Raises
    ------
    RootFindingError
        If some entry has no positive real root or the root is not finite.
    """
    a3, a2, a1, a0 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a3, a2, a1, a0)))
    if np.any(a3 < 0):
        raise ParameterDomainError("leading coefficient must be non-negative")
    out = np.full(a3.shape, np.nan)

    zero = a0 == 0
    out[zero] = 0.0

    lin = (a3 == 0) & ~zero
    if np.any(lin):
        q2, q1, q0 = a2[lin], a1[lin], a0[lin]
        with np.errstate(divide="ignore", invalid="ignore"):
            disc = q1 * q1 - 4 * q2 * q0
            sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
            # stable quadratic roots; both candidates, keep smallest positive
            qq = -0.5 * (q1 + np.copysign(sq, q1))
            r1 = np.where(q2 != 0, qq / q2, np.nan)
            r2 = np.where(qq != 0, q0 / qq, np.nan)
            r_lin = np.where(q1 != 0, -q0 / q1, np.nan)
        cands = np.stack([np.where(q2 == 0, r_lin, r1), np.where(q2 == 0, np.nan, r2)], axis=-1)
        cands = np.where(cands > 0, cands, np.inf)
        out[lin] = np.min(cands, axis=-1)

    cub = (a3 > 0) & ~zero
    if np.any(cub):
        s = np.sqrt(a3[cub])
        xr = cubic_real_roots(a2[cub] / s, a1[cub], a0[cub] * s)
        xr = np.where(xr > 0, xr, np.inf)
        out[cub] = np.min(xr, axis=-1) / s

    bad = ~np.isfinite(out)
    if np.any(bad):
        raise RootFindingError(
            f"no positive real root for {int(bad.sum())} of {out.size} coefficient sets"
        )
    return out if out.ndim else float(out)


# --- Duffing steady state -----------------------------------------------------

def duffing_photon_number(delta, p: DuffingParams, flux):
    """Intracavity photon number for detuning ``delta = omega - omega_r`` (rad/s).

    Solves ``beta^2 n^3 - 2 delta beta n^2 + (delta^2 + kappa^2/4) n - (kappa_c/2) flux = 0``
    for its smallest positive root. The drive term uses ``kappa_c/2``: a notch
    resonator leaks half its coupling rate into each feedline direction, which
    is what makes the beta = 0 limit coincide with the linear notch model and
    with the circulating-power photon number.
    """
    flux = np.asarray(flux, dtype=float)
    if np.any(flux < 0) or np.any(~np.isfinite(flux)):
        raise ParameterDomainError("photon flux must be finite and non-negative")
    delta = np.asarray(delta, dtype=float)
    drive = 0.5 * p.kappa_c * flux
    lin = delta * delta + 0.25 * p.kappa * p.kappa
    if p.beta_kerr == 0.0:
        n = np.broadcast_to(drive / lin, np.broadcast(delta, flux).shape).copy()
        return n if n.ndim else float(n)
    b = p.beta_kerr
    return smallest_positive_root(b * b, -2.0 * delta * b, lin, -drive)


def duffing_peak_photon_number(p: DuffingParams, flux) -> float:
    """Photon number at the Kerr-shifted resonance, ``2 kappa_c flux / kappa^2``."""
    return duffing_photon_number(0.0, replace(p, beta_kerr=0.0), flux)


def eval_duffing_s21(f, p: DuffingParams, flux: float):
    """Ideal notch transmission of a driven Kerr mode at probe frequencies ``f`` (Hz).

    ``S21 = 1 - sqrt(kappa_c/2) |alpha| e^{-i psi} e^{i phi} / sqrt(flux)`` with
    ``|alpha|^2 = n`` from :func:`duffing_photon_number` and
    ``psi = arctan2(2 (delta - beta n), kappa)``.
    """
    if not flux > 0:
        raise ParameterDomainError("photon flux must be positive")
    f = _check_freq(f)
    delta = 2.0 * math.pi * f - p.omega_r
    n = duffing_photon_number(delta, p, flux)
    psi = np.arctan2(2.0 * (delta - p.beta_kerr * n), p.kappa)
    amp = math.sqrt(0.5 * p.kappa_c / flux) * np.sqrt(n)
    return 1.0 - amp * np.exp(1j * (p.phi - psi))
