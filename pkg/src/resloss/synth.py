"""Deterministic synthetic traces and loss surfaces with known ground truth.

Random numbers come from numpy's ``PCG64`` bit generator seeded through
``SeedSequence(seed, spawn_key=...)``. Each grid point of a loss surface gets
its own spawn key ``(resonator_index, temperature_index, power_index)``, so
points can be generated in any order or in parallel with identical output.
Noise is i.i.d. circular complex Gaussian: real and imaginary parts are each
``N(0, sigma^2/2)``, so ``sigma`` is the RMS of ``|noise|``. With ``snr_db``
given, ``sigma = a * 10**(-snr_db/20)`` relative to the off-resonance level
``a``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigurationError, ParameterDomainError
from .fitting import ComplexTrace
from .loss import LossSurface, PILossSeries, TLSModelParams, total_inverse_q
from .power import (
    AttenuationCurve,
    CalibrationModel,
    circulating_power,
    dbm_to_watt,
    photon_flux,
    photon_number_linear,
)
from .scattering import (
    DuffingParams,
    NotchParams,
    eval_duffing_s21,
    eval_full_notch,
    smallest_positive_root,
)

__all__ = [
    "RNG_ALGORITHM",
    "ResonatorTruth",
    "SynthScenario",
    "SurfacePoint",
    "rng_for",
    "complex_noise",
    "frequency_grid",
    "generate_trace",
    "solve_operating_point",
    "generate_loss_surface",
    "default_scenario",
    "PRESETS",
    "DEFAULT_TEMPERATURES",
    "DEFAULT_POWERS_DBM",
]

RNG_ALGORITHM = f"numpy.random.PCG64 via SeedSequence (numpy {np.__version__})"

DEFAULT_TEMPERATURES = (0.01, 0.05, 0.1, 0.2, 0.3, 0.4)
DEFAULT_POWERS_DBM = tuple(float(p) for p in range(-80, 11, 10))


def rng_for(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(key))))


def complex_noise(rng: np.random.Generator, n: int, sigma: float) -> np.ndarray:
    if sigma == 0:
        return np.zeros(n, dtype=complex)
    re = rng.standard_normal(n)
    im = rng.standard_normal(n)
    return (re + 1j * im) * (sigma / math.sqrt(2.0))


@dataclass(frozen=True)
class ResonatorTruth:
    """Ground truth of one resonator on a chip for loss-surface generation."""

    name: str
    tls: TLSModelParams
    pi: PILossSeries
    q_c: float
    phi: float = 0.0
    # relative frequency shift per temperature, lowest temperature = 0
    fr_shift: PILossSeries | None = None

    @property
    def f_r(self) -> float:
        return self.tls.f_r

    def f_r_at(self, T: float) -> float:
        if self.fr_shift is None:
            return self.f_r
        return self.f_r * (1.0 - float(self.fr_shift.at(T, interpolate=True)))


@dataclass
class SynthScenario:
    """Everything needed to regenerate a synthetic dataset from a seed.

    Single traces use ``truth`` (with ``flux`` for Duffing truth) on ``freqs``
    or on an automatic grid of ``n_points`` over ``+-span_linewidths``.
    Loss surfaces use ``resonators`` on the ``temperatures`` x ``powers_dbm``
    grid. ``fr_shift`` in :class:`ResonatorTruth` is stored as a positive
    downward shift, so values of 1e-5 mean ``f_r(T) = f_r (1 - 1e-5)``.
    """

    name: str = "custom"
    wafer: str = ""
    truth: NotchParams | DuffingParams | None = None
    flux: float | None = None
    freqs: np.ndarray | None = None
    resonators: list = field(default_factory=list)
    temperatures: tuple = DEFAULT_TEMPERATURES
    powers_dbm: tuple = DEFAULT_POWERS_DBM
    attenuation: AttenuationCurve = field(
        default_factory=lambda: AttenuationCurve(np.array([1e9, 12e9]), np.array([-62.0, -74.0])))
    calibration: CalibrationModel = field(default_factory=CalibrationModel)
    background: tuple = (0.8, 0.3, 2e-9)
    n_points: int = 801
    span_linewidths: float = 10.0
    snr_db: float | None = None
    noise_amplitude: float = 0.0
    nonlinear_damping: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.snr_db is None and self.noise_amplitude < 0:
            raise ParameterDomainError("noise amplitude must be >= 0")
        if not self.temperatures or not self.powers_dbm:
            raise ParameterDomainError("temperature and power grids must be non-empty")
        if self.n_points < 32:
            raise ParameterDomainError("need at least 32 points per trace")

    def noise_sigma(self, a: float) -> float:
        if self.snr_db is not None:
            return a * 10.0 ** (-self.snr_db / 20.0)
        return self.noise_amplitude

    def resonator(self, key) -> tuple[int, ResonatorTruth]:
        if isinstance(key, int):
            return key, self.resonators[key]
        for i, r in enumerate(self.resonators):
            if r.name == key:
                return i, r
        raise ConfigurationError(f"no resonator named {key!r} in scenario {self.name!r}")


def frequency_grid(f_r: float, q_l: float, span_linewidths: float, n_points: int) -> np.ndarray:
    lw = f_r / q_l
    return np.linspace(f_r - span_linewidths * lw, f_r + span_linewidths * lw, n_points)


def _duffing_dissipative_s21(f, p: DuffingParams, flux, gamma):
    """Kerr mode whose internal decay grows as ``kappa + gamma n``.

    Deforms the resonance circle ("caving in") on top of the bistable jump.
    """
    delta = 2.0 * math.pi * np.asarray(f, dtype=float) - p.omega_r
    b = p.beta_kerr
    a3 = b * b + 0.25 * gamma * gamma
    a2 = -2.0 * delta * b + 0.5 * p.kappa * gamma
    a1 = delta * delta + 0.25 * p.kappa * p.kappa
    n = smallest_positive_root(np.full(delta.shape, a3), a2, a1, np.full(delta.shape, -0.5 * p.kappa_c * flux))
    kap = p.kappa + gamma * n
    return 1.0 - 0.5 * p.kappa_c * np.exp(1j * p.phi) / (0.5 * kap + 1j * (delta - b * n))


def generate_trace(scenario: SynthScenario, *, seed: int | None = None, key: tuple = (),
                   power_dbm: float | None = None, temperature_k: float | None = None,
                   metadata: dict | None = None) -> ComplexTrace:
    """Model of ``scenario.truth`` on its grid plus seeded complex noise."""
    truth = scenario.truth
    if truth is None:
        raise ConfigurationError("scenario has no single-trace truth")
    seed = scenario.seed if seed is None else seed
    if isinstance(truth, NotchParams):
        f = scenario.freqs if scenario.freqs is not None else \
            frequency_grid(truth.f_r, truth.Q_l, scenario.span_linewidths, scenario.n_points)
        z = eval_full_notch(f, truth)
        a = truth.a
    else:
        if not (scenario.flux and scenario.flux > 0):
            raise ConfigurationError("Duffing truth needs a positive photon flux")
        f = scenario.freqs if scenario.freqs is not None else \
            frequency_grid(truth.f_r, truth.Q_l, scenario.span_linewidths, scenario.n_points)
        a, alpha0, tau = scenario.background
        if scenario.nonlinear_damping:
            s = _duffing_dissipative_s21(f, truth, scenario.flux, scenario.nonlinear_damping)
        else:
            s = eval_duffing_s21(f, truth, scenario.flux)
        z = a * np.exp(1j * (alpha0 - 2.0 * math.pi * f * tau)) * s
    f = np.asarray(f, dtype=float)
    z = z + complex_noise(rng_for(seed, *key), f.size, scenario.noise_sigma(a))
    return ComplexTrace(f, z, applied_power=power_dbm, stage_temperature=temperature_k,
                        metadata=dict(metadata or {}))


@dataclass(frozen=True)
class SurfacePoint:
    """Ground truth at one (T, P) grid node."""

    temperature_k: float
    power_dbm: float
    p_on_chip_dbm: float
    n_ph: float
    q_int: float
    params: NotchParams


def solve_operating_point(res: ResonatorTruth, T: float, p_on_chip_w: float) -> tuple[float, float]:
    """Self-consistent (n_ph, Q_int): photon number sets the loss, loss sets n_ph."""
    f_r = res.f_r

    def rhs(n):
        qi = 1.0 / float(total_inverse_q(T, n, res.tls, res.pi, interpolate=True))
        return float(photon_number_linear(circulating_power(p_on_chip_w, qi, res.q_c), f_r)), qi

    lo = rhs(0.0)[0]
    hi = float(photon_number_linear(p_on_chip_w * res.q_c / math.pi, f_r))
    if lo <= 0:
        return 0.0, rhs(0.0)[1]
    if hi <= lo * (1 + 1e-15):
        return lo, rhs(lo)[1]
    g = lambda x: x - math.log(rhs(math.exp(x))[0])  # noqa: E731
    x = brentq(g, math.log(lo), math.log(hi), xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
    n = math.exp(x)
    return n, rhs(n)[1]


def generate_loss_surface(scenario: SynthScenario, resonator=0, *, seed: int | None = None,
                          with_traces: bool = True):
    """Ground-truth loss surface and the synthetic traces behind it.

    Returns ``(surface, traces, points)`` where ``surface`` holds the true
    (T, n_ph, 1/Q_int) values with zero stderr, ``traces`` the noisy sweeps
    (``[]`` when ``with_traces`` is False) and ``points`` the per-node truth.
    """
    seed = scenario.seed if seed is None else seed
    ridx, res = scenario.resonator(resonator)
    a, alpha0, tau = scenario.background
    temps, n_ph, invq, powers = [], [], [], []
    traces, points = [], []
    for ti, T in enumerate(scenario.temperatures):
        f_r = res.f_r_at(T)
        for pi_, P in enumerate(scenario.powers_dbm):
            p_chip_dbm = float(P + scenario.attenuation(f_r))
            n, qi = solve_operating_point(res, T, float(dbm_to_watt(p_chip_dbm)))
            params = NotchParams.from_q_int(f_r, qi, res.q_c, res.phi, a=a, alpha0=alpha0, tau=tau)
            temps.append(T)
            n_ph.append(n)
            invq.append(1.0 / qi)
            powers.append(P)
            points.append(SurfacePoint(T, P, p_chip_dbm, n, qi, params))
            if with_traces:
                sub = replace(scenario, truth=params, freqs=None)
                traces.append(generate_trace(
                    sub, seed=seed, key=(ridx, ti, pi_), power_dbm=P, temperature_k=T,
                    metadata={"resonator": res.name, "wafer": scenario.wafer},
                ))
    surface = LossSurface(np.array(temps), np.array(n_ph), np.array(invq), np.zeros(len(temps)),
                          res.name, res.f_r, np.array(powers))
    return surface, traces, points


def duffing_flux_for(scenario: SynthScenario, power_dbm: float, f_r: float) -> float:
    return float(photon_flux(dbm_to_watt(power_dbm + scenario.attenuation(f_r)), f_r))


# --- presets ------------------------------------------------------------------------

def _wafer(name, delta_tls, alpha, beta, d_sat, pi_fn, shift_fn, q_cs, phis, snr_db):
    temps = np.array(DEFAULT_TEMPERATURES)
    res = []
    for f_r, q_c, phi in zip((7e9, 7.5e9, 8e9, 8.5e9), q_cs, phis):
        tls = TLSModelParams(delta_tls, alpha, beta, d_sat, f_r)
        res.append(ResonatorTruth(
            name=f"{name}-{f_r / 1e9:g}GHz",
            tls=tls,
            pi=PILossSeries(temps, pi_fn(temps)),
            q_c=q_c,
            phi=phi,
            fr_shift=PILossSeries(temps, shift_fn(temps)),
        ))
    return SynthScenario(name=name, wafer=name, resonators=res, snr_db=snr_db)


def _flat(v):
    return lambda t: np.full(t.shape, v)


def _rising(base, top, shift_top):
    return (lambda t: base + top * (t / 0.4) ** 4), (lambda t: shift_top * ((t ** 4 - t[0] ** 4) / 0.4 ** 4))


def _preset_a():
    return _wafer("wafer-like-A", 1.6e-6, 0.5, 1.0, 1e4, _flat(3e-7),
                  lambda t: 1e-6 * (t ** 4 - t[0] ** 4) / 0.4 ** 4,
                  (4e5, 6e5, 1e6, 2e6), (0.05, -0.1, 0.15, 0.0), 40.0)


def _preset_b():
    return _wafer("wafer-like-B", 6.6e-7, 0.5, 1.0, 1e4, _flat(2.5e-7),
                  lambda t: 5e-7 * (t ** 4 - t[0] ** 4) / 0.4 ** 4,
                  (6e5, 8e5, 2e6, 4e4), (0.05, -0.1, 0.15, 0.0), 40.0)


def _preset_c():
    pi_fn, shift_fn = _rising(3e-7, 2.5e-6, 1e-5)
    return _wafer("wafer-like-C", 1.3e-6, 0.5, 1.0, 1e4, pi_fn, shift_fn,
                  (5e5, 8e5, 1.5e6, 3e6), (0.05, -0.1, 0.15, 0.0), 40.0)


def _preset_d():
    pi_fn, shift_fn = _rising(3e-7, 3e-6, 1.2e-5)
    return _wafer("wafer-like-D", 1.5e-6, 0.5, 1.0, 1e4, pi_fn, shift_fn,
                  (5e5, 1e6, 2e6, 4e4), (0.05, -0.1, 0.15, 0.0), 40.0)


PRESETS = {
    "wafer-like-A": _preset_a,
    "wafer-like-B": _preset_b,
    "wafer-like-C": _preset_c,
    "wafer-like-D": _preset_d,
}


def default_scenario(name: str) -> SynthScenario:
    """Four-resonator chip presets at 7, 7.5, 8 and 8.5 GHz.

    B is the low-loss film (single-photon Q_int near 1.1e6); C and D have a
    power-independent loss rising steeply with temperature and a quasiparticle
    frequency shift of order 1e-5 at 400 mK. On B and D the 8.5 GHz resonator
    is strongly overcoupled (Q_c = 4e4). On B every node has Q_int >= 10 Q_c,
    so the resonator is excluded; on D the hotter, lossier nodes fall below
    the ratio and only part of the grid is excluded.
    """
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigurationError(
            f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}"
        ) from None
