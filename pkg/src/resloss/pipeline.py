"""Batch analysis: ingest sweeps, calibrate, fit traces, fit loss surfaces.

Every stage records failures per item and carries on; a malformed file only
affects its own record. Trace fits may run in worker processes; results are
collected in input order, so the outcome does not depend on ``jobs``.
"""
from __future__ import annotations

import glob
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .errors import (
    ConfigurationError,
    DataQualityError,
    FitError,
    NoResonanceError,
    ParameterDomainError,
    ParseError,
    ReslossError,
    RootFindingError,
)
from .fitting import DuffingFit, FitOptions, NotchFit, fit_duffing, fit_trace
from .io import read_attenuation_csv, read_snr_csv, read_trace
from .loss import (
    LossFitOptions,
    LossSurface,
    fit_loss_surface,
    fractional_frequency_shift,
    single_photon_inverse_q,
)
from .power import (
    AttenuationCurve,
    CalibrationModel,
    calibrate_attenuation,
    circulating_power,
    dbm_to_watt,
    photon_flux,
    photon_number_linear,
)

__all__ = [
    "RunConfig",
    "TraceRecord",
    "ResonatorResult",
    "Results",
    "load_config",
    "resolve_inputs",
    "build_calibration",
    "ingest",
    "process_trace",
    "run_pipeline",
]

log = logging.getLogger(__name__)

MODELS = ("linear", "duffing", "auto")


@dataclass
class RunConfig:
    """Run configuration; relative paths are resolved against ``base_dir``."""

    inputs: list = field(default_factory=list)
    calibration: dict = field(default_factory=dict)
    base_temperature_k: float = 0.01
    output_dir: str = "out"
    jobs: int | None = None
    seed: int = 0
    fit: dict = field(default_factory=dict)
    loss: dict = field(default_factory=dict)
    films: list = field(default_factory=list)
    synth: dict = field(default_factory=dict)
    base_dir: str = "."

    def __post_init__(self):
        if isinstance(self.inputs, str):
            self.inputs = [self.inputs]
        if not self.base_temperature_k > 0:
            raise ConfigurationError("base_temperature_k must be positive")
        if self.jobs is not None and int(self.jobs) < 1:
            raise ConfigurationError("jobs must be >= 1")
        model = self.fit.get("model", "linear")
        if model not in MODELS:
            raise ConfigurationError(f"fit.model must be one of {MODELS}, got {model!r}")
        self.fit_options()
        self.loss_options()

    @property
    def model(self) -> str:
        return self.fit.get("model", "linear")

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def fit_options(self) -> FitOptions:
        return _options(FitOptions, {k: v for k, v in self.fit.items() if k != "model"}, "fit")

    def loss_options(self) -> LossFitOptions:
        return _options(LossFitOptions, self.loss, "loss")

    def n_jobs(self) -> int:
        return int(self.jobs) if self.jobs else (os.cpu_count() or 1)

    def as_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "base_dir"}
        return d


def _options(cls, values: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"unknown {section} option(s): {', '.join(unknown)}")
    vals = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return cls(**vals)
    except TypeError as exc:
        raise ConfigurationError(f"bad {section} options: {exc}") from None


_TOP_KEYS = {f.name for f in fields(RunConfig)} - {"base_dir"}


def load_config(path, **overrides) -> RunConfig:
    """Read a YAML run configuration. ``overrides`` replace top-level keys."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: invalid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    unknown = sorted(set(data) - _TOP_KEYS)
    if unknown:
        raise ConfigurationError(f"{path}: unknown key(s): {', '.join(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**data, base_dir=str(path.parent))


def resolve_inputs(config: RunConfig) -> list[str]:
    """Expand globs (sorted, de-duplicated); paths are reported as written, relative to the config."""
    out, seen = [], set()
    for pattern in config.inputs:
        full = str(config.path(pattern))
        matches = sorted(glob.glob(full)) if glob.has_magic(full) else [full]
        for m in matches:
            if not os.path.exists(m):
                raise ConfigurationError(f"input does not exist: {pattern}")
            rel = os.path.relpath(m, config.base_dir)
            if rel not in seen:
                seen.add(rel)
                out.append(rel)
    if not out:
        raise ConfigurationError("no inputs")
    return out


def build_calibration(config: RunConfig) -> CalibrationModel:
    c = dict(config.calibration)
    known = {"snr_file", "attenuation_file", "attenuation_db", "hemt_noise_temperature_k",
             "if_bandwidth_hz", "post_sample_offset_db"}
    unknown = sorted(set(c) - known)
    if unknown:
        raise ConfigurationError(f"unknown calibration option(s): {', '.join(unknown)}")
    try:
        cal = CalibrationModel(float(c.get("hemt_noise_temperature_k", 2.0)),
                               float(c.get("if_bandwidth_hz", 5e3)),
                               float(c.get("post_sample_offset_db", 2.0)))
    except ParameterDomainError as exc:
        raise ConfigurationError(str(exc)) from None
    sources = [k for k in ("snr_file", "attenuation_file", "attenuation_db") if k in c]
    if len(sources) != 1:
        raise ConfigurationError("calibration needs exactly one of snr_file, attenuation_file, attenuation_db")
    src = sources[0]
    try:
        if src == "snr_file":
            p = config.path(c[src])
            if not p.exists():
                raise ConfigurationError(f"calibration file does not exist: {c[src]}")
            freqs, snr = read_snr_csv(p)
            curve = calibrate_attenuation(freqs, snr, cal)
        elif src == "attenuation_file":
            p = config.path(c[src])
            if not p.exists():
                raise ConfigurationError(f"calibration file does not exist: {c[src]}")
            curve = read_attenuation_csv(p)
        else:
            curve = AttenuationCurve.constant(float(c[src]))
    except (ParseError, DataQualityError, ParameterDomainError) as exc:
        raise ConfigurationError(f"calibration: {exc}") from None
    return replace(cal, attenuation_curve=curve)


def ingest(path, **overrides):
    """All traces in one file (one per file for the supported formats)."""
    return [read_trace(path, **overrides)]


# --- per-trace stage -----------------------------------------------------------------

@dataclass
class TraceRecord:
    source: str
    status: str = "ok"  # ok | failed
    error: str | None = None
    resonator: str | None = None
    power_dbm: float | None = None
    temperature_k: float | None = None
    p_on_chip_dbm: float | None = None
    model: str | None = None
    f_r_hz: float | None = None
    f_r_stderr_hz: float | None = None
    q_loaded: float | None = None
    q_loaded_stderr: float | None = None
    q_c: float | None = None
    q_c_stderr: float | None = None
    phi_rad: float | None = None
    q_int: float | None = None
    q_int_stderr: float | None = None
    kerr_shift_hz: float | None = None
    n_ph: float | None = None
    coupling_regime: str | None = None
    residual_rms: float | None = None
    noise_rms: float | None = None
    reliable: bool | None = None
    used_in_loss_fit: bool = False
    omitted_reason: str | None = None

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _is_reliable(fit: NotchFit, opt: FitOptions) -> bool:
    return fit.residual_rms <= opt.unreliable_noise_factor * fit.noise_rms + opt.unreliable_floor


def process_trace(source: str, abs_path: str, cal: CalibrationModel, opt: FitOptions,
                  model: str = "linear"):
    """Ingest and fit one file. Never raises for data problems; returns (record, trace or None, fit or None)."""
    rec = TraceRecord(source=source)
    try:
        (trace,) = ingest(abs_path)
    except (ParseError, ParameterDomainError, OSError, UnicodeDecodeError) as exc:
        rec.status, rec.error = "failed", f"ingest: {exc}"
        return rec, None, None
    rec.resonator = trace.metadata.get("resonator")
    if rec.resonator is not None:
        rec.resonator = str(rec.resonator)
    rec.power_dbm = trace.applied_power
    rec.temperature_k = trace.stage_temperature
    try:
        fit: NotchFit | DuffingFit = fit_trace(trace, opt)
        if model == "duffing" or (model == "auto" and not _is_reliable(fit, opt)):
            flux = photon_flux(dbm_to_watt(cal.on_chip_power_dbm(trace.applied_power, fit.f_r)), fit.f_r)
            try:
                dfit = fit_duffing(trace, float(flux), options=opt)
                if model == "duffing" or dfit.residual_rms < fit.residual_rms:
                    fit = dfit
            except (FitError, ParameterDomainError, RootFindingError):
                if model == "duffing":
                    raise
    except (FitError, NoResonanceError, ParameterDomainError, RootFindingError, ConfigurationError) as exc:
        rec.status, rec.error = "failed", f"fit: {type(exc).__name__}: {exc}"
        return rec, trace, None
    p_chip = float(cal.on_chip_power_dbm(trace.applied_power, fit.f_r))
    rec.p_on_chip_dbm = p_chip
    rec.model = fit.model
    rec.q_int = float(fit.q_int)
    rec.q_int_stderr = fit.stderr.get("q_int")
    rec.q_c = float(fit.q_c)
    rec.coupling_regime = fit.coupling_regime
    rec.residual_rms = fit.residual_rms
    rec.noise_rms = fit.noise_rms
    rec.f_r_hz = float(fit.f_r)
    if isinstance(fit, DuffingFit):
        p = fit.params
        two_pi = 2.0 * math.pi
        rec.f_r_stderr_hz = fit.stderr["omega_r"] / two_pi
        rec.q_loaded = p.Q_l
        rec.q_c_stderr = p.Q_c_mag * fit.stderr["kappa_c"] / p.kappa_c
        rec.q_loaded_stderr = p.Q_l * math.hypot(fit.stderr["kappa"] / p.kappa, fit.stderr["omega_r"] / p.omega_r)
        rec.phi_rad = p.phi
        rec.kerr_shift_hz = p.beta_kerr * fit.peak_photon_number / two_pi
        rec.n_ph = float(fit.peak_photon_number)
        rec.reliable = fit.reliable
    else:
        p = fit.params
        rec.f_r_stderr_hz = fit.stderr["f_r"]
        rec.q_loaded = p.Q_l
        rec.q_loaded_stderr = fit.stderr["Q_l"]
        rec.q_c_stderr = fit.stderr["Q_c_mag"]
        rec.phi_rad = p.phi
        rec.n_ph = float(photon_number_linear(circulating_power(dbm_to_watt(p_chip), fit.q_int, fit.q_c),
                                              fit.f_r))
        rec.reliable = _is_reliable(fit, opt)
    return rec, trace, fit


def _worker(args):
    return process_trace(*args)


# --- per-resonator stage -------------------------------------------------------------

@dataclass
class ResonatorResult:
    name: str
    status: str = "fitted"  # fitted | excluded | failed
    error: str | None = None
    f_r_hz: float | None = None
    n_traces: int = 0
    n_used: int = 0
    tls: dict | None = None
    delta_pi: list = field(default_factory=list)
    single_photon_q_int: float | None = None
    frequency_shift: list = field(default_factory=list)
    goodness: dict | None = None
    high_power_excluded: list = field(default_factory=list)
    surface: LossSurface | None = field(default=None, repr=False)
    fit: object = field(default=None, repr=False)

    def as_dict(self) -> dict:
        skip = {"surface", "fit"}
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name not in skip}


def _group_name(rec: TraceRecord) -> str:
    if rec.resonator:
        return rec.resonator
    return f"{rec.f_r_hz / 1e9:.3f}GHz"


def _cluster_unlabelled(records):
    # unlabelled traces: group fitted frequencies within 1e-3 relative
    centres: list[float] = []
    for r in records:
        if r.resonator or r.f_r_hz is None:
            continue
        for c in centres:
            if abs(r.f_r_hz - c) <= 1e-3 * c:
                r.resonator = f"{c / 1e9:.3f}GHz"
                break
        else:
            centres.append(r.f_r_hz)
            r.resonator = f"{r.f_r_hz / 1e9:.3f}GHz"


def analyse_resonator(name: str, recs: list[TraceRecord], config: RunConfig) -> ResonatorResult:
    out = ResonatorResult(name=name, n_traces=len(recs))
    ok = [r for r in recs if r.status == "ok"]
    if not ok:
        out.status, out.error = "failed", "no successful trace fits"
        return out
    out.f_r_hz = float(np.median([r.f_r_hz for r in ok]))

    # frequency shift: lowest-power successful trace per temperature
    per_t: dict[float, TraceRecord] = {}
    for r in ok:
        cur = per_t.get(r.temperature_k)
        if cur is None or r.power_dbm < cur.power_dbm:
            per_t[r.temperature_k] = r
    ts, fr = zip(*sorted((t, r.f_r_hz) for t, r in per_t.items()))
    ts_s, shift = fractional_frequency_shift(ts, fr)
    out.frequency_shift = [
        {"temperature_k": float(t), "f_r_hz": float(per_t[t].f_r_hz), "fractional_shift": float(s)}
        for t, s in zip(ts_s, shift)
    ]

    usable = []
    for r in ok:
        if r.coupling_regime == "excluded":
            r.omitted_reason = "coupling regime excluded (Q_int >= excluded_ratio * Q_c)"
        elif not r.reliable:
            r.omitted_reason = "unreliable fit (residual above noise threshold)"
        elif not (r.q_int_stderr and r.q_int_stderr > 0 and math.isfinite(r.q_int_stderr)):
            r.omitted_reason = "no finite Q_int standard error"
        else:
            usable.append(r)
    if all(r.coupling_regime == "excluded" for r in ok):
        out.status = "excluded"
        out.error = "all fitted Q_int >= excluded_ratio * Q_c"
        return out
    if not usable:
        out.status, out.error = "failed", "no usable points for the loss fit"
        return out
    order = sorted(usable, key=lambda r: (r.temperature_k, r.power_dbm, r.source))
    surf = LossSurface(
        np.array([r.temperature_k for r in order]),
        np.array([r.n_ph for r in order]),
        np.array([1.0 / r.q_int for r in order]),
        np.array([r.q_int_stderr / r.q_int ** 2 for r in order]),
        name, out.f_r_hz, np.array([r.power_dbm for r in order]),
    )
    out.surface = surf
    try:
        lf = fit_loss_surface(surf, config.loss_options())
    except (ReslossError, ValueError) as exc:
        out.status, out.error = "failed", f"loss fit: {type(exc).__name__}: {exc}"
        return out
    out.fit = lf
    for r, keep in zip(order, lf.kept):
        if keep:
            r.used_in_loss_fit = True
        else:
            r.omitted_reason = "high-power downturn of Q_int"
            out.high_power_excluded.append(r.source)
    out.n_used = int(np.sum(lf.kept))
    p = lf.params
    out.tls = {
        "delta_tls": p.delta_tls, "delta_tls_stderr": lf.stderr["delta_tls"],
        "alpha": p.alpha_exp, "alpha_stderr": lf.stderr["alpha_exp"],
        "beta": p.beta_exp, "beta_stderr": lf.stderr["beta_exp"],
        "d_sat": p.d_sat, "d_sat_stderr": lf.stderr["d_sat"],
        "f_r_hz": p.f_r,
    }
    out.delta_pi = [
        {"temperature_k": float(t), "delta_pi": float(v), "delta_pi_stderr": float(s)}
        for t, v, s in zip(lf.pi.temperatures, lf.pi.delta_pi, lf.pi.stderr)
    ]
    try:
        out.single_photon_q_int = float(1.0 / single_photon_inverse_q(p, lf.pi, config.base_temperature_k))
    except (ReslossError, ValueError) as exc:
        out.error = f"single-photon Q: {exc}"
    out.goodness = dict(lf.goodness)
    return out


# --- run -----------------------------------------------------------------------------

@dataclass
class Results:
    config: RunConfig
    calibration: CalibrationModel
    traces: list
    resonators: list
    trace_data: dict = field(default_factory=dict, repr=False)  # source -> ComplexTrace
    fit_data: dict = field(default_factory=dict, repr=False)  # source -> NotchFit | DuffingFit

    @property
    def n_failed_items(self) -> int:
        return sum(r.status == "failed" for r in self.traces) + \
            sum(r.status == "failed" for r in self.resonators)

    @property
    def n_items(self) -> int:
        return len(self.traces) + len(self.resonators)

    @property
    def excluded_resonators(self) -> list[str]:
        return [r.name for r in self.resonators if r.status == "excluded"]

    def exit_code(self) -> int:
        return 1 if self.n_failed_items else 0


def fit_traces(config: RunConfig, cal: CalibrationModel, sources: list[str]):
    opt = config.fit_options()
    args = [(s, str(config.path(s)), cal, opt, config.model) for s in sources]
    jobs = min(config.n_jobs(), len(args))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            out = list(ex.map(_worker, args, chunksize=max(1, len(args) // (4 * jobs))))
    else:
        out = [_worker(a) for a in args]
    records = [o[0] for o in out]
    data = {o[0].source: o[1] for o in out if o[1] is not None}
    fits = {o[0].source: o[2] for o in out if o[2] is not None}
    return records, data, fits


def run_pipeline(config: RunConfig, loss_fit: bool = True) -> Results:
    """Full analysis. Raises ConfigurationError only for run-level problems."""
    sources = resolve_inputs(config)
    cal = build_calibration(config)
    records, data, fits = fit_traces(config, cal, sources)
    _cluster_unlabelled(records)
    resonators = []
    if loss_fit:
        groups: dict[str, list] = {}
        for r in records:
            if r.status == "ok" or r.resonator:
                groups.setdefault(r.resonator or _group_name(r), []).append(r)
        for name in sorted(groups):
            resonators.append(analyse_resonator(name, groups[name], config))
    for r in records:
        if r.status == "ok" and r.omitted_reason is None and not r.used_in_loss_fit and loss_fit:
            r.omitted_reason = "resonator not loss-fitted"
    log.info("fitted %d traces, %d failed", len(records), sum(r.status == "failed" for r in records))
    return Results(config, cal, records, resonators, data, fits)
