"""Result serialization: versioned JSON, CSV tables and SVG plots.

``results.json`` is a pure function of inputs, configuration and seed; the
wall-clock time and software versions go to ``run_info.json`` instead, so the
results file can be compared byte for byte between runs.
"""
from __future__ import annotations

import csv
import io
import json
import math
import platform
import time
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .pipeline import Results

__all__ = [
    "SCHEMA_VERSION",
    "results_to_dict",
    "dumps",
    "load_schema",
    "validate_results",
    "emit_reports",
    "write_table",
]

SCHEMA_VERSION = 1
FORMAT = "resloss.results"

TRACE_COLUMNS = (
    "source", "resonator", "status", "model", "power_dbm", "p_on_chip_dbm", "temperature_k",
    "f_r_hz", "f_r_stderr_hz", "q_loaded", "q_c", "q_c_stderr", "phi_rad", "q_int", "q_int_stderr",
    "n_ph", "kerr_shift_hz", "coupling_regime", "residual_rms", "noise_rms", "reliable",
    "used_in_loss_fit", "omitted_reason", "error",
)
RESONATOR_COLUMNS = (
    "name", "status", "f_r_hz", "n_traces", "n_used", "delta_tls", "delta_tls_stderr", "alpha",
    "alpha_stderr", "beta", "beta_stderr", "d_sat", "d_sat_stderr", "single_photon_q_int",
    "reduced_chi2", "degenerate", "error",
)


def _clean(v):
    """JSON-safe plain Python values; non-finite floats become null."""
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_clean(x) for x in v.tolist()]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def results_to_dict(results: Results) -> dict:
    cfg = results.config
    curve = results.calibration.attenuation_curve
    cal = results.calibration
    resonators = []
    for r in results.resonators:
        d = r.as_dict()
        resonators.append(d)
    return _clean({
        "format": FORMAT,
        "schema_version": SCHEMA_VERSION,
        "config": {
            "inputs": list(cfg.inputs),
            "seed": int(cfg.seed),
            "base_temperature_k": cfg.base_temperature_k,
            "model": cfg.model,
            "fit": dict(cfg.fit),
            "loss": dict(cfg.loss),
        },
        "calibration": {
            "hemt_noise_temperature_k": cal.hemt_noise_temperature,
            "if_bandwidth_hz": cal.if_bandwidth,
            "post_sample_offset_db": cal.post_sample_offset,
            "frequency_hz": curve.freqs,
            "attenuation_db": curve.att_db,
        },
        "traces": [t.as_dict() for t in results.traces],
        "resonators": resonators,
        "excluded_resonators": results.excluded_resonators,
        "summary": {
            "n_traces": len(results.traces),
            "n_traces_failed": sum(t.status == "failed" for t in results.traces),
            "n_resonators": len(results.resonators),
            "n_resonators_fitted": sum(r.status == "fitted" for r in results.resonators),
            "n_resonators_failed": sum(r.status == "failed" for r in results.resonators),
        },
    })


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def load_schema() -> dict:
    return json.loads(resources.files("resloss").joinpath("schemas/results.schema.json").read_text())


def validate_results(doc: dict):
    import jsonschema

    jsonschema.validate(doc, load_schema())


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_table(path, rows: list[dict], columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    Path(path).write_text(buf.getvalue())


def _resonator_rows(doc):
    rows = []
    for r in doc["resonators"]:
        row = {k: r.get(k) for k in RESONATOR_COLUMNS}
        row.update(r.get("tls") or {})
        g = r.get("goodness") or {}
        row["reduced_chi2"] = g.get("reduced_chi2")
        row["degenerate"] = g.get("degenerate")
        row["f_r_hz"] = r.get("f_r_hz")
        rows.append(row)
    return rows


def _series_rows(doc, key):
    rows = []
    for r in doc["resonators"]:
        for e in r.get(key) or []:
            rows.append({"resonator": r["name"], **e})
    return rows


def write_tables(doc: dict, out: Path, which=("traces", "resonators", "delta_pi", "frequency_shift")):
    written = []
    if "traces" in which:
        write_table(out / "traces.csv", doc["traces"], TRACE_COLUMNS)
        written.append(out / "traces.csv")
    if "resonators" in which:
        write_table(out / "resonators.csv", _resonator_rows(doc), RESONATOR_COLUMNS)
        written.append(out / "resonators.csv")
    if "delta_pi" in which:
        write_table(out / "delta_pi.csv", _series_rows(doc, "delta_pi"),
                    ("resonator", "temperature_k", "delta_pi", "delta_pi_stderr"))
        written.append(out / "delta_pi.csv")
    if "frequency_shift" in which:
        write_table(out / "frequency_shift.csv", _series_rows(doc, "frequency_shift"),
                    ("resonator", "temperature_k", "f_r_hz", "fractional_shift"))
        written.append(out / "frequency_shift.csv")
    return written


# --- plots ---------------------------------------------------------------------------

def _mpl():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "resloss"
    matplotlib.rcParams["svg.fonttype"] = "none"
    return plt


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": "resloss"})


def _model_curve(fit, f):
    from .fitting import DuffingFit
    from .scattering import eval_duffing_s21, eval_full_notch

    if isinstance(fit, DuffingFit):
        bg = fit.background
        return bg.a * np.exp(1j * (bg.alpha0 - 2.0 * np.pi * f * bg.tau)) * \
            eval_duffing_s21(f, fit.params, fit.flux), bg.a
    return eval_full_notch(f, fit.params), fit.params.a


def _plot_s21(plt, results: Results, name, out: Path):
    recs = [t for t in results.traces if t.resonator == name and t.status == "ok"
            and t.source in results.fit_data]
    if not recs:
        return None
    t_min = min(r.temperature_k for r in recs)
    recs = sorted((r for r in recs if r.temperature_k == t_min), key=lambda r: r.power_dbm)
    fig, ax = plt.subplots(figsize=(6, 4))
    cmap = plt.get_cmap("viridis")
    for i, r in enumerate(recs):
        tr, fit = results.trace_data[r.source], results.fit_data[r.source]
        model, a = _model_curve(fit, tr.freqs)
        c = cmap(i / max(len(recs) - 1, 1))
        x = (tr.freqs - r.f_r_hz) / 1e3
        ax.plot(x, 20 * np.log10(np.abs(tr.s21) / a), ".", ms=1.5, color=c)
        ax.plot(x, 20 * np.log10(np.abs(model) / a), "-", lw=0.8, color=c,
                label=f"{r.power_dbm:g} dBm" + (" (Duffing)" if r.model == "duffing" else ""))
    ax.set_xlabel("f - f_r (kHz)")
    ax.set_ylabel("|S21| / a (dB)")
    ax.set_title(f"{name}, T = {t_min * 1e3:g} mK")
    ax.legend(fontsize=6, ncol=2)
    fig.tight_layout()
    path = out / f"{_safe(name)}_s21.svg"
    _save(fig, path)
    plt.close(fig)
    return path


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)


def _plot_resonator(plt, results: Results, rr, out: Path):
    from .loss import total_inverse_q

    paths = []
    surf, lf = rr.surface, rr.fit
    if surf is not None:
        fig, ax = plt.subplots(figsize=(6, 4))
        temps = surf.temperatures()
        cmap = plt.get_cmap("plasma")
        for i, T in enumerate(temps):
            sel = surf.temperature == T
            c = cmap(i / max(len(temps) - 1, 1))
            q = 1.0 / surf.inverse_q[sel]
            qe = surf.inverse_q_stderr[sel] / surf.inverse_q[sel] ** 2
            ax.errorbar(surf.n_ph[sel], q, yerr=qe, fmt="o", ms=3, color=c, label=f"{T * 1e3:g} mK")
            if lf is not None:
                nn = np.geomspace(max(surf.n_ph.min() / 3, 1e-3), surf.n_ph.max() * 3, 200)
                ax.plot(nn, 1.0 / total_inverse_q(T, nn, lf.params, lf.pi), "-", color=c, lw=0.8)
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("photon number")
        ax.set_ylabel("Q_int")
        ax.set_title(rr.name)
        ax.legend(fontsize=6)
        fig.tight_layout()
        p = out / f"{_safe(rr.name)}_q_vs_nph.svg"
        _save(fig, p)
        plt.close(fig)
        paths.append(p)
    if rr.delta_pi:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        t = [e["temperature_k"] for e in rr.delta_pi]
        ax.errorbar(t, [e["delta_pi"] for e in rr.delta_pi], yerr=[e["delta_pi_stderr"] for e in rr.delta_pi],
                    fmt="o-", ms=3)
        ax.set_xlabel("T (K)")
        ax.set_ylabel("delta_PI")
        ax.set_title(rr.name)
        fig.tight_layout()
        p = out / f"{_safe(rr.name)}_delta_pi.svg"
        _save(fig, p)
        plt.close(fig)
        paths.append(p)
    if rr.frequency_shift:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot([e["temperature_k"] for e in rr.frequency_shift],
                [e["fractional_shift"] for e in rr.frequency_shift], "o-", ms=3)
        ax.set_xlabel("T (K)")
        ax.set_ylabel("df_r / f_0")
        ax.set_title(rr.name)
        fig.tight_layout()
        p = out / f"{_safe(rr.name)}_fr_shift.svg"
        _save(fig, p)
        plt.close(fig)
        paths.append(p)
    return paths


def write_plots(results: Results, out: Path):
    plt = _mpl()
    paths = []
    names = sorted({t.resonator for t in results.traces if t.resonator})
    for name in names:
        p = _plot_s21(plt, results, name, out)
        if p:
            paths.append(p)
    for rr in results.resonators:
        paths += _plot_resonator(plt, results, rr, out)
    return paths


def emit_reports(results: Results, out_dir=None, formats=("json", "csv"), plots: bool = True,
                 run_info: dict | None = None) -> list[Path]:
    """Write results.json, CSV tables, SVG plots and run_info.json; returns written paths."""
    if not results.traces:
        raise ConfigurationError("nothing to report")
    out = Path(out_dir if out_dir is not None else results.config.path(results.config.output_dir))
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigurationError(f"output directory {out} is not writable: {exc.strerror}") from None
    doc = results_to_dict(results)
    written = []
    if "json" in formats:
        (out / "results.json").write_text(dumps(doc))
        written.append(out / "results.json")
    if "csv" in formats:
        written += write_tables(doc, out)
    if plots:
        written += write_plots(results, out)
    info = {"created_unix": time.time(), "python": platform.python_version(), **(run_info or {})}
    (out / "run_info.json").write_text(dumps(_clean(info)))
    written.append(out / "run_info.json")
    return written
