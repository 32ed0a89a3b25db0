"""Synthetic measurement bundles written in the ingested file formats.

A bundle holds one trace CSV per (resonator, T, P) node, an SNR calibration
spectrum, a ready-to-run ``config.yaml`` and ``truth.json`` with the
generator parameters.
"""
from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigurationError
from .io import write_touchstone, write_trace_csv
from .power import snr_for_attenuation
from .synth import RNG_ALGORITHM, SynthScenario, default_scenario, generate_loss_surface

__all__ = ["write_synthetic_bundle", "scenario_from_config", "node_filename"]

SCENARIO_KEYS = {"preset", "snr_db", "noise_amplitude", "n_points", "span_linewidths", "resonators",
                 "temperatures", "powers_dbm"}


def node_filename(T: float, P: float, ext: str = "csv") -> str:
    sign = "m" if P < 0 else "p"
    return f"T{int(round(T * 1e3)):04d}mK_P{sign}{int(round(abs(P))):03d}dBm.{ext}"


def scenario_from_config(synth: dict, seed: int | None = None) -> SynthScenario:
    unknown = sorted(set(synth) - SCENARIO_KEYS)
    if unknown:
        raise ConfigurationError(f"unknown synth option(s): {', '.join(unknown)}")
    sc = default_scenario(synth.get("preset", "wafer-like-A"))
    kw = {}
    for k in ("snr_db", "noise_amplitude", "n_points", "span_linewidths"):
        if k in synth:
            kw[k] = synth[k]
    for k in ("temperatures", "powers_dbm"):
        if k in synth:
            kw[k] = tuple(float(v) for v in synth[k])
    if "resonators" in synth:
        names = list(synth["resonators"])
        chosen = []
        for nm in names:
            if isinstance(nm, int):
                chosen.append(sc.resonators[nm])
            else:
                chosen.append(sc.resonator(nm)[1])
        kw["resonators"] = chosen
    if seed is not None:
        kw["seed"] = int(seed)
    try:
        return replace(sc, **kw)
    except TypeError as exc:
        raise ConfigurationError(f"bad synth options: {exc}") from None


def _truth_doc(sc: SynthScenario) -> dict:
    res = []
    for r in sc.resonators:
        res.append({
            "name": r.name,
            "f_r_hz": r.f_r,
            "q_c": r.q_c,
            "phi_rad": r.phi,
            "delta_tls": r.tls.delta_tls,
            "alpha": r.tls.alpha_exp,
            "beta": r.tls.beta_exp,
            "d_sat": r.tls.d_sat,
            "delta_pi": [{"temperature_k": float(t), "delta_pi": float(v)}
                         for t, v in zip(r.pi.temperatures, r.pi.delta_pi)],
        })
    return {
        "format": "resloss.synthetic_truth",
        "version": 1,
        "scenario": sc.name,
        "seed": int(sc.seed),
        "rng": RNG_ALGORITHM.split(" (")[0],
        "snr_db": sc.snr_db,
        "noise_amplitude": sc.noise_amplitude,
        "background": list(sc.background),
        "attenuation_hz_db": [[float(f), float(a)] for f, a in zip(sc.attenuation.freqs, sc.attenuation.att_db)],
        "resonators": res,
    }


def write_synthetic_bundle(scenario: SynthScenario, out_dir, fmt: str = "csv",
                           calibration_points: int = 12) -> Path:
    """Write the bundle and return the path of its ``config.yaml``."""
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    ext = "s2p" if fmt == "s2p" else "csv"
    for ridx, res in enumerate(scenario.resonators):
        rdir = out / "traces" / res.name
        rdir.mkdir(parents=True, exist_ok=True)
        _, traces, points = generate_loss_surface(scenario, ridx)
        for tr, pt in zip(traces, points):
            path = rdir / node_filename(pt.temperature_k, pt.power_dbm, ext)
            if ext == "s2p":
                write_touchstone(path, tr)
            else:
                write_trace_csv(path, tr)
    # SNR spectrum that reproduces the scenario's attenuation through the calibration chain
    f_cal = np.linspace(scenario.attenuation.freqs[0], scenario.attenuation.freqs[-1], calibration_points)
    snr = snr_for_attenuation(scenario.attenuation(f_cal), scenario.calibration)
    lines = ["frequency_hz,snr"] + [f"{f:.17g},{s:.17g}" for f, s in zip(f_cal, snr)]
    (out / "calibration_snr.csv").write_text("\n".join(lines) + "\n")
    cal = scenario.calibration
    config = {
        "inputs": [f"traces/*/*.{ext}"],
        "calibration": {
            "snr_file": "calibration_snr.csv",
            "hemt_noise_temperature_k": cal.hemt_noise_temperature,
            "if_bandwidth_hz": cal.if_bandwidth,
            "post_sample_offset_db": cal.post_sample_offset,
        },
        "base_temperature_k": float(min(scenario.temperatures)),
        "output_dir": "results",
        "seed": int(scenario.seed),
        "fit": {"model": "linear"},
    }
    (out / "config.yaml").write_text(yaml.safe_dump(config, sort_keys=False))
    (out / "truth.json").write_text(json.dumps(_truth_doc(scenario), indent=2, sort_keys=True) + "\n")
    return out / "config.yaml"
