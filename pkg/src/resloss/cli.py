"""Command-line entry point: ``resloss <verb> [options]``.

Exit codes: 0 success, 1 partial (or total) failure of individual items,
2 configuration error (including an empty input set).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigurationError, DataError, ParseError, ReslossError

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("resloss")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="RNG seed (u64)")
    common.add_argument("--jobs", type=int, help="parallel trace fits (default: all cores)")
    common.add_argument("--format", choices=("json", "csv"), default="json",
                        help="table output format")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="resloss", description="Superconducting resonator loss analysis")
    sub = p.add_subparsers(dest="verb", required=True)
    c = sub.add_parser("calibrate", parents=[common], help="attenuation curve from an SNR spectrum")
    c.add_argument("snr_file", nargs="?", help="CSV with frequency_hz,snr (else calibration.snr_file)")
    sub.add_parser("fit", parents=[common], help="fit every input trace")
    sub.add_parser("loss-fit", parents=[common], help="fit traces, then the loss model per resonator")
    sub.add_parser("dc", parents=[common], help="film parameters from DC transport data")
    s = sub.add_parser("synth", parents=[common], help="write a synthetic measurement bundle")
    s.add_argument("--preset", help="wafer-like-A .. wafer-like-D")
    s.add_argument("--touchstone", action="store_true", help="write .s2p instead of CSV traces")
    sub.add_parser("report", parents=[common], help="full analysis with tables and SVG plots")
    return p


def _config(args, required=True):
    from .pipeline import RunConfig, load_config

    if args.config:
        return load_config(args.config, seed=args.seed, jobs=args.jobs)
    if required:
        raise ConfigurationError("--config is required for this verb")
    kw = {k: v for k, v in (("seed", args.seed), ("jobs", args.jobs)) if v is not None}
    return RunConfig(**kw)


def _out_dir(args, cfg) -> Path:
    return Path(args.out) if args.out else cfg.path(cfg.output_dir)


def _write_doc(out: Path, stem: str, doc, fmt: str, rows=None, columns=None):
    from .report import _clean, dumps, write_table

    out.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path = out / f"{stem}.json"
        path.write_text(dumps(_clean(doc)))
    else:
        path = out / f"{stem}.csv"
        write_table(path, rows, columns)
    return path


def cmd_calibrate(args) -> int:
    from .pipeline import build_calibration

    cfg = _config(args, required=args.snr_file is None)
    if args.snr_file:
        cfg.calibration = {k: v for k, v in cfg.calibration.items()
                           if k not in ("snr_file", "attenuation_file", "attenuation_db")}
        cfg.calibration["snr_file"] = str(Path(args.snr_file).resolve())
    cal = build_calibration(cfg)
    curve = cal.attenuation_curve
    rows = [{"frequency_hz": float(f), "attenuation_db": float(a)} for f, a in zip(curve.freqs, curve.att_db)]
    doc = {"format": "resloss.attenuation", "version": 1,
           "hemt_noise_temperature_k": cal.hemt_noise_temperature, "if_bandwidth_hz": cal.if_bandwidth,
           "post_sample_offset_db": cal.post_sample_offset, "points": rows}
    path = _write_doc(_out_dir(args, cfg), "attenuation", doc, args.format, rows,
                      ("frequency_hz", "attenuation_db"))
    print(path)
    return EXIT_OK


def cmd_fit(args) -> int:
    from .pipeline import run_pipeline
    from .report import TRACE_COLUMNS, results_to_dict

    cfg = _config(args)
    res = run_pipeline(cfg, loss_fit=False)
    doc = results_to_dict(res)
    path = _write_doc(_out_dir(args, cfg), "fits", doc, args.format, doc["traces"], TRACE_COLUMNS)
    failed = sum(t.status == "failed" for t in res.traces)
    print(f"{path}: {len(res.traces) - failed}/{len(res.traces)} traces fitted")
    return EXIT_PARTIAL if failed else EXIT_OK


def _run_full(args, plots: bool) -> int:
    from .pipeline import run_pipeline
    from .report import emit_reports, results_to_dict, write_tables

    cfg = _config(args)
    res = run_pipeline(cfg)
    out = _out_dir(args, cfg)
    if plots:
        emit_reports(res, out, formats=("json", "csv"), plots=True,
                     run_info={"verb": args.verb, "seed": cfg.seed})
    elif args.format == "json":
        emit_reports(res, out, formats=("json",), plots=False, run_info={"verb": args.verb, "seed": cfg.seed})
    else:
        out.mkdir(parents=True, exist_ok=True)
        write_tables(results_to_dict(res), out)
    for r in res.resonators:
        extra = ""
        if r.tls:
            extra = f" delta_TLS={r.tls['delta_tls']:.3g} Q_1ph={r.single_photon_q_int or float('nan'):.3g}"
        print(f"{r.name}: {r.status}{extra}" + (f" ({r.error})" if r.error and r.status != "fitted" else ""))
    if res.excluded_resonators:
        print("excluded: " + ", ".join(res.excluded_resonators))
    return res.exit_code()


def cmd_loss_fit(args) -> int:
    return _run_full(args, plots=False)


def cmd_report(args) -> int:
    return _run_full(args, plots=True)


def cmd_dc(args) -> int:
    from .io import read_transport
    from .transport import film_parameters

    cfg = _config(args)
    if not cfg.films:
        raise ConfigurationError("no inputs: config has no 'films' entries")
    rows, failed = [], 0
    for i, film in enumerate(cfg.films):
        name = film.get("name", f"film{i}")
        try:
            if "bc2_file" not in film or "rho_10k_uohm_cm" not in film:
                raise ConfigurationError(f"film {name!r} needs bc2_file and rho_10k_uohm_cm")
            curve = read_transport(cfg.path(film["bc2_file"]), film["rho_10k_uohm_cm"], name,
                                   cfg.path(film["rt_file"]) if "rt_file" in film else None)
            fp = film_parameters(curve, film.get("t_c_k"), film.get("window", 0.9),
                                 film.get("tc_fraction", 0.5))
            rows.append({**fp.as_dict(), "status": "ok", "error": None})
        except (DataError, ParseError, ConfigurationError, ValueError, OSError) as exc:
            failed += 1
            rows.append({"film": name, "status": "failed", "error": str(exc)})
    cols = ("film", "status", "t_c_k", "slope_t_per_k", "slope_stderr_t_per_k", "bc2_zero_t", "xi_gl_m",
            "rho_10k_uohm_cm", "mean_free_path_m", "error")
    doc = {"format": "resloss.films", "version": 1, "films": rows}
    path = _write_doc(_out_dir(args, cfg), "films", doc, args.format, rows, cols)
    print(path)
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_synth(args) -> int:
    from .bundle import scenario_from_config, write_synthetic_bundle

    if not args.out:
        raise ConfigurationError("--out is required for synth")
    cfg = _config(args, required=False)
    synth = dict(cfg.synth)
    if args.preset:
        synth["preset"] = args.preset
    sc = scenario_from_config(synth, seed=cfg.seed)
    path = write_synthetic_bundle(sc, args.out, fmt="s2p" if args.touchstone else "csv")
    print(path)
    return EXIT_OK


COMMANDS = {
    "calibrate": cmd_calibrate,
    "fit": cmd_fit,
    "loss-fit": cmd_loss_fit,
    "dc": cmd_dc,
    "synth": cmd_synth,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.verb](args)
    except ConfigurationError as exc:
        print(f"resloss {args.verb}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ReslossError as exc:
        print(f"resloss {args.verb}: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
