"""Reading and writing sweep files.

Trace CSV layout::

    # power_dbm: -40
    # temperature_k: 0.01
    # resonator: A-7GHz
    frequency_hz,s21_re,s21_im
    7.0e9,0.98,-0.01
    ...

``s21_mag_db,s21_phase_rad`` may replace the re/im columns. Metadata lines
are ``# key: value``; ``power_dbm`` and ``temperature_k`` are required.
Touchstone ``.s2p`` files are read for S21 in RI, MA or DB format with Hz,
kHz, MHz or GHz frequency units; metadata comes from ``! key: value``
comment lines or from explicit overrides.
"""
from __future__ import annotations

import csv
import io
import math
import os
from pathlib import Path

import numpy as np

from .errors import ParseError
from .fitting import ComplexTrace
from .transport import TransportCurve

__all__ = [
    "read_trace",
    "read_trace_csv",
    "write_trace_csv",
    "read_touchstone",
    "write_touchstone",
    "read_snr_csv",
    "write_attenuation_csv",
    "read_attenuation_csv",
    "read_transport",
    "REQUIRED_METADATA",
]

REQUIRED_METADATA = ("power_dbm", "temperature_k")
_RI = ("frequency_hz", "s21_re", "s21_im")
_DB = ("frequency_hz", "s21_mag_db", "s21_phase_rad")
_UNITS = {"HZ": 1.0, "KHZ": 1e3, "MHZ": 1e6, "GHZ": 1e9}


def _meta_value(v: str):
    v = v.strip()
    try:
        return float(v)
    except ValueError:
        return v


def _finish(path, freqs, s21, meta, first_data_line, line_of) -> ComplexTrace:
    for key in REQUIRED_METADATA:
        if key not in meta:
            raise ParseError(f"missing required metadata '{key}'", path, first_data_line)
        if not isinstance(meta[key], float):
            raise ParseError(f"metadata '{key}' is not numeric: {meta[key]!r}", path, first_data_line)
    f = np.asarray(freqs, dtype=float)
    if f.size < 32:
        raise ParseError(f"only {f.size} data rows, need >= 32", path, first_data_line)
    bad = np.flatnonzero(np.diff(f) <= 0)
    if bad.size:
        raise ParseError("frequencies are not strictly increasing", path, line_of[bad[0] + 1])
    extra = {k: v for k, v in meta.items() if k not in REQUIRED_METADATA}
    extra["source"] = str(path)
    return ComplexTrace(f, np.asarray(s21, dtype=complex), applied_power=meta["power_dbm"],
                        stage_temperature=meta["temperature_k"], metadata=extra)


def read_trace_csv(path, text: str | None = None) -> ComplexTrace:
    """Parse one trace CSV. Errors name the offending line."""
    if text is None:
        text = Path(path).read_text()
    meta: dict = {}
    header = None
    freqs, s21, line_of = [], [], []
    first_data = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if ":" in body:
                k, v = body.split(":", 1)
                meta[k.strip()] = _meta_value(v)
            continue
        if header is None:
            cols = tuple(c.strip().lower() for c in next(csv.reader([line])))
            if cols not in (_RI, _DB):
                raise ParseError(
                    f"unrecognized header {','.join(cols)!r}; expected "
                    f"{','.join(_RI)} or {','.join(_DB)}", path, lineno)
            header = cols
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ParseError(f"expected 3 columns, got {len(parts)}", path, lineno)
        try:
            v0, v1, v2 = (float(p) for p in parts)
        except ValueError:
            raise ParseError(f"non-numeric value in {line!r}", path, lineno) from None
        if not all(map(math.isfinite, (v0, v1, v2))):
            raise ParseError("non-finite value", path, lineno)
        if first_data is None:
            first_data = lineno
        freqs.append(v0)
        if header == _RI:
            s21.append(complex(v1, v2))
        else:
            s21.append(10.0 ** (v1 / 20.0) * complex(math.cos(v2), math.sin(v2)))
        line_of.append(lineno)
    if header is None:
        raise ParseError("no header line found", path, None)
    return _finish(path, freqs, s21, meta, first_data or 1, line_of)


def write_trace_csv(path, trace: ComplexTrace, encoding: str = "ri", metadata: dict | None = None):
    """Write a trace CSV (``encoding`` 'ri' or 'db'), values as ``%.17g``."""
    meta = {"power_dbm": trace.applied_power, "temperature_k": trace.stage_temperature}
    for k, v in {**trace.metadata, **(metadata or {})}.items():
        if k != "source" and v is not None and str(v) != "":
            meta[k] = v
    buf = io.StringIO()
    for k, v in meta.items():
        if v is None:
            continue
        buf.write(f"# {k}: {v:.17g}\n" if isinstance(v, float) else f"# {k}: {v}\n")
    if encoding == "ri":
        buf.write(",".join(_RI) + "\n")
        cols = (trace.s21.real, trace.s21.imag)
    elif encoding == "db":
        buf.write(",".join(_DB) + "\n")
        cols = (20.0 * np.log10(np.abs(trace.s21)), np.angle(trace.s21))
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    for f, a, b in zip(trace.freqs, *cols):
        buf.write(f"{f:.17g},{a:.17g},{b:.17g}\n")
    Path(path).write_text(buf.getvalue())


def read_touchstone(path, power_dbm: float | None = None, temperature_k: float | None = None,
                    text: str | None = None) -> ComplexTrace:
    """S21 from a two-port Touchstone v1 file.

    Overrides take precedence over ``! power_dbm: ...`` comment metadata.
    """
    if text is None:
        text = Path(path).read_text()
    meta: dict = {}
    opt = None
    fmt, unit = "MA", 1e9  # Touchstone defaults: GHz, MA
    freqs, s21, line_of = [], [], []
    first_data = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("!"):
            body = line[1:].strip()
            if ":" in body:
                k, v = body.split(":", 1)
                meta[k.strip()] = _meta_value(v)
            continue
        line = line.split("!", 1)[0].strip()
        if line.startswith("#"):
            if opt is not None:
                raise ParseError("second option line", path, lineno)
            opt = lineno
            toks = line[1:].upper().split()
            units = [t for t in toks if t in _UNITS]
            fmts = [t for t in toks if t in ("RI", "MA", "DB")]
            if len(units) > 1 or len(fmts) > 1:
                raise ParseError("ambiguous option line", path, lineno)
            if units:
                unit = _UNITS[units[0]]
            if fmts:
                fmt = fmts[0]
            if "S" not in toks:
                raise ParseError("only S-parameter files are supported", path, lineno)
            continue
        if opt is None:
            raise ParseError("data before the '#' option line (unit ambiguity)", path, lineno)
        parts = line.split()
        if len(parts) != 9:
            raise ParseError(f"expected 9 columns for a 2-port file, got {len(parts)}", path, lineno)
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise ParseError(f"non-numeric value in {line!r}", path, lineno) from None
        if first_data is None:
            first_data = lineno
        f, x, y = vals[0] * unit, vals[3], vals[4]  # S21 is the second pair
        if fmt == "RI":
            z = complex(x, y)
        else:
            mag = x if fmt == "MA" else 10.0 ** (x / 20.0)
            ang = math.radians(y)
            z = mag * complex(math.cos(ang), math.sin(ang))
        freqs.append(f)
        s21.append(z)
        line_of.append(lineno)
    if opt is None:
        raise ParseError("no '#' option line", path, None)
    if power_dbm is not None:
        meta["power_dbm"] = float(power_dbm)
    if temperature_k is not None:
        meta["temperature_k"] = float(temperature_k)
    return _finish(path, freqs, s21, meta, first_data or opt, line_of)


def write_touchstone(path, trace: ComplexTrace, fmt: str = "RI"):
    fmt = fmt.upper()
    buf = io.StringIO()
    buf.write(f"! power_dbm: {trace.applied_power!r}\n! temperature_k: {trace.stage_temperature!r}\n")
    for k, v in trace.metadata.items():
        if k != "source" and v is not None and str(v) != "":
            buf.write(f"! {k}: {v}\n")
    buf.write(f"# HZ S {fmt} R 50\n")
    for f, z in zip(trace.freqs, trace.s21):
        if fmt == "RI":
            a, b = z.real, z.imag
        elif fmt == "MA":
            a, b = abs(z), math.degrees(np.angle(z))
        elif fmt == "DB":
            a, b = 20.0 * math.log10(abs(z)), math.degrees(np.angle(z))
        else:
            raise ValueError(f"unknown Touchstone format {fmt!r}")
        buf.write(f"{f:.17g} 0 0 {a:.17g} {b:.17g} {a:.17g} {b:.17g} 0 0\n")
    Path(path).write_text(buf.getvalue())


def read_trace(path, **overrides) -> ComplexTrace:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".s2p":
        return read_touchstone(path, **overrides)
    if ext in (".csv", ".txt"):
        return read_trace_csv(path)
    raise ParseError(f"unsupported file type {ext!r}", path, None)


def _read_table(path, want: tuple[str, ...]):
    rows, header = [], None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if header is None:
            header = [c.strip().lower() for c in line.split(",")]
            missing = [c for c in want if c not in header]
            if missing:
                raise ParseError(f"missing columns {missing}", path, lineno)
            idx = [header.index(c) for c in want]
            continue
        parts = line.split(",")
        if len(parts) != len(header):
            raise ParseError(f"expected {len(header)} columns, got {len(parts)}", path, lineno)
        try:
            rows.append([float(parts[i]) for i in idx])
        except ValueError:
            raise ParseError(f"non-numeric value in {line!r}", path, lineno) from None
    if not rows:
        raise ParseError("no data rows", path, None)
    return np.array(rows)


def read_snr_csv(path):
    """Calibration input: columns ``frequency_hz,snr`` (linear amplitude SNR)."""
    arr = _read_table(path, ("frequency_hz", "snr"))
    return arr[:, 0], arr[:, 1]


def write_attenuation_csv(path, curve):
    lines = ["frequency_hz,attenuation_db"]
    lines += [f"{f:.17g},{a:.17g}" for f, a in zip(curve.freqs, curve.att_db)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_attenuation_csv(path):
    from .power import AttenuationCurve

    arr = _read_table(path, ("frequency_hz", "attenuation_db"))
    order = np.argsort(arr[:, 0], kind="stable")
    return AttenuationCurve(arr[order, 0], arr[order, 1])


def read_transport(bc2_path, rho_10k: float, film: str = "", rt_path=None) -> TransportCurve:
    """(T, B_c2) CSV with columns ``temperature_k,bc2_t``; optional (T, R) CSV
    with ``temperature_k,resistance_ohm``."""
    bc2 = _read_table(bc2_path, ("temperature_k", "bc2_t"))
    rt = _read_table(rt_path, ("temperature_k", "resistance_ohm")) if rt_path else None
    return TransportCurve(bc2, float(rho_10k), film, rt)
