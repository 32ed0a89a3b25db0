import json
import subprocess
import sys

import jsonschema
import numpy as np
import pytest
import yaml

from resloss.cli import EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL, main
from resloss.report import load_schema


@pytest.fixture(scope="module")
def small_bundle(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "synth.yaml"
    cfg.write_text(yaml.safe_dump({"synth": {"preset": "wafer-like-B", "resonators": [0, 3],
                                             "temperatures": [0.01, 0.1, 0.3],
                                             "powers_dbm": [-80, -60, -40, -20, 0]}}))
    assert main(["synth", "--config", str(cfg), "--out", str(d / "bundle"), "--seed", "3"]) == EXIT_OK
    return d / "bundle" / "config.yaml"


def test_synth_writes_bundle(small_bundle):
    root = small_bundle.parent
    assert len(list(root.glob("traces/*/*.csv"))) == 2 * 3 * 5
    truth = json.loads((root / "truth.json").read_text())
    assert truth["seed"] == 3 and "PCG64" in truth["rng"]


def test_report_verb(small_bundle, tmp_path, capsys):
    out = tmp_path / "r"
    assert main(["report", "--config", str(small_bundle), "--out", str(out), "--jobs", "1"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "excluded: wafer-like-B-8.5GHz" in text
    jsonschema.validate(json.loads((out / "results.json").read_text()), load_schema())
    svgs = list(out.glob("*.svg"))
    assert svgs and all(p.stat().st_size > 0 for p in svgs)
    assert (out / "resonators.csv").read_text().startswith("name,")


def test_fit_and_loss_fit_formats(small_bundle, tmp_path):
    assert main(["fit", "--config", str(small_bundle), "--out", str(tmp_path), "--jobs", "1"]) == EXIT_OK
    doc = json.loads((tmp_path / "fits.json").read_text())
    assert doc["resonators"] == [] and len(doc["traces"]) == 30
    assert main(["fit", "--config", str(small_bundle), "--out", str(tmp_path), "--format", "csv",
                 "--jobs", "1"]) == EXIT_OK
    assert (tmp_path / "fits.csv").read_text().count("\n") == 31
    assert main(["loss-fit", "--config", str(small_bundle), "--out", str(tmp_path / "l"), "--format", "csv",
                 "--jobs", "1"]) == EXIT_OK
    assert (tmp_path / "l" / "delta_pi.csv").exists()


def test_calibrate_verb(small_bundle, tmp_path):
    snr = small_bundle.parent / "calibration_snr.csv"
    assert main(["calibrate", str(snr), "--out", str(tmp_path)]) == EXIT_OK
    doc = json.loads((tmp_path / "attenuation.json").read_text())
    att = np.array([p["attenuation_db"] for p in doc["points"]])
    np.testing.assert_allclose(att[[0, -1]], [-62.0, -74.0], atol=1e-9)


def test_dc_verb(tmp_path):
    t = np.arange(7.0, 9.2501, 0.05)
    (tmp_path / "bc2.csv").write_text("temperature_k,bc2_t\n" +
                                      "".join(f"{x:.17g},{0.26 * (9.25 - x):.17g}\n" for x in t))
    tr = np.arange(8.0, 10.5, 0.02)
    (tmp_path / "rt.csv").write_text("temperature_k,resistance_ohm\n" +
                                     "".join(f"{x:.17g},{12.0 if x > 9.25 else 0.0}\n" for x in tr))
    cfg = tmp_path / "dc.yaml"
    cfg.write_text(yaml.safe_dump({"films": [
        {"name": "A", "bc2_file": "bc2.csv", "rt_file": "rt.csv", "rho_10k_uohm_cm": 4.0},
        {"name": "broken", "bc2_file": "missing.csv", "rho_10k_uohm_cm": 2.3},
    ]}))
    assert main(["dc", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_PARTIAL
    rows = json.loads((tmp_path / "o" / "films.json").read_text())["films"]
    assert rows[0]["status"] == "ok" and rows[1]["status"] == "failed"
    assert rows[0]["t_c_k"] == pytest.approx(9.25, abs=0.01)
    assert rows[0]["bc2_zero_t"] == pytest.approx(1.660, abs=1e-3)
    assert round(rows[0]["mean_free_path_m"] * 1e9) == 9


def test_no_inputs_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"inputs": ["*.csv"], "calibration": {"attenuation_db": -70}}))
    assert main(["fit", "--config", str(cfg)]) == EXIT_CONFIG
    assert "no inputs" in capsys.readouterr().err


def test_config_errors_exit_2(tmp_path):
    assert main(["fit"]) == EXIT_CONFIG
    assert main(["fit", "--config", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG
    assert main(["synth"]) == EXIT_CONFIG
    cfg = tmp_path / "c.yaml"
    cfg.write_text("inputs: [a\n")
    assert main(["fit", "--config", str(cfg)]) == EXIT_CONFIG


def test_partial_failure_exit_1(small_bundle, tmp_path):
    cfg = yaml.safe_load(small_bundle.read_text())
    root = small_bundle.parent
    (root / "junk").mkdir(exist_ok=True)
    (root / "junk" / "bad.csv").write_text("# power_dbm: -40\nfrequency_hz,s21_re,s21_im\n1,2\n")
    cfg["inputs"] = cfg["inputs"] + ["junk/bad.csv"]
    p = root / "partial.yaml"
    p.write_text(yaml.safe_dump(cfg))
    assert main(["fit", "--config", str(p), "--out", str(tmp_path), "--jobs", "1"]) == EXIT_PARTIAL


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "resloss", "synth", "--preset", "wafer-like-Q",
                        "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == EXIT_CONFIG
    assert "unknown preset" in r.stderr
