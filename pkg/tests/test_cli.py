import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from dualfp.cli import EXIT_FAIL, EXIT_INVALID, EXIT_OK, main


def write_config(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_table(path):
    with open(path) as fh:
        header = fh.readline()
        rows = list(csv.DictReader(fh))
    return header, rows


def run(tmp_path, command, config_text="", *extra, out_name="out"):
    args = [command]
    if config_text:
        args += ["--config", write_config(tmp_path, config_text)]
    out = tmp_path / out_name
    code = main(args + ["--out", str(out), *extra])
    return code, out


def test_module_entry_point_version():
    res = subprocess.run([sys.executable, "-m", "dualfp", "--version"], capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.startswith("dualfp ")


def test_missing_subcommand_is_invalid(capsys):
    assert main([]) == EXIT_INVALID


def test_unknown_key_is_invalid(tmp_path, capsys):
    code, _ = run(tmp_path, "scan2d", "[scan2d]\nsteps = 5\nbogus = 1\n")
    assert code == EXIT_INVALID
    assert "bogus" in capsys.readouterr().err


def test_unknown_section_is_invalid(tmp_path, capsys):
    code, _ = run(tmp_path, "scan2d", "[nonsense]\nx = 1\n")
    assert code == EXIT_INVALID


def test_wrong_type_is_invalid(tmp_path, capsys):
    code, _ = run(tmp_path, "simulate", "[simulate]\nn_pairs = \"many\"\n")
    assert code == EXIT_INVALID
    assert "n_pairs" in capsys.readouterr().err


def test_out_of_range_transmission_is_invalid(tmp_path, capsys):
    code, _ = run(tmp_path, "scan2d", "[scan2d]\nt_field = 1.5\nsteps = 3\n")
    assert code == EXIT_INVALID


def test_scan2d_table_has_header_and_grid(tmp_path):
    code, out = run(tmp_path, "scan2d", "[scan2d]\nsteps = 9\n")
    assert code == EXIT_OK
    header, rows = read_table(out)
    assert header.startswith("# dualfp ") and "command=scan2d" in header
    assert len(rows) == 81
    rates = np.array([float(r["rate"]) for r in rows])
    assert rates.max() == pytest.approx(1 / 49, rel=1e-12)
    assert rates.min() == pytest.approx(0.0016, rel=1e-9)
    assert (tmp_path / "out.config.json").exists()


@pytest.mark.parametrize("channel,value", [("TT", 1.0), ("RR", 0.0)])
def test_transparent_mirrors_give_flat_scans(tmp_path, channel, value):
    code, out = run(tmp_path, "scan2d", f"[scan2d]\nt_field = 1.0\nsteps = 7\nchannel = \"{channel}\"\n")
    assert code == EXIT_OK
    _, rows = read_table(out)
    assert all(float(r["rate"]) == value for r in rows)


def test_scan_single_peak_to_valley(tmp_path):
    code, out = run(tmp_path, "scan-single", "[scan-single]\nt_values = [0.5, 0.2]\nsteps = 401\n")
    assert code == EXIT_OK
    _, rows = read_table(out)
    for t in (0.5, 0.2):
        rates = np.array([float(r["rate"]) for r in rows if float(r["t_field"]) == t])
        r4 = (1 - t * t) ** 2
        assert rates.max() / rates.min() == pytest.approx(((1 + r4) / (1 - r4)) ** 2, rel=1e-9)


def test_json_format(tmp_path):
    code, out = run(tmp_path, "scan-single", "[scan-single]\nsteps = 5\nt_values = [0.5]\n", "--format", "json")
    assert code == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["columns"][0] == "t_field" and len(doc["rows"]) == 5


def test_oracle_check_default_passes(tmp_path):
    code, out = run(tmp_path, "oracle-check")
    assert code == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["passed"]
    assert all(g["passed"] for g in doc["grid"])


def test_oracle_check_reports_insufficient_truncation(tmp_path, capsys):
    cfg = "[oracle-check]\nt_values = [0.2]\nn_theta = 2\nl_max = 2\ntolerance = 1e-12\n"
    code, out = run(tmp_path, "oracle-check", cfg)
    assert code == EXIT_FAIL
    err = capsys.readouterr().err
    assert "l_max" in err and "tail bound" in err
    doc = json.loads(out.read_text())
    assert not doc["passed"]
    assert any(g["failures"] for g in doc["grid"])


def test_simulate_passes_and_reruns_from_sidecar(tmp_path):
    cfg = ("[simulate]\nt_field = 0.5\ntheta = 0.4\nn_pairs = 50000\nseed = 11\n"
           f"clicks_out = \"{tmp_path / 'a.csv'}\"\n")
    code, out = run(tmp_path, "simulate", cfg)
    assert code == EXIT_OK
    report = json.loads(out.read_text())
    assert report["passed"] and report["seed"] == 11

    sidecar = json.loads((tmp_path / "out.config.json").read_text())
    sidecar["simulate"]["clicks_out"] = str(tmp_path / "b.csv")
    rerun = tmp_path / "rerun.json"
    rerun.write_text(json.dumps(sidecar))
    assert main(["simulate", "--config", str(rerun), "--out", str(tmp_path / "out2")]) == EXIT_OK
    a, b = (tmp_path / "a.csv").read_bytes(), (tmp_path / "b.csv").read_bytes()
    assert a == b
    assert a.startswith(b"# dualfp ")

    assert main(["simulate", "--config", str(rerun), "--seed", "12", "--out", str(tmp_path / "out3")]) == EXIT_OK
    assert (tmp_path / "b.csv").read_bytes() != a


def test_simulate_thread_count_does_not_change_output(tmp_path):
    base = "[simulate]\nn_pairs = 40000\nseed = 5\ntiming_jitter_sigma = 1e-11\n"
    main(["simulate", "--config", write_config(tmp_path, base + f"clicks_out = \"{tmp_path / 'one.csv'}\"\n", "a.toml"),
          "--out", str(tmp_path / "r1")])
    main(["simulate", "--config", write_config(tmp_path, base + f"clicks_out = \"{tmp_path / 'four.csv'}\"\n", "b.toml"),
          "--out", str(tmp_path / "r4"), "--threads", "4"])
    assert (tmp_path / "one.csv").read_bytes() == (tmp_path / "four.csv").read_bytes()


def test_simulate_jsonl_clicks(tmp_path):
    cfg = f"[simulate]\nn_pairs = 1000\nclicks_out = \"{tmp_path / 'c.jsonl'}\"\n"
    assert run(tmp_path, "simulate", cfg)[0] == EXIT_OK
    first = json.loads((tmp_path / "c.jsonl").read_text().splitlines()[0])
    assert set(first) >= {"detector", "timestamp_seconds"}


def test_simulate_efficiency_correction(tmp_path):
    cfg = "[simulate]\nn_pairs = 200000\nefficiency = 0.5\nefficiency_correct = true\n"
    assert run(tmp_path, "simulate", cfg)[0] == EXIT_OK


def test_simulate_aliasing_interval_is_invalid(tmp_path, capsys):
    cfg = "[simulate]\nn_pairs = 1000\npair_interval = 2e-9\n"
    assert run(tmp_path, "simulate", cfg)[0] == EXIT_INVALID


def test_negative_seed_is_invalid(tmp_path, capsys):
    assert main(["simulate", "--seed", "-1", "--out", str(tmp_path / "x")]) == EXIT_INVALID


SPECTRAL = "[{section}]\nt_field = 0.2\nwindow_trips = 300\nsteps = 600\nl_max = 200\n"


def test_spectral_scan_table(tmp_path):
    code, out = run(tmp_path, "spectral-scan", SPECTRAL.format(section="spectral-scan"))
    assert code == EXIT_OK
    header, rows = read_table(out)
    assert "command=spectral-scan" in header
    assert len(rows) == 600


def test_spectral_readout_finds_modulation(tmp_path):
    cfg = SPECTRAL.format(section="spectral-readout") + "modulation_fsr = [0.2, 0.7]\n"
    code, out = run(tmp_path, "spectral-readout", cfg)
    assert code == EXIT_OK
    doc = json.loads(out.read_text())
    found = sorted(p["offset_fsr_fraction"] for p in doc["peaks"])
    assert found == pytest.approx([0.2, 0.7], abs=2e-3)


def test_spectral_readout_from_scan_file(tmp_path):
    scan_cfg = SPECTRAL.format(section="spectral-scan") + "modulation_fsr = [0.35]\n"
    assert run(tmp_path, "spectral-scan", scan_cfg, out_name="scan.csv")[0] == EXIT_OK
    cfg = SPECTRAL.format(section="spectral-readout") + f"scan_file = \"{tmp_path / 'scan.csv'}\"\n"
    code, out = run(tmp_path, "spectral-readout", cfg)
    assert code == EXIT_OK
    doc = json.loads(out.read_text())
    assert [round(p["offset_fsr_fraction"], 2) for p in doc["peaks"]] == [0.35]
