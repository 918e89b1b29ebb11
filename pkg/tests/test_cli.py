import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from fourier_cbc.certify import Certificate
from fourier_cbc.cli import EXIT_FAILED, EXIT_OK, EXIT_USAGE, main

ROOT = Path(__file__).resolve().parents[1]


def small_config(tmp_path, **edits):
    text = (ROOT / "configs" / "barr3.toml").read_text()
    subs = {"samples = 1000": "samples = 200", "m_per_axis = 4": "m_per_axis = 3",
            "oversample = 8": "oversample = 4", "runs = 10000": "runs = 200"}
    subs.update(edits)
    for old, new in subs.items():
        assert old in text
        text = text.replace(old, new)
    path = tmp_path / "run.toml"
    path.write_text(text)
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = small_config(tmp)
    data, cert = tmp / "data.csv", tmp / "cert.json"
    assert main(["gen", "--config", str(cfg), "--out", str(data)]) == EXIT_OK
    with pytest.warns(UserWarning):
        assert main(["certify", "--config", str(cfg), "--data", str(data), "--out", str(cert)]) == EXIT_OK
    return tmp, cfg, data, cert


def test_gen_writes_deterministic_dataset(workspace, tmp_path):
    _, cfg, data, _ = workspace
    again = tmp_path / "again.csv"
    assert main(["gen", "--config", str(cfg), "--out", str(again)]) == EXIT_OK
    assert again.read_bytes() == data.read_bytes()
    other = tmp_path / "other.csv"
    assert main(["gen", "--config", str(cfg), "--out", str(other), "--seed", "3"]) == EXIT_OK
    assert other.read_bytes() != data.read_bytes()
    header = data.read_text().splitlines()[0]
    assert header == "x1,x2,xp1,xp2" and len(data.read_text().splitlines()) == 201


def test_gen_with_zero_samples_is_usage_error(tmp_path, capsys):
    cfg = small_config(tmp_path, **{"samples = 1000": "samples = 0"})
    assert main(["gen", "--config", str(cfg), "--out", str(tmp_path / "d.csv")]) == EXIT_USAGE
    assert "samples" in capsys.readouterr().err


def test_missing_config_is_usage_error(tmp_path, capsys):
    assert main(["gen", "--out", str(tmp_path / "d.csv")]) == EXIT_USAGE
    assert main(["certify", "--config", str(tmp_path / "nope.toml")]) == EXIT_USAGE
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == 2


def test_unknown_config_key_is_usage_error(tmp_path, capsys):
    cfg = small_config(tmp_path, **{"horizon = 5": "horizon = 5\nhorizn = 4"})
    assert main(["certify", "--config", str(cfg)]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "problem.horizn" in err and f"{cfg}:" in err


def test_certificate_json(workspace):
    cert = json.loads(workspace[3].read_text())
    assert cert["schema_version"] == 1
    assert 0.0 <= cert["probability"] <= 1.0
    assert cert["provenance"]["dataset_sha256"]


def test_check_pass_and_corrupted(workspace, tmp_path, capsys):
    _, cfg, data, cert = workspace
    report = tmp_path / "report.json"
    assert main(["check", str(cert), "--data", str(data), "--out", str(report)]) == EXIT_OK
    assert capsys.readouterr().out.strip().endswith("PASS")
    assert json.loads(report.read_text())["ok"] is True
    bad = Certificate.load(cert)
    bad.b = np.zeros_like(bad.b)
    bad_path = tmp_path / "bad.json"
    bad.save(bad_path)
    assert main(["check", str(bad_path), "--data", str(data)]) == EXIT_FAILED
    assert capsys.readouterr().out.strip().endswith("FAIL")


def test_check_kernel_mismatch_is_explicit(workspace, tmp_path, capsys):
    tmp, _, data, cert = workspace
    other = small_config(tmp_path, **{"lengthscales = [2.993, 4.629]": "lengthscales = [3.5, 4.629]"})
    assert main(["check", str(cert), "--data", str(data), "--config", str(other)]) == EXIT_USAGE
    assert "different kernel parameters" in capsys.readouterr().err
    assert main(["check", str(cert), "--data", str(data), "--config", str(small_config(tmp_path))]) == EXIT_OK
    data3 = tmp_path / "d3.csv"
    data3.write_text("x1,x2,x3,xp1,xp2,xp3\n0,0,0,0,0,0\n")
    assert main(["check", str(cert), "--data", str(data3)]) == EXIT_USAGE
    assert "coordinates" in capsys.readouterr().err


def test_malformed_certificate_is_usage_error(workspace, tmp_path, capsys):
    _, _, data, cert = workspace
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["check", str(path), "--data", str(data)]) == EXIT_USAGE
    doc = json.loads(cert.read_text())
    doc["schema_version"] = 7
    path.write_text(json.dumps(doc))
    assert main(["export", str(path), "--out", str(tmp_path / "s.csv")]) == EXIT_USAGE
    assert "schema" in capsys.readouterr().err


def test_mc_runs_and_warns_on_single_run(workspace, tmp_path, capsys):
    _, cfg, _, cert = workspace
    out = tmp_path / "mc.json"
    assert main(["mc", str(cert), "--config", str(cfg), "--runs", "100", "--out", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["runs"] == 100 and "consistent" in doc
    capsys.readouterr()
    assert main(["mc", "--config", str(cfg), "--runs", "1"]) == EXIT_OK
    assert "warning" in capsys.readouterr().err
    assert main(["mc", "--config", str(cfg), "--runs", "0"]) == EXIT_USAGE
    assert main(["mc", "--config", str(cfg), "--confidence", "1.0"]) == EXIT_USAGE


def test_export_csv_with_levels(workspace, tmp_path):
    cert = workspace[3]
    out = tmp_path / "surface.csv"
    assert main(["export", str(cert), "--out", str(out), "--resolution", "7"]) == EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0] == "x1,x2,B,level" and len(lines) == 50
    levels = {int(ln.rsplit(",", 1)[1]) for ln in lines[1:]}
    assert levels <= {-1, 0, 1}
    assert main(["export", str(cert), "--out", str(out), "--slice", "x2=0"]) == EXIT_USAGE
    assert main(["export", str(cert), "--out", str(out), "--resolution", "1"]) == EXIT_USAGE


def test_export_slice_for_three_dimensions(workspace, tmp_path):
    doc = json.loads(workspace[3].read_text())
    cert = Certificate.from_dict(doc)
    # lift the 2-D certificate to 3-D by giving it a constant third axis
    from fourier_cbc.geometry import Box, Domain
    from fourier_cbc.spectral import build_basis
    from fourier_cbc.kernels import KernelParams
    dom = Domain([0.0, 0.0, 0.0], [1.0, 1.0, 1.0])
    basis = build_basis(2, KernelParams(1.0, [0.5, 0.5, 0.5]), dom)
    cert.basis, cert.domain = basis, dom
    cert.b = np.random.default_rng(0).normal(size=basis.dim)
    cert.initial, cert.unsafe = Box([0.0] * 3, [0.1] * 3), Box([0.9] * 3, [1.0] * 3)
    path = tmp_path / "c3.json"
    cert.save(path)
    out = tmp_path / "s3.csv"
    assert main(["export", str(path), "--out", str(out)]) == EXIT_USAGE
    assert main(["export", str(path), "--out", str(out), "--slice", "x3=0.5", "--resolution", "5"]) == EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0] == "x1,x2,B,level" and len(lines) == 26
    assert main(["export", str(path), "--out", str(out), "--slice", "x1=0.2", "--resolution", "5"]) == EXIT_OK
    assert out.read_text().splitlines()[0] == "x2,x3,B,level"


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "fourier_cbc.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("gen", "certify", "check", "mc", "export"):
        assert cmd in proc.stdout
