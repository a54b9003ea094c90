import csv
import json

import numpy as np
import pytest

from pulshom import __version__
from pulshom.cli import main
from pulshom.config import bundled_config_path, config_hash, load_config


def _read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith(f"# pulshom {__version__} config ")
    rows = list(csv.DictReader(lines[1:]))
    return [{k: float(v) for k, v in r.items()} for r in rows]


def _run(args, tmp_path):
    return main(args + ["--out", str(tmp_path)])


def test_cell_on_empty_program(tmp_path):
    assert _run(["cell", "--config", "builtin:empty", "--h", "1/16", "--ns", "8"], tmp_path) == 0
    rows = _read_csv(tmp_path / "slices.csv")
    assert len(rows) == 8
    for r in rows:
        assert (r["D11"], r["D12"], r["D22"], r["V1"], r["V2"], r["theta"]) == (1.0, 0.0, 1.0, 0.0, 0.0, 1.0)


def test_cell_on_shuttle_and_hash(tmp_path):
    assert _run(["cell", "--config", "builtin:shuttle", "--h", "1/16", "--ns", "8"], tmp_path) == 0
    coeff = _read_csv(tmp_path / "coefficients.csv")[0]
    assert coeff["V1"] > 0
    assert abs(coeff["V2"]) < 1e-10
    cfg = load_config(bundled_config_path("shuttle"))
    cfg["discretization"]["h"] = 1 / 16
    cfg["discretization"]["n_s"] = 8
    cfg["verify"]["n_s"] = 8
    h = config_hash(cfg)
    assert (tmp_path / "slices.csv").read_text().splitlines()[0].endswith(h)
    meta = json.loads((tmp_path / "cell.json").read_text())
    assert meta["config_hash"] == h
    assert len(list((tmp_path / "correctors").glob("slice_*.vtk"))) == 8
    assert (tmp_path / "slices.plot").exists()


def test_malformed_config_exits_with_input_error(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("discretization:\n  h: 1/32\n  n_S: 4\n")
    assert main(["cell", "--config", str(bad), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "line 3, column 3" in err and "n_S" in err


def test_too_few_slices_is_an_input_error(tmp_path):
    assert _run(["cell", "--config", "builtin:shuttle", "--ns", "4"], tmp_path) == 2


def test_macro_without_drift_is_symmetric(tmp_path):
    assert _run(["macro", "--config", "builtin:no_drift_macro"], tmp_path) == 0
    rows = _read_csv(tmp_path / "macro_final.csv")
    vals = {(round(r["x1"], 9), round(r["x2"], 9)): r["u"] for r in rows}
    for (x1, x2), u in vals.items():
        assert u == pytest.approx(vals[(round(1 - x1, 9), round(1 - x2, 9))], abs=1e-12)
    diag = _read_csv(tmp_path / "macro_diagnostics.csv")
    mass = np.array([r["mass"] for r in diag])
    assert np.max(np.abs(np.diff(mass))) < 1e-8 * mass[0]


def test_sweep_is_monotone(tmp_path):
    assert _run(["sweep", "--config", "builtin:sweep", "--h", "1/16", "--ns", "8"], tmp_path) == 0
    rows = _read_csv(tmp_path / "sweep.csv")
    assert [r["a"] for r in rows] == [0.03, 0.05, 0.08]
    assert all(r["lambda1"] > r["lambda2"] for r in rows)
    v1 = [r["V1"] for r in rows]
    assert v1[0] > v1[1] > v1[2] > 0


def test_compare_reports_decreasing_errors(tmp_path):
    cfg = tmp_path / "cmp.yaml"
    cfg.write_text(bundled_config_path("smooth_data").read_text().replace("T: 0.125", "T: 0.0625"))
    assert _run(["compare", "--config", str(cfg), "--h", "1/16", "--ns", "8"], tmp_path) == 0
    rows = _read_csv(tmp_path / "errors.csv")
    assert [r["eps"] for r in rows] == [0.25, 0.125]
    assert rows[1]["block_error"] < rows[0]["block_error"]
    assert all(r["max_mass_change"] < 1e-8 for r in rows)
    assert (tmp_path / "errors_time.csv").exists()


def test_verify_passes(tmp_path, capsys):
    assert _run(["verify"], tmp_path) == 0
    report = json.loads((tmp_path / "verify.json").read_text())
    assert report["passed"]
    assert {c["name"] for c in report["checks"]} >= {"compatibility", "lambda_sign", "mass_conservation"}


def test_verify_with_flipped_normal_fails(tmp_path, capsys):
    assert _run(["verify", "--flip-normal"], tmp_path) == 1
    report = json.loads((tmp_path / "verify.json").read_text())
    failed = {c["name"] for c in report["checks"] if not c["passed"]}
    assert "compatibility" in failed


def test_verify_with_too_few_slices_fails(tmp_path, capsys):
    assert _run(["verify", "--ns", "2"], tmp_path) == 1
    assert "InsufficientSlices" in capsys.readouterr().out


def test_bad_eps_argument():
    with pytest.raises(SystemExit):
        main(["micro", "--eps", "0,1/4"])
