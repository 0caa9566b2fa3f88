import csv
import json
from pathlib import Path

import jsonschema
import pytest

from app.hullshape.io import load_manifest, manifest_schema
from app.main import main

SMALL = ["--grid-points", "16", "--dirs", "90", "--n-schedule", "50,100", "--reps", "3", "--seed", "42"]


def _rows(path: Path):
    with path.open("r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def _manifest(out: Path) -> dict:
    return json.loads((out / "manifest.json").read_text(encoding="utf-8"))


def test_converge_writes_csv_and_manifest(tmp_path):
    out = tmp_path / "run"
    assert main(["converge", *SMALL, "--out", str(out)]) == 0

    manifest = _manifest(out)
    jsonschema.validate(instance=manifest, schema=manifest_schema())
    assert manifest["subcommand"] == "converge"
    assert manifest["seed"] == 42
    assert manifest["config"]["n_schedule"] == [50, 100]
    assert manifest["passed"] is True
    assert "+" in manifest["version"]
    for name in manifest["artifacts"]:
        assert (out / name).exists()

    rows = _rows(out / "convergence.csv")
    assert list(rows[0]) == ["n", "rep", "metric", "value"]
    assert [(r["n"], r["rep"]) for r in rows] == [(n, rep) for n in ("50", "100") for rep in ("0", "1", "2")]
    summary = _rows(out / "convergence_summary.csv")
    assert [r["n"] for r in summary] == ["50", "100"]
    assert load_manifest(out / "manifest.json").subcommand == "converge"


def test_reruns_are_byte_identical(tmp_path):
    for name, threads in (("a", "1"), ("b", "1"), ("c", "2")):
        assert main(["converge", *SMALL, "--threads", threads, "--out", str(tmp_path / name)]) == 0
    for csv_name in ("convergence.csv", "convergence_summary.csv"):
        a = (tmp_path / "a" / csv_name).read_bytes()
        assert a == (tmp_path / "b" / csv_name).read_bytes()
        assert a == (tmp_path / "c" / csv_name).read_bytes()


def test_limit_shape_of_the_half_bridge_is_constant(tmp_path):
    out = tmp_path / "ls"
    assert main(["limit-shape", "--model", "fbb:H=0.5", "--dim", "2", "--dirs", "360", "--out", str(out)]) == 0
    rows = _rows(out / "profile.csv")
    assert len(rows) == 360
    assert list(rows[0]) == ["index", "angle", "theta_1", "theta_2", "value"]
    assert all(abs(float(r["value"]) - 0.5) < 1e-12 for r in rows)
    payload = json.loads((out / "profile.json").read_text(encoding="utf-8"))
    assert payload["provenance"] == "closed-form"
    assert (out / "polygon.csv").exists()


def test_simulate_writes_the_scaled_hull(tmp_path, capsys):
    out = tmp_path / "sim"
    assert main(["simulate", "--n", "200", "--grid-points", "16", "--dirs", "90", "--out", str(out)]) == 0
    summary = json.loads((out / "simulate.json").read_text(encoding="utf-8"))
    assert summary["n"] == 200
    assert summary["perimeter"] > 0
    assert len(_rows(out / "polygon.csv")) == summary["vertices"]
    assert "rho" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [
        ["converge", "--no-such-flag"],
        ["converge", "--mod", "bm"],
        ["limit-shape", "--grid", "16"],
        ["converge", "--n-schedule", "100,10"],
        ["converge", "--dirs", "4"],
        ["converge", "--n-schedule", "a,b"],
        ["moments", "--functional", "volume"],
        ["frobnicate"],
    ],
)
def test_usage_errors_exit_2(argv, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main([*argv, "--out", str(tmp_path)] if argv[0] != "frobnicate" else argv)
    assert exc.value.code == 2


def test_malformed_environment_is_a_usage_error(monkeypatch, tmp_path, capsys):
    monkeypatch.setenv("HULLSHAPE_THREADS", "abc")
    with pytest.raises(SystemExit) as exc:
        main(["converge", *SMALL, "--out", str(tmp_path)])
    assert exc.value.code == 2
    assert "HULLSHAPE_THREADS" in capsys.readouterr().err


def test_model_errors_exit_1(tmp_path, capsys):
    assert main(["converge", *SMALL, "--model", "fbm:H=2", "--out", str(tmp_path)]) == 1
    assert "ModelError" in capsys.readouterr().err
    assert main(["moments", *SMALL, "--dim", "3", "--functional", "area", "--out", str(tmp_path)]) == 1


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("model=fbm:H=0.7\nreps=2\nn-schedule=50,100\ndirs=90\ngrid_points=16\nnested=true\n", encoding="utf-8")
    out = tmp_path / "out"
    assert main(["converge", "--config", str(cfg), "--reps", "3", "--out", str(out)]) == 0
    config = _manifest(out)["config"]
    assert config["model"] == "fbm:H=0.7"
    assert config["reps"] == 3
    assert config["nested"] is True
    assert config["grid_points"] == 16


def test_config_file_unknown_key_exits_2(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour=blue\n", encoding="utf-8")
    with pytest.raises(SystemExit) as exc:
        main(["converge", "--config", str(cfg), "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_threads_fall_back_to_the_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("HULLSHAPE_THREADS", "2")
    out = tmp_path / "env"
    assert main(["converge", *SMALL, "--out", str(out)]) == 0
    assert _manifest(out)["config"]["threads"] == 2


def test_extremes_and_rate(tmp_path):
    assert main(["extremes", *SMALL, "--dim", "1", "--out", str(tmp_path / "ex")]) == 0
    rows = _rows(tmp_path / "ex" / "extremes_summary.csv")
    assert all(float(r["oracle_mean"]) > 0 for r in rows)

    assert main(["rate", *SMALL, "--reference-radius", "0.5", "--out", str(tmp_path / "rate")]) == 0
    verdict = json.loads((tmp_path / "rate" / "rate_verdict.json").read_text(encoding="utf-8"))
    assert verdict["reference"] == "ball(r=0.5)"


def test_moments_subcommand(tmp_path):
    out = tmp_path / "m"
    assert main(["moments", *SMALL, "--functional", "area", "--out", str(out)]) == 0
    rows = _rows(out / "moments.csv")
    assert {r["metric"] for r in rows} == {"area"}
    assert len(rows) == 6


def test_repro_subset(tmp_path, capsys):
    out = tmp_path / "repro"
    assert main(["repro", "--criteria", "2", "--out", str(out)]) == 0
    rows = _rows(out / "acceptance.csv")
    assert [r["id"] for r in rows] == ["2"]
    assert rows[0]["passed"] == "True"
    assert "PASS" in capsys.readouterr().out
