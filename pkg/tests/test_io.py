import csv
import json
import os
import re
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from app.hullshape.config import get_settings, load_config_file, resolve_threads
from app.hullshape.errors import ConfigError
from app.hullshape.geometry import DirectionGrid, SupportProfile, hull_2d
from app.hullshape.io import (
    load_manifest,
    version_string,
    write_manifest,
    write_polygon,
    write_profile,
)
from app.hullshape.schemas import RunManifest, SanityCheck


def read_csv(path: Path):
    with path.open("r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def test_profile_csv_columns(tmp_path):
    grid = DirectionGrid.circle(8)
    path = write_profile(tmp_path / "profile.csv", SupportProfile(grid, np.arange(8.0)))
    rows = read_csv(path)
    assert list(rows[0]) == ["index", "angle", "theta_1", "theta_2", "value"]
    assert float(rows[2]["angle"]) == pytest.approx(np.pi / 2)
    assert [float(r["value"]) for r in rows] == list(np.arange(8.0))


def test_sphere_profile_has_no_angle(tmp_path):
    grid = DirectionGrid.sphere(16, 3)
    rows = read_csv(write_profile(tmp_path / "p.csv", SupportProfile(grid, np.ones(16))))
    assert list(rows[0]) == ["index", "angle", "theta_1", "theta_2", "theta_3", "value"]
    assert rows[0]["angle"] == "nan"


def test_polygon_csv(tmp_path):
    poly = hull_2d(np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]]))
    rows = read_csv(write_polygon(tmp_path / "polygon.csv", poly))
    assert [(float(r["x"]), float(r["y"])) for r in rows] == [(0.0, 0.0), (2.0, 0.0), (0.0, 1.0)]


def test_manifest_round_trip(tmp_path):
    manifest = RunManifest(
        subcommand="converge",
        config={"model": "bm", "reps": 2},
        seed=7,
        version="0.3.0+unknown",
        wall_time_s=0.5,
        checks=[SanityCheck(name="rho_nonnegative", passed=True)],
        artifacts=["convergence.csv"],
    )
    path = write_manifest(tmp_path, manifest)
    assert load_manifest(path) == manifest


def test_invalid_manifest_is_rejected(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"subcommand": "converge", "seed": "seven"}), encoding="utf-8")
    with pytest.raises(jsonschema.ValidationError):
        load_manifest(path)


def test_version_string_format():
    assert re.fullmatch(r"\d+\.\d+\.\d+\+(g[0-9a-f]+|unknown)", version_string())


def test_config_file_keys_are_normalized(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nN-Schedule=100,1000\ngrid_points = 64\nempty=\n", encoding="utf-8")
    assert load_config_file(cfg) == {"n_schedule": "100,1000", "grid_points": "64"}
    with pytest.raises(FileNotFoundError):
        load_config_file(tmp_path / "missing.cfg")


def test_settings_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("HULLSHAPE_THREADS", "3")
    monkeypatch.setenv("HULLSHAPE_LOG_LEVEL", "debug")
    monkeypatch.setenv("HULLSHAPE_CHUNK_PATHS", "128")
    monkeypatch.setenv("HULLSHAPE_OUTPUT_DIR", str(tmp_path))
    settings = get_settings()
    assert settings.threads == 3
    assert settings.log_level == "DEBUG"
    assert settings.chunk_paths == 128
    assert settings.output_dir == tmp_path
    assert resolve_threads(None) == 3


def test_resolve_threads():
    assert resolve_threads(2) == 2
    assert resolve_threads(0) == (os.cpu_count() or 1)
    with pytest.raises(ValueError):
        resolve_threads(-1)


@pytest.mark.parametrize("name", ["HULLSHAPE_THREADS", "HULLSHAPE_CHUNK_PATHS"])
def test_malformed_integer_setting(monkeypatch, name):
    monkeypatch.setenv(name, "abc")
    with pytest.raises(ConfigError, match=name):
        get_settings()
