# app/hullshape/io.py
import csv
import json
import logging
import subprocess
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import jsonschema
import numpy as np

from app.hullshape import __version__
from app.hullshape.geometry import Polygon2D, SupportProfile
from app.hullshape.schemas import (
    ConvergenceRecord,
    ExtremeRecord,
    MomentRecord,
    RateSeries,
    RunManifest,
)

logger = logging.getLogger("hullshape.io")

Row = Tuple[int, int, str, float]


def version_string() -> str:
    """``<version>+g<short sha>``, or ``+unknown`` outside a git checkout."""
    try:
        sha = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
            check=True,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        sha = ""
    return f"{__version__}+g{sha}" if sha else f"{__version__}+unknown"


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def _fmt(v: Any) -> Any:
    if isinstance(v, float):
        return repr(v)
    return v


def write_json(path: Path, payload: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return path


# Bodies ----------------------------------------------------------------------------

def write_profile(path: Path, profile: SupportProfile) -> Path:
    grid = profile.grid
    dim = grid.dim
    angles = grid.angles if dim == 2 else np.full(len(grid), np.nan)
    header = ["index", "angle"] + [f"theta_{i + 1}" for i in range(dim)] + ["value"]
    rows = (
        [j, float(angles[j])] + [float(c) for c in grid.directions[j]] + [float(profile.values[j])]
        for j in range(len(grid))
    )
    return _write_csv(path, header, rows)


def profile_payload(profile: SupportProfile, **meta: Any) -> Dict[str, Any]:
    grid = profile.grid
    return {
        "grid": {"dim": grid.dim, "dirs": len(grid), "mesh": grid.mesh, "kind": grid.kind},
        "directions": grid.directions.tolist(),
        "values": profile.values.tolist(),
        **meta,
    }


def write_polygon(path: Path, poly: Polygon2D) -> Path:
    rows = ([j, float(x), float(y)] for j, (x, y) in enumerate(poly.vertices))
    return _write_csv(path, ["index", "x", "y"], rows)


# Records ---------------------------------------------------------------------------

def convergence_rows(records: Sequence[ConvergenceRecord]) -> List[Row]:
    rows: List[Row] = []
    for r in records:
        for rep, value in enumerate(r.rho):
            rows.append((r.n, rep, "rho", value))
            if r.rho_fine is not None:
                rows.append((r.n, rep, "rho_fine", r.rho_fine[rep]))
    return rows


def moment_rows(records: Sequence[MomentRecord]) -> List[Row]:
    return [(r.n, rep, r.functional, v) for r in records for rep, v in enumerate(r.values)]


def extreme_rows(records: Sequence[ExtremeRecord]) -> List[Row]:
    return [(r.n, rep, "z", v) for r in records for rep, v in enumerate(r.z)]


def _summary(records: Sequence[Any], fields: Sequence[str]) -> Tuple[List[str], List[List[Any]]]:
    rows = []
    for r in records:
        data = r.model_dump()
        rows.append([data.get(f) for f in fields])
    return list(fields), rows


SUMMARY_FIELDS: Dict[str, Tuple[str, ...]] = {
    "convergence": ("n", "mean", "se", "rate", "rate_se", "mean_fine", "resolution_divergence", "resolution_flag"),
    "moments": ("n", "functional", "power", "estimate", "se", "target", "ratio", "relative_gap"),
    "extremes": ("n", "mean", "se", "target", "min_mean", "oracle_mean", "oracle_sd"),
    "rate": ("n", "rate", "rate_se"),
}


def write_records(out_dir: Path, experiment: str, records: Sequence[Any]) -> List[Path]:
    """
    ``<experiment>.csv`` (long: n, rep, metric, value), ``<experiment>_summary.csv``
    (one row per n) and ``<experiment>.json`` with the full records.
    """
    if experiment == "convergence":
        long_rows = convergence_rows(records)
    elif experiment == "moments":
        long_rows = moment_rows(records)
    elif experiment == "extremes":
        long_rows = extreme_rows(records)
    elif experiment == "rate":
        long_rows = []
    else:
        raise ValueError(f"unknown experiment {experiment!r}")

    paths = []
    if long_rows:
        paths.append(_write_csv(out_dir / f"{experiment}.csv", ["n", "rep", "metric", "value"], long_rows))
    header, rows = _summary(records, SUMMARY_FIELDS[experiment])
    paths.append(_write_csv(out_dir / f"{experiment}_summary.csv", header, rows))
    paths.append(write_json(out_dir / f"{experiment}.json", [r.model_dump(mode="json") for r in records]))
    return paths


def write_rate_series(out_dir: Path, series: RateSeries) -> List[Path]:
    paths = write_records(out_dir, "rate", series.records)
    paths.append(write_json(out_dir / "rate_verdict.json", {"non_increasing": series.non_increasing, "reference": series.reference}))
    return paths


# Manifest --------------------------------------------------------------------------

def manifest_schema() -> Dict[str, Any]:
    return RunManifest.model_json_schema()


def write_manifest(out_dir: Path, manifest: RunManifest) -> Path:
    payload = manifest.model_dump(mode="json")
    jsonschema.validate(instance=payload, schema=manifest_schema())
    path = write_json(out_dir / "manifest.json", payload)
    logger.info("manifest_written path=%s passed=%s artifacts=%d", path, manifest.passed, len(manifest.artifacts))
    return path


def load_manifest(path: Path) -> RunManifest:
    payload = json.loads(path.read_text(encoding="utf-8"))
    jsonschema.validate(instance=payload, schema=manifest_schema())
    return RunManifest.model_validate(payload)
