from dotenv import load_dotenv
load_dotenv()

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from numpy.linalg import LinAlgError
from pydantic import ValidationError

from app.hullshape.acceptance import SCALES, format_table, run_acceptance
from app.hullshape.config import get_settings, load_config_file
from app.hullshape.errors import ConfigError, GeometryError, HullShapeError
from app.hullshape.experiments import (
    FUNCTIONALS,
    run_convergence,
    run_extremes,
    run_hull,
    run_moments,
    run_rate_diagnostic,
)
from app.hullshape.geometry import DirectionGrid, Polygon2D, area, diameter, hausdorff, perimeter, reconstruct_polygon
from app.hullshape.io import (
    profile_payload,
    version_string,
    write_json,
    write_manifest,
    write_polygon,
    write_profile,
    write_records,
    write_rate_series,
)
from app.hullshape.limit_shape import limit_shape
from app.hullshape.models import TimeGrid, parse_model_spec
from app.hullshape.randsrc import SeedSpec
from app.hullshape.schemas import ExperimentConfig, RunManifest, SanityCheck

logger = logging.getLogger("hullshape.cli")

# flags that are not ExperimentConfig fields
_CLI_ONLY = {"subcommand", "config", "out", "log_level", "n", "functional", "power", "theta", "scale", "criteria"}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _int_list(text: str) -> List[int]:
    try:
        return [int(float(x)) if "e" in x.lower() else int(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> List[float]:
    try:
        return [float(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in _TRUE:
        return True
    if value in _FALSE:
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_common(p: argparse.ArgumentParser, experiment: bool = True) -> None:
    g = p.add_argument_group("experiment")
    g.add_argument("--seed", type=int, default=0, help="master seed, unsigned 64-bit")
    g.add_argument("--threads", type=int, default=None, help="worker threads, 0 = auto (env HULLSHAPE_THREADS)")
    if experiment:
        _add_experiment(g)
    o = p.add_argument_group("output")
    o.add_argument("--out", default=None, help="output directory (default: $HULLSHAPE_OUTPUT_DIR/<subcommand>)")
    o.add_argument("--config", default=None, help="key=value config file; command-line flags override it")
    o.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING ... (env HULLSHAPE_LOG_LEVEL)")


def _add_experiment(g: argparse._ArgumentGroup) -> None:
    g.add_argument("--model", default="bm", help="bm | fbm:H=<h> | fbb:H=<h> | singleton:var=<v> (default: bm)")
    g.add_argument("--dim", type=int, default=2, help="dimension d (default: 2)")
    g.add_argument("--axis-scales", type=_float_list, default=None, help="per-axis scale factors c_1,...,c_d")
    g.add_argument("--grid-points", type=int, default=512, help="time grid size k (default: 512)")
    g.add_argument("--dirs", type=int, default=720, help="direction grid size q (default: 720)")
    g.add_argument("--n-schedule", type=_int_list, default=[100, 1000, 10000], help="comma-separated sample sizes")
    g.add_argument("--reps", type=int, default=None, help="replications m per n (default: 32 up to n=10^4, 8 beyond)")
    g.add_argument("--chunk-paths", type=int, default=None, help="paths per sampling chunk (env HULLSHAPE_CHUNK_PATHS)")
    g.add_argument("--two-resolution", action="store_true", help="also evaluate every run on the 2k-point grid")
    g.add_argument("--nested", action="store_true", help="one growing sample per replication, snapshot at each n")


def build_parser() -> Dict[str, argparse.ArgumentParser]:
    parser = argparse.ArgumentParser(
        prog="python -m app.main",
        allow_abbrev=False,
        description="Convex hulls of Gaussian sample paths and their limit shapes.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="subcommand")
    parsers: Dict[str, argparse.ArgumentParser] = {"": parser}

    p = sub.add_parser("simulate", allow_abbrev=False, help="one hull W_n and its normalization")
    _add_common(p)
    p.add_argument("--n", type=int, default=1000, help="number of paths (default: 1000)")
    parsers["simulate"] = p

    p = sub.add_parser("limit-shape", allow_abbrev=False, help="support profile of the limit shape W")
    _add_common(p)
    parsers["limit-shape"] = p

    p = sub.add_parser("converge", allow_abbrev=False, help="Hausdorff distance to the limit shape across n")
    _add_common(p)
    parsers["converge"] = p

    p = sub.add_parser("moments", allow_abbrev=False, help="moments of homogeneous functionals of the scaled hull")
    _add_common(p)
    p.add_argument("--functional", choices=sorted(FUNCTIONALS), default="perimeter")
    p.add_argument("--power", type=float, default=1.0, help="moment order (default: 1)")
    parsers["moments"] = p

    p = sub.add_parser("extremes", allow_abbrev=False, help="normalized directional maxima Z_n")
    _add_common(p)
    p.add_argument("--theta", type=_float_list, default=None, help="unit direction (default: first axis)")
    parsers["extremes"] = p

    p = sub.add_parser("rate", allow_abbrev=False, help="sqrt(ln n) * rho_n rate diagnostic")
    _add_common(p)
    p.add_argument("--reference-radius", type=float, default=None, help="compare against the ball of this radius")
    parsers["rate"] = p

    p = sub.add_parser("repro", allow_abbrev=False, help="run the fixed acceptance suite")
    _add_common(p, experiment=False)
    p.add_argument("--scale", choices=sorted(SCALES), default="quick")
    p.add_argument("--criteria", type=_int_list, default=None, help="subset of criteria ids, e.g. 1,2,8")
    parsers["repro"] = p
    return parsers


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse flags; a --config file supplies defaults that explicit flags override."""
    parsers = build_parser()
    parser = parsers[""]
    args = parser.parse_args(argv)
    if not args.config:
        return args

    sub = parsers[args.subcommand]
    try:
        values = load_config_file(Path(args.config))
    except FileNotFoundError:
        sub.error(f"config file not found: {args.config}")
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    defaults: Dict[str, Any] = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None:
            sub.error(f"unknown config key {key!r} in {args.config}")
        try:
            if isinstance(action, argparse._StoreTrueAction):
                defaults[key] = _bool(raw)
            elif action.type is not None:
                defaults[key] = action.type(raw)
            else:
                defaults[key] = raw
        except (argparse.ArgumentTypeError, ValueError) as exc:
            sub.error(f"config key {key!r}: {exc}")
        if action.choices is not None and defaults[key] not in action.choices:
            sub.error(f"config key {key!r}: {raw!r} is not one of {sorted(action.choices)}")
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    settings = get_settings()
    fields = {k: v for k, v in vars(args).items() if k not in _CLI_ONLY and v is not None}
    fields.setdefault("threads", settings.threads)
    fields.setdefault("chunk_paths", settings.chunk_paths)
    return ExperimentConfig(**fields)


# Subcommands -----------------------------------------------------------------------

def _simulate(args: argparse.Namespace, config: ExperimentConfig, out: Path, checks: List[SanityCheck]) -> List[Path]:
    model = parse_model_spec(config.model, dim=config.dim, axis_scales=config.axis_scales)
    dirs = DirectionGrid.for_dim(config.dim, config.dirs)
    result = run_hull(model, config.grid_points, args.n, SeedSpec(config.seed, 0), dir_grid=dirs, chunk_paths=config.chunk_paths)
    limit = limit_shape(model, TimeGrid.uniform(config.grid_points), dirs)
    rho = hausdorff(result.scaled_profile, limit.profile)
    summary: Dict[str, Any] = {"n": args.n, "rho": rho.value, "mesh_error": rho.mesh_error}
    paths = [write_profile(out / "profile.csv", result.scaled_profile)]
    if isinstance(result.scaled, Polygon2D):
        paths.append(write_polygon(out / "polygon.csv", result.scaled))
        summary.update(
            vertices=len(result.scaled),
            perimeter=perimeter(result.scaled),
            area=area(result.scaled),
            diameter=diameter(result.scaled),
        )
    paths.append(write_json(out / "simulate.json", summary))
    checks.append(SanityCheck(name="rho_nonnegative", passed=rho.value >= 0.0))
    print(json.dumps(summary, indent=2))
    return paths


def _limit_shape(args: argparse.Namespace, config: ExperimentConfig, out: Path, checks: List[SanityCheck]) -> List[Path]:
    model = parse_model_spec(config.model, dim=config.dim, axis_scales=config.axis_scales)
    dirs = DirectionGrid.for_dim(config.dim, config.dirs)
    limit = limit_shape(model, TimeGrid.uniform(config.grid_points), dirs)
    paths = [
        write_profile(out / "profile.csv", limit.profile),
        write_json(
            out / "profile.json",
            profile_payload(limit.profile, model=model.spec, provenance=limit.provenance, grid_points=limit.grid_points),
        ),
    ]
    if config.dim == 2:
        try:
            paths.append(write_polygon(out / "polygon.csv", reconstruct_polygon(limit.profile)))
        except GeometryError as exc:
            logger.warning("polygon_skipped reason=%s", exc)
    checks.append(SanityCheck(name="profile_nonnegative", passed=bool(limit.profile.values.min() >= 0.0)))
    print(f"limit shape {model.spec}: provenance={limit.provenance} min={limit.profile.values.min():.6g} max={limit.profile.values.max():.6g}")
    return paths


def _converge(args: argparse.Namespace, config: ExperimentConfig, out: Path, checks: List[SanityCheck]) -> List[Path]:
    records = run_convergence(config, checks=checks)
    for r in records:
        print(f"n={r.n:>8}  rho={r.mean:.4f} +/- {r.se:.4f}  rate={r.rate:.4f}")
    return write_records(out, "convergence", records)


def _moments(args: argparse.Namespace, config: ExperimentConfig, out: Path, checks: List[SanityCheck]) -> List[Path]:
    records = run_moments(config, args.functional, power=args.power, checks=checks)
    for r in records:
        print(f"n={r.n:>8}  {r.functional}^{r.power:g}={r.estimate:.5f} +/- {r.se:.5f}  ratio={r.ratio:.4f}")
    return write_records(out, "moments", records)


def _extremes(args: argparse.Namespace, config: ExperimentConfig, out: Path, checks: List[SanityCheck]) -> List[Path]:
    theta = args.theta or [1.0] + [0.0] * (config.dim - 1)
    records = run_extremes(config, theta, checks=checks)
    for r in records:
        oracle = f"{r.oracle_mean:.4f}" if r.oracle_mean is not None else "n/a"
        print(f"n={r.n:>8}  Z={r.mean:.4f} +/- {r.se:.4f}  sigma={r.target:.4f}  oracle={oracle}")
    return write_records(out, "extremes", records)


def _rate(args: argparse.Namespace, config: ExperimentConfig, out: Path, checks: List[SanityCheck]) -> List[Path]:
    series = run_rate_diagnostic(config, checks=checks)
    for r in series.records:
        print(f"n={r.n:>8}  sqrt(ln n)*rho={r.rate:.4f} +/- {r.rate_se:.4f}")
    print(f"non-increasing: {series.non_increasing} (reference: {series.reference})")
    return write_rate_series(out, series)


def _repro(args: argparse.Namespace, config: ExperimentConfig, out: Path, checks: List[SanityCheck]) -> List[Path]:
    results = run_acceptance(args.scale, seed=config.seed, threads=config.threads, only=args.criteria)
    print(format_table(results))
    out.mkdir(parents=True, exist_ok=True)
    path = out / "acceptance.csv"
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["id", "title", "passed", "detail", "seconds"])
        for r in results:
            writer.writerow([r.id, r.title, r.passed, r.detail, f"{r.seconds:.3f}"])
    checks.extend(SanityCheck(name=f"criterion_{r.id}", passed=r.passed, detail=r.detail) for r in results)
    return [path, write_json(out / "acceptance.json", [r.model_dump(mode="json") for r in results])]


HANDLERS = {
    "simulate": _simulate,
    "limit-shape": _limit_shape,
    "converge": _converge,
    "moments": _moments,
    "extremes": _extremes,
    "rate": _rate,
    "repro": _repro,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    parsers = build_parser()
    try:
        settings = get_settings()
    except ConfigError as exc:
        parsers[args.subcommand].error(str(exc))
    logging.basicConfig(
        level=(args.log_level or settings.log_level).upper(),
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )
    try:
        config = experiment_config(args)
    except ValidationError as exc:
        parsers[args.subcommand].error(str(exc).replace("\n", " "))

    out = Path(args.out) if args.out else settings.output_dir / args.subcommand
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    checks: List[SanityCheck] = []
    try:
        artifacts = HANDLERS[args.subcommand](args, config, out, checks)
    except (HullShapeError, LinAlgError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        logger.error("run_failed subcommand=%s error=%s", args.subcommand, exc)
        return 1

    effective = config.model_dump(mode="json")
    effective.update({k: v for k, v in vars(args).items() if k in _CLI_ONLY - {"subcommand", "config", "log_level"}})
    manifest = RunManifest(
        subcommand=args.subcommand,
        config=effective,
        seed=config.seed,
        version=version_string(),
        wall_time_s=round(time.perf_counter() - t0, 3),
        checks=checks,
        artifacts=sorted(str(p.relative_to(out)) for p in artifacts),
        passed=all(c.passed for c in checks),
    )
    path = write_manifest(out, manifest)
    print(f"Wrote: {path}")
    if not manifest.passed:
        failed = ", ".join(c.name for c in checks if not c.passed)
        print(f"sanity checks failed: {failed}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
