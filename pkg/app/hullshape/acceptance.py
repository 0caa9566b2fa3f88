"""
Fixed acceptance suite run by ``repro``.

Every Monte Carlo threshold is derived at run time from the quadrature
oracle, so the suite has no hand-typed statistical constants. ``quick``
keeps the checks and shrinks k, n and m; ``full`` runs the desk-scale sizes.
"""
from __future__ import annotations

import hashlib
import logging
import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from app.hullshape.errors import HullShapeError
from app.hullshape.experiments import (
    normalizer,
    rate_series,
    run_convergence,
    run_extremes,
    run_moment_table,
)
from app.hullshape.geometry import (
    DirectionGrid,
    area,
    diameter,
    hausdorff,
    hull_2d,
    perimeter,
    scale,
    support_of_points,
    support_of_polygon,
)
from app.hullshape.io import write_records
from app.hullshape.limit_shape import limit_shape
from app.hullshape.models import TimeGrid, parse_model_spec
from app.hullshape.oracle import discretization_allowance, max_moments, oracle_for
from app.hullshape.schemas import ConvergenceRecord, CriterionResult, ExperimentConfig

logger = logging.getLogger("hullshape.acceptance")

Check = Tuple[bool, str]

HOMOGENEITY_RTOL = 1e-12
LIMIT_SHAPE_ATOL = 1e-9


@dataclass(frozen=True)
class Scale:
    name: str
    clouds: int
    extremes: ExperimentConfig
    convergence: ExperimentConfig
    moments: ExperimentConfig
    bridge: ExperimentConfig
    reproducibility: ExperimentConfig


SCALES: Dict[str, Scale] = {
    "full": Scale(
        name="full",
        clouds=200,
        extremes=ExperimentConfig(model="bm", dim=1, grid_points=1024, n_schedule=[100, 1000, 10000], reps=64),
        convergence=ExperimentConfig(
            model="bm", dim=2, grid_points=1024, dirs=720, n_schedule=[100, 1000, 10000, 100000], reps=16, nested=True
        ),
        moments=ExperimentConfig(
            model="bm", dim=2, grid_points=512, dirs=720, n_schedule=[100, 1000, 10000], reps=128, nested=True
        ),
        bridge=ExperimentConfig(
            model="fbb:H=0.5", dim=2, grid_points=1024, dirs=720, n_schedule=[100, 1000, 10000], reps=16,
            nested=True, reference_radius=0.5,
        ),
        reproducibility=ExperimentConfig(model="bm", dim=2, grid_points=64, dirs=180, n_schedule=[100, 1000], reps=8),
    ),
    "quick": Scale(
        name="quick",
        clouds=50,
        extremes=ExperimentConfig(model="bm", dim=1, grid_points=128, n_schedule=[100, 1000, 10000], reps=48),
        convergence=ExperimentConfig(
            model="bm", dim=2, grid_points=128, dirs=180, n_schedule=[100, 1000, 10000], reps=16, nested=True
        ),
        moments=ExperimentConfig(
            model="bm", dim=2, grid_points=64, dirs=180, n_schedule=[100, 1000, 10000], reps=128, nested=True
        ),
        bridge=ExperimentConfig(
            model="fbb:H=0.5", dim=2, grid_points=128, dirs=180, n_schedule=[100, 1000, 10000], reps=16,
            nested=True, reference_radius=0.5,
        ),
        reproducibility=ExperimentConfig(model="bm", dim=2, grid_points=32, dirs=64, n_schedule=[100, 1000], reps=4),
    ),
}


def _strictly_increasing(values: List[float]) -> bool:
    return all(b > a for a, b in zip(values, values[1:]))


def _strictly_decreasing(values: List[float]) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


def _fmt(values: List[float]) -> str:
    return "[" + ", ".join(f"{v:.4f}" for v in values) + "]"


# Criteria --------------------------------------------------------------------------

def geometry_properties(clouds: int, seed: int = 0) -> Check:
    """Exact property suite on random planar clouds."""
    rng = np.random.default_rng(seed)
    grid = DirectionGrid.circle(256)
    failures: List[str] = []
    for i in range(clouds):
        size = int(rng.integers(3, 200))
        pts = rng.standard_normal((size, 2)) * rng.uniform(0.1, 10.0)
        extra = rng.standard_normal((int(rng.integers(1, 50)), 2))
        poly = hull_2d(pts)
        bigger = hull_2d(np.vstack([pts, extra]))

        if not np.array_equal(hull_2d(poly.vertices).vertices, poly.vertices):
            failures.append(f"idempotence#{i}")
        mag = max(float(np.abs(pts).max()), 1.0)
        if np.any(support_of_polygon(poly, grid).values > support_of_polygon(bigger, grid).values + 1e-12 * mag):
            failures.append(f"monotonicity#{i}")
        if perimeter(poly) > perimeter(bigger) * (1 + 1e-12) or area(poly) > area(bigger) * (1 + 1e-12):
            failures.append(f"monotone_functionals#{i}")

        c = float(rng.uniform(0.1, 10.0))
        scaled = scale(poly, c)
        for got, want in (
            (perimeter(scaled), c * perimeter(poly)),
            (area(scaled), c * c * area(poly)),
            (diameter(scaled), c * diameter(poly)),
        ):
            if abs(got - want) > HOMOGENEITY_RTOL * max(abs(want), 1e-300):
                failures.append(f"homogeneity#{i}")
                break

        a = support_of_points(pts, grid)
        b = support_of_points(extra, grid)
        m = support_of_points(rng.standard_normal((7, 2)), grid)
        if hausdorff(a, a).value != 0.0 or hausdorff(a, b).value != hausdorff(b, a).value:
            failures.append(f"metric#{i}")
        if hausdorff(a, b).value > hausdorff(a, m).value + hausdorff(m, b).value + 1e-12 * mag:
            failures.append(f"triangle#{i}")
        if np.max(np.abs(a.values - support_of_polygon(poly, grid).values)) > 1e-12 * mag:
            failures.append(f"support_equivalence#{i}")

    if failures:
        return False, f"{len(failures)} failures: {', '.join(failures[:5])}"
    return True, f"{clouds} clouds"


def limit_shape_closed_forms(k: int = 4096, q: int = 360) -> Check:
    grid = TimeGrid.uniform(k)
    dirs = DirectionGrid.circle(q)
    worst = 0.0
    details = []
    for spec in ("bm", "fbb:H=0.25", "fbb:H=0.5", "fbb:H=0.75", "singleton:var=2"):
        model = parse_model_spec(spec, dim=2)
        numeric = limit_shape(model, grid, dirs, prefer_closed_form=False).profile
        closed = limit_shape(model, grid, dirs).profile
        gap = float(np.max(np.abs(numeric.values - closed.values)))
        worst = max(worst, gap)
        details.append(f"{spec}:{gap:.1e}")
    return worst <= LIMIT_SHAPE_ATOL, ", ".join(details)


def extreme_value_oracle(config: ExperimentConfig) -> Check:
    records = run_extremes(config, theta=[1.0])
    problems = []
    m4, m4_se = [], []
    for r in records:
        norm = normalizer(r.n)
        allowance = discretization_allowance(config.grid_points) / norm
        lo = r.oracle_mean - allowance - 3.0 * r.se
        hi = r.oracle_mean + 3.0 * r.se
        if not lo <= r.mean <= hi:
            problems.append(f"n={r.n}: mean {r.mean:.4f} outside [{lo:.4f}, {hi:.4f}]")
        z4 = np.asarray(r.z) ** 4
        m4.append(float(z4.mean()))
        m4_se.append(float(z4.std(ddof=1) / math.sqrt(z4.size)))
    growth = all(
        b - a > math.hypot(sa, sb) for a, b, sa, sb in zip(m4, m4[1:], m4_se, m4_se[1:])
    )
    if growth and len(m4) > 1:
        problems.append(f"E Z^4 grows monotonically {_fmt(m4)}")
    detail = f"means {_fmt([r.mean for r in records])} oracle {_fmt([r.oracle_mean for r in records])}"
    return not problems, "; ".join(problems) or detail


def convergence_bound(config: ExperimentConfig, record: ConvergenceRecord) -> float:
    """1 - E Z_n + 3 sd(Z_n) + mesh error + discretization allowance, Z_n from the |N(0,1)| oracle."""
    oracle = max_moments("abs_normal", record.n).scaled(1.0 / normalizer(record.n))
    allowance = discretization_allowance(config.grid_points) / normalizer(record.n)
    return 1.0 - oracle.mean + 3.0 * oracle.sd + record.grid.mesh_error + allowance


class _Suite:
    def __init__(self, scale: Scale, seed: int, threads: int) -> None:
        self.scale = scale
        self.seed = seed
        self.threads = threads
        self._convergence: Optional[List[ConvergenceRecord]] = None

    def config(self, base: ExperimentConfig) -> ExperimentConfig:
        return base.model_copy(update={"seed": self.seed, "threads": self.threads})

    def convergence_records(self) -> List[ConvergenceRecord]:
        if self._convergence is None:
            self._convergence = run_convergence(self.config(self.scale.convergence))
        return self._convergence

    def criterion_1(self) -> Check:
        return geometry_properties(self.scale.clouds, seed=self.seed)

    def criterion_2(self) -> Check:
        return limit_shape_closed_forms()

    def criterion_3(self) -> Check:
        return extreme_value_oracle(self.config(self.scale.extremes))

    def criterion_4(self) -> Check:
        records = self.convergence_records()
        means = [r.mean for r in records]
        bound = convergence_bound(self.scale.convergence, records[-1])
        ok = _strictly_decreasing(means) and means[-1] < bound
        return ok, f"mean rho {_fmt(means)}, bound at n={records[-1].n}: {bound:.4f}"

    def criterion_5(self) -> Check:
        series = rate_series(self.convergence_records())
        return series.non_increasing, f"sqrt(ln n) * rho {_fmt([r.rate for r in series.records])}"

    def criterion_6(self) -> Check:
        cfg = self.config(self.scale.moments)
        table = run_moment_table(cfg, ["perimeter", "area"])
        per, ar = table["perimeter"], table["area"]
        per_ratio = [r.ratio for r in per]
        area_ratio = [r.ratio for r in ar]
        problems = []
        if not _strictly_increasing(per_ratio):
            problems.append(f"perimeter ratio not increasing {_fmt(per_ratio)}")
        if not _strictly_increasing(area_ratio):
            problems.append(f"area ratio not increasing {_fmt(area_ratio)}")

        last = per[-1]
        norm = normalizer(last.n)
        oracle = oracle_for(parse_model_spec(cfg.model, dim=2), 1.0, last.n)
        lo = oracle.mean - discretization_allowance(cfg.grid_points) / norm - 3.0 * last.se
        hi = oracle.mean + 3.0 * last.se
        if not lo <= last.ratio <= hi:
            problems.append(f"perimeter ratio {last.ratio:.4f} outside [{lo:.4f}, {hi:.4f}]")
        # isoperimetric: A / (2 pi ln n) <= (L / (2 pi sqrt(2 ln n)))^2 for every hull
        for p_rec, a_rec in zip(per, ar):
            for lp, la in zip(p_rec.values, a_rec.values):
                if la / a_rec.target > (lp / p_rec.target) ** 2 * (1 + 1e-12):
                    problems.append(f"isoperimetric n={a_rec.n}")
                    break
        detail = f"perimeter {_fmt(per_ratio)} area {_fmt(area_ratio)} band [{lo:.4f}, {hi:.4f}]"
        return not problems, "; ".join(problems) or detail

    def criterion_7(self) -> Check:
        cfg = self.config(self.scale.bridge)
        moments = run_moment_table(cfg, ["diameter"])["diameter"]
        rho = [r.mean for r in run_convergence(cfg)]
        last = moments[-1]
        norm = normalizer(last.n)
        model = parse_model_spec(cfg.model, dim=2)
        oracle = oracle_for(model, 0.5, last.n)
        allowance = discretization_allowance(cfg.grid_points) / norm
        lo = 2.0 * (oracle.mean - allowance) - 3.0 * last.se
        hi = 2.0 * (oracle.mean + 3.0 * oracle.sd) + 3.0 * last.se
        problems = []
        if not lo <= last.estimate <= hi:
            problems.append(f"diameter {last.estimate:.4f} outside [{lo:.4f}, {hi:.4f}]")
        if not _strictly_decreasing(rho):
            problems.append(f"rho to the 0.5-ball not decreasing {_fmt(rho)}")
        detail = f"diameter {last.estimate:.4f} in [{lo:.4f}, {hi:.4f}], rho {_fmt(rho)}"
        return not problems, "; ".join(problems) or detail

    def criterion_8(self) -> Check:
        base = self.config(self.scale.reproducibility)
        digests = []
        with tempfile.TemporaryDirectory(prefix="hullshape-repro-") as tmp:
            for i, threads in enumerate((1, 1, 2, 4)):
                cfg = base.model_copy(update={"threads": threads})
                paths = write_records(Path(tmp) / f"run{i}", "convergence", run_convergence(cfg))
                digests.append(tuple(_sha256(p) for p in paths if p.suffix == ".csv"))
        same = len(set(digests)) == 1
        return same, f"{len(digests)} runs, threads 1/1/2/4, {'identical' if same else 'DIFFERENT'} CSVs"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


TITLES: Dict[int, str] = {
    1: "geometry property suite",
    2: "limit-shape closed forms",
    3: "extreme-value oracle (bm, d=1)",
    4: "hull convergence (bm, d=2)",
    5: "rate diagnostic",
    6: "perimeter and area moments",
    7: "fractional Brownian bridge end-to-end",
    8: "reproducibility",
}


def _timed(cid: int, fn: Callable[[], Check]) -> CriterionResult:
    t0 = time.perf_counter()
    try:
        passed, detail = fn()
    except HullShapeError as exc:
        passed, detail = False, f"{type(exc).__name__}: {exc}"
    seconds = time.perf_counter() - t0
    logger.info("criterion id=%d passed=%s seconds=%.1f detail=%s", cid, passed, seconds, detail)
    return CriterionResult(id=cid, title=TITLES[cid], passed=bool(passed), detail=detail, seconds=round(seconds, 3))


def run_acceptance(
    scale: str = "quick",
    seed: int = 0,
    threads: int = 0,
    only: Optional[List[int]] = None,
) -> List[CriterionResult]:
    if scale not in SCALES:
        raise ValueError(f"unknown scale {scale!r}; expected one of {', '.join(SCALES)}")
    suite = _Suite(SCALES[scale], seed=seed, threads=threads)
    ids = only or sorted(TITLES)
    return [_timed(cid, getattr(suite, f"criterion_{cid}")) for cid in ids]


def format_table(results: List[CriterionResult]) -> str:
    lines = [f"{'id':>2}  {'result':<6}  {'seconds':>8}  title"]
    for r in results:
        lines.append(f"{r.id:>2}  {'PASS' if r.passed else 'FAIL':<6}  {r.seconds:>8.1f}  {r.title}")
        lines.append(f"{'':>2}  {'':<6}  {'':>8}  {r.detail}")
    return "\n".join(lines)
