"""
Seeded, parallel Monte Carlo experiments on W_n = conv{X_i(t_j)}.

Replications are independent tasks. In the default mode every
(replication, schedule index) cell draws from its own stream,
``cell_stream_id(rep, n_index)``. In nested mode a replication draws one
stream and snapshots the growing hull at each n of the schedule, so hulls
for increasing n are nested. Aggregation folds results in (n, rep) order,
whatever order the worker threads finish in.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from app.hullshape.config import resolve_threads
from app.hullshape.errors import ExperimentError
from app.hullshape.geometry import (
    Body,
    DirectionGrid,
    Polygon2D,
    SupportProfile,
    area,
    diameter,
    hausdorff,
    perimeter,
    perimeter_from_profile,
    profile_width,
    reduce_points,
    scale,
    support_of_points,
)
from app.hullshape.limit_shape import LimitShape, limit_functional, limit_shape, sigma
from app.hullshape.models import CovarianceModel, TimeGrid, iter_path_chunks, parse_model_spec
from app.hullshape.oracle import empirical_moments, oracle_for
from app.hullshape.randsrc import SeedSpec, cell_stream_id, derive_stream
from app.hullshape.schemas import (
    ConvergenceRecord,
    ExperimentConfig,
    ExtremeRecord,
    GridInfo,
    MomentRecord,
    RateRecord,
    RateSeries,
    SanityCheck,
)

logger = logging.getLogger("hullshape.experiments")

FUNCTIONALS: Dict[str, int] = {"perimeter": 1, "area": 2, "diameter": 1}
RESOLUTION_TOLERANCE = 0.01
SANDWICH_TOLERANCE = 0.005
SANDWICH_MIN_DIRS = 360

T = TypeVar("T")
R = TypeVar("R")


def normalizer(n: int) -> float:
    """sqrt(2 ln n)."""
    if n < 2:
        raise ExperimentError(f"n must be >= 2 so that ln n > 0, got {n}")
    return math.sqrt(2.0 * math.log(n))


def _mean_se(values: Sequence[float]) -> Tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return float(v.mean()), 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def _map_ordered(fn: Callable[[T], R], items: Sequence[T], threads: int) -> List[R]:
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))


class _HullAccumulator:
    """Pooled points of a growing sample: exact hull vertices for d=2, running support maxima otherwise."""

    def __init__(self, dir_grid: DirectionGrid) -> None:
        self.dir_grid = dir_grid
        self.dim = dir_grid.dim
        self._vertices: Optional[np.ndarray] = None
        self._values: Optional[np.ndarray] = None

    def add(self, points: np.ndarray) -> None:
        if self.dim == 2:
            stacked = points if self._vertices is None else np.vstack([self._vertices, points])
            self._vertices = reduce_points(stacked)
        else:
            values = support_of_points(points, self.dir_grid).values
            self._values = values if self._values is None else np.maximum(self._values, values)

    def body(self) -> Body:
        if self.dim == 2:
            return Polygon2D(self._vertices)
        return SupportProfile(self.dir_grid, self._values)

    def profile(self) -> SupportProfile:
        if self.dim == 2:
            return support_of_points(self._vertices, self.dir_grid)
        return SupportProfile(self.dir_grid, self._values)


@dataclass(frozen=True, eq=False)
class Setup:
    config: ExperimentConfig
    model: CovarianceModel
    grid: TimeGrid
    coarse: Optional[slice]
    dir_grid: DirectionGrid
    limit: LimitShape
    reference: SupportProfile
    threads: int

    @property
    def two_resolution(self) -> bool:
        return self.coarse is not None


def build_setup(config: ExperimentConfig) -> Setup:
    model = parse_model_spec(config.model, dim=config.dim, axis_scales=config.axis_scales)
    two_res = config.two_resolution and not model.singleton
    if config.two_resolution and not two_res:
        logger.info("two_resolution_skipped model=%s reason=singleton", model.spec)
    # the 2k-grid {j/2k} contains the k-grid {j/k} at its odd positions
    grid = TimeGrid.uniform(2 * config.grid_points if two_res else config.grid_points)
    dir_grid = DirectionGrid.for_dim(config.dim, config.dirs)
    limit = limit_shape(model, grid, dir_grid)
    if config.reference_radius is not None:
        reference = SupportProfile(dir_grid, np.full(len(dir_grid), config.reference_radius))
    else:
        reference = limit.profile
    return Setup(
        config=config,
        model=model,
        grid=grid,
        coarse=slice(1, None, 2) if two_res else None,
        dir_grid=dir_grid,
        limit=limit,
        reference=reference,
        threads=resolve_threads(config.threads),
    )


@dataclass(frozen=True, eq=False)
class Snapshot:
    """Unscaled hull of one replication after n paths."""

    n: int
    rep: int
    body: Body
    profile: SupportProfile
    fine_profile: Optional[SupportProfile] = None


def _cells(setup: Setup) -> List[Tuple[int, Tuple[int, ...], int]]:
    """
    (rep, n values, stream id) tasks in (n, rep) order. Replication counts
    never grow with n, so a nested replication stops after the last n that
    still uses it.
    """
    cfg = setup.config
    schedule = cfg.n_schedule
    if cfg.nested:
        top = max(cfg.reps_for(n) for n in schedule)
        return [
            (rep, tuple(n for n in schedule if rep < cfg.reps_for(n)), cell_stream_id(rep, 0))
            for rep in range(top)
        ]
    return [(rep, (n,), cell_stream_id(rep, idx)) for idx, n in enumerate(schedule) for rep in range(cfg.reps_for(n))]


def _hull_cells(setup: Setup, task: Tuple[int, Tuple[int, ...], int]) -> List[Snapshot]:
    rep, n_values, stream_id = task
    cfg = setup.config
    stream = derive_stream(SeedSpec(cfg.seed, stream_id))
    primary = _HullAccumulator(setup.dir_grid)
    fine = _HullAccumulator(setup.dir_grid) if setup.two_resolution else None
    out: List[Snapshot] = []
    done = 0
    t0 = time.perf_counter()
    for n in n_values:
        for batch in iter_path_chunks(setup.model, setup.grid, n - done, stream, cfg.chunk_paths):
            values = batch.values
            if fine is not None:
                fine.add(values.reshape(-1, cfg.dim))
                values = values[:, setup.coarse, :]
            primary.add(values.reshape(-1, cfg.dim))
        done = n
        out.append(
            Snapshot(
                n=n,
                rep=rep,
                body=primary.body(),
                profile=primary.profile(),
                fine_profile=fine.profile() if fine is not None else None,
            )
        )
    logger.debug(
        "hull_cell rep=%d n=%s stream=%d elapsed_ms=%d",
        rep, ",".join(map(str, n_values)), stream_id, int((time.perf_counter() - t0) * 1000),
    )
    return out


def collect_snapshots(setup: Setup) -> Dict[int, List[Snapshot]]:
    """Snapshots grouped by n, each list in replication order."""
    results = _map_ordered(lambda task: _hull_cells(setup, task), _cells(setup), setup.threads)
    grouped: Dict[int, List[Snapshot]] = {n: [] for n in setup.config.n_schedule}
    for snaps in results:
        for snap in snaps:
            grouped[snap.n].append(snap)
    for snaps in grouped.values():
        snaps.sort(key=lambda s: s.rep)
    return grouped


def _check(checks: Optional[List[SanityCheck]], name: str, passed: bool, detail: str = "") -> None:
    if not passed:
        logger.warning("sanity_check_failed name=%s detail=%s", name, detail)
    if checks is not None:
        checks.append(SanityCheck(name=name, passed=bool(passed), detail=detail))


def _nesting_check(setup: Setup, grouped: Dict[int, List[Snapshot]], checks: Optional[List[SanityCheck]]) -> None:
    schedule = setup.config.n_schedule
    worst = 0.0
    for a, b in zip(schedule, schedule[1:]):
        for small, big in zip(grouped[a], grouped[b]):
            worst = max(worst, float(np.max(small.profile.values - big.profile.values)))
    scale_ref = max(float(np.abs(grouped[schedule[-1]][0].profile.values).max()), 1.0)
    _check(checks, "nesting", worst <= 1e-12 * scale_ref, f"max support decrease {worst:.3g}")


def _sandwich_check(setup: Setup, grouped: Dict[int, List[Snapshot]], checks: Optional[List[SanityCheck]]) -> None:
    if setup.config.dim != 2 or len(setup.dir_grid) < SANDWICH_MIN_DIRS:
        return
    worst = 0.0
    for snaps in grouped.values():
        for snap in snaps:
            exact = perimeter(snap.body)
            if exact > 0.0:
                worst = max(worst, abs(perimeter_from_profile(snap.profile) - exact) / exact)
    _check(checks, "perimeter_sandwich", worst <= SANDWICH_TOLERANCE, f"max relative gap {worst:.3g}")


# Operations ------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HullResult:
    n: int
    hull: Body
    scaled: Body
    profile: SupportProfile
    scaled_profile: SupportProfile


def run_hull(
    model: CovarianceModel,
    k: int,
    n: int,
    seed: SeedSpec,
    dir_grid: Optional[DirectionGrid] = None,
    chunk_paths: int = 2048,
) -> HullResult:
    """W_n from n paths on the k-point grid, and W_n / sqrt(2 ln n)."""
    c = 1.0 / normalizer(n)
    dir_grid = dir_grid or DirectionGrid.for_dim(model.dim, 720)
    acc = _HullAccumulator(dir_grid)
    stream = derive_stream(seed)
    for batch in iter_path_chunks(model, TimeGrid.uniform(k), n, stream, chunk_paths):
        acc.add(batch.points())
    hull, profile = acc.body(), acc.profile()
    return HullResult(n=n, hull=hull, scaled=scale(hull, c), profile=profile, scaled_profile=scale(profile, c))


def run_convergence(
    config: ExperimentConfig,
    checks: Optional[List[SanityCheck]] = None,
    setup: Optional[Setup] = None,
) -> List[ConvergenceRecord]:
    setup = setup or build_setup(config)
    t0 = time.perf_counter()
    grouped = collect_snapshots(setup)
    records: List[ConvergenceRecord] = []
    for n, snaps in grouped.items():
        c = 1.0 / normalizer(n)
        dists = [hausdorff(scale(s.profile, c), setup.reference) for s in snaps]
        rho = [d.value for d in dists]
        mean, se = _mean_se(rho)
        root = math.sqrt(math.log(n))
        record = ConvergenceRecord(
            n=n,
            rho=rho,
            mean=mean,
            se=se,
            rate=root * mean,
            rate_se=root * se,
            grid=GridInfo(
                grid_points=config.grid_points,
                dirs=len(setup.dir_grid),
                mesh=setup.dir_grid.mesh,
                mesh_error=max(d.mesh_error for d in dists),
            ),
        )
        if setup.two_resolution:
            rho_fine = [hausdorff(scale(s.fine_profile, c), setup.reference).value for s in snaps]
            mean_fine = float(np.mean(rho_fine))
            divergence = abs(mean_fine - mean) / max(mean_fine, 1e-300)
            flag = divergence > RESOLUTION_TOLERANCE
            if flag:
                logger.warning(
                    "resolution_divergence n=%d k=%d rho_k=%.4f rho_2k=%.4f divergence=%.4f",
                    n, config.grid_points, mean, mean_fine, divergence,
                )
            record = record.model_copy(
                update={
                    "rho_fine": rho_fine,
                    "mean_fine": mean_fine,
                    "resolution_divergence": divergence,
                    "resolution_flag": flag,
                }
            )
        records.append(record)
        logger.info("convergence n=%d reps=%d rho_mean=%.4f rho_se=%.4f rate=%.4f", n, len(rho), mean, se, record.rate)

    _check(checks, "rho_nonnegative", all(min(r.rho) >= 0.0 for r in records))
    _sandwich_check(setup, grouped, checks)
    if config.nested:
        _nesting_check(setup, grouped, checks)
    logger.info("run_convergence model=%s elapsed_ms=%d", setup.model.spec, int((time.perf_counter() - t0) * 1000))
    return records


def rate_series(records: Iterable[ConvergenceRecord], reference: str = "limit") -> RateSeries:
    """sqrt(ln n) * mean rho per n; non-increasing means no step up by more than one pooled SE."""
    rates = [RateRecord(n=r.n, rate=r.rate, rate_se=r.rate_se) for r in records]
    ok = all(
        b.rate <= a.rate + math.hypot(a.rate_se, b.rate_se)
        for a, b in zip(rates, rates[1:])
    )
    return RateSeries(records=rates, non_increasing=ok, reference=reference)


def run_rate_diagnostic(
    config: ExperimentConfig,
    checks: Optional[List[SanityCheck]] = None,
    setup: Optional[Setup] = None,
) -> RateSeries:
    records = run_convergence(config, checks=checks, setup=setup)
    reference = "limit" if config.reference_radius is None else f"ball(r={config.reference_radius:g})"
    series = rate_series(records, reference=reference)
    logger.info("rate_diagnostic reference=%s non_increasing=%s", reference, series.non_increasing)
    return series


def functional_value(body: Body, name: str) -> float:
    if name == "diameter":
        if isinstance(body, Polygon2D):
            return diameter(body)
        return profile_width(body)
    if not isinstance(body, Polygon2D):
        raise ExperimentError(f"{name} needs d=2")
    return perimeter(body) if name == "perimeter" else area(body)


def _validate_functional(functional: str, dim: int) -> None:
    if functional not in FUNCTIONALS:
        raise ExperimentError(f"unknown functional {functional!r}; expected one of {', '.join(FUNCTIONALS)}")
    if functional in ("perimeter", "area") and dim != 2:
        raise ExperimentError(f"{functional} needs dim=2, got dim={dim}")


def run_moment_table(
    config: ExperimentConfig,
    functionals: Sequence[str],
    power: float = 1.0,
    checks: Optional[List[SanityCheck]] = None,
    setup: Optional[Setup] = None,
) -> Dict[str, List[MomentRecord]]:
    """Moment records for several functionals evaluated on the same hulls."""
    for functional in functionals:
        _validate_functional(functional, config.dim)
    if power <= 0:
        raise ExperimentError("power must be > 0")
    setup = setup or build_setup(config)
    grouped = collect_snapshots(setup)
    table: Dict[str, List[MomentRecord]] = {}
    for functional in functionals:
        target = limit_functional(setup.limit, functional) ** power
        records: List[MomentRecord] = []
        for n, snaps in grouped.items():
            c = 1.0 / normalizer(n)
            values = [functional_value(scale(s.body, c), functional) ** power for s in snaps]
            estimate, se = _mean_se(values)
            ratio = estimate / target if target > 0 else math.nan
            records.append(
                MomentRecord(
                    n=n,
                    functional=functional,
                    degree=FUNCTIONALS[functional],
                    power=power,
                    values=values,
                    estimate=estimate,
                    se=se,
                    target=target,
                    ratio=ratio,
                    relative_gap=ratio - 1.0,
                )
            )
            logger.info(
                "moments n=%d functional=%s power=%g estimate=%.5f target=%.5f ratio=%.4f",
                n, functional, power, estimate, target, ratio,
            )
        table[functional] = records
    _check(checks, "moment_nonnegative", all(min(r.values) >= 0.0 for rs in table.values() for r in rs))
    _sandwich_check(setup, grouped, checks)
    if config.nested:
        _nesting_check(setup, grouped, checks)
    return table


def run_moments(
    config: ExperimentConfig,
    functional: str,
    power: float = 1.0,
    checks: Optional[List[SanityCheck]] = None,
    setup: Optional[Setup] = None,
) -> List[MomentRecord]:
    return run_moment_table(config, [functional], power=power, checks=checks, setup=setup)[functional]


def _extreme_cells(setup: Setup, theta: np.ndarray, task: Tuple[int, Tuple[int, ...], int]) -> List[Tuple[int, int, float, float]]:
    rep, n_values, stream_id = task
    cfg = setup.config
    stream = derive_stream(SeedSpec(cfg.seed, stream_id))
    top, bottom = -math.inf, math.inf
    out = []
    done = 0
    for n in n_values:
        for batch in iter_path_chunks(setup.model, setup.grid, n - done, stream, cfg.chunk_paths):
            values = batch.values if setup.coarse is None else batch.values[:, setup.coarse, :]
            proj = values @ theta
            top = max(top, float(proj.max()))
            bottom = min(bottom, float(proj.min()))
        done = n
        out.append((n, rep, top, bottom))
    return out


def run_extremes(
    config: ExperimentConfig,
    theta: Sequence[float],
    checks: Optional[List[SanityCheck]] = None,
    setup: Optional[Setup] = None,
) -> List[ExtremeRecord]:
    """
    Directional maxima M_n = max_i max_t <theta, X_i(t)> straight from the paths,
    normalized to Z_n = M_n / sqrt(2 ln n); also the normalized minimum -m_n / sqrt(2 ln n).
    """
    setup = setup or build_setup(config)
    theta_v = np.asarray(theta, dtype=float).reshape(-1)
    grid = setup.grid if setup.coarse is None else TimeGrid(setup.grid.points[setup.coarse])
    target = sigma(setup.model, grid, theta_v)
    results = _map_ordered(lambda task: _extreme_cells(setup, theta_v, task), _cells(setup), setup.threads)
    grouped: Dict[int, List[Tuple[int, float, float]]] = {n: [] for n in config.n_schedule}
    for cells in results:
        for n, rep, top, bottom in cells:
            grouped[n].append((rep, top, bottom))

    records: List[ExtremeRecord] = []
    for n, cells in grouped.items():
        cells.sort()
        norm = normalizer(n)
        z = [top / norm for _, top, _ in cells]
        z_min = [-bottom / norm for _, _, bottom in cells]
        mean, se = _mean_se(z)
        oracle = oracle_for(setup.model, target, n)
        records.append(
            ExtremeRecord(
                n=n,
                theta=theta_v.tolist(),
                z=z,
                mean=mean,
                se=se,
                target=target,
                moments=empirical_moments(np.array(z)),
                min_mean=float(np.mean(z_min)),
                oracle_mean=oracle.mean if oracle else None,
                oracle_sd=oracle.sd if oracle else None,
                oracle_moments=dict(oracle.moments) if oracle else None,
            )
        )
        logger.info("extremes n=%d z_mean=%.4f z_se=%.4f target=%.4f oracle=%s", n, mean, se, target, f"{oracle.mean:.4f}" if oracle else "none")
    _check(checks, "extremes_finite", all(np.all(np.isfinite(r.z)) for r in records))
    return records
