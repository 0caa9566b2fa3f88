import math

import numpy as np
import pytest
from pydantic import ValidationError

from app.hullshape.errors import ExperimentError, GeometryError
from app.hullshape.experiments import (
    normalizer,
    rate_series,
    run_convergence,
    run_extremes,
    run_hull,
    run_moment_table,
    run_moments,
    run_rate_diagnostic,
)
from app.hullshape.geometry import DirectionGrid, hull_2d, scale, support_of_points, support_of_polygon
from app.hullshape.models import TimeGrid, parse_model_spec, sample_paths
from app.hullshape.oracle import discretization_allowance
from app.hullshape.randsrc import SeedSpec
from app.hullshape.schemas import ConvergenceRecord, ExperimentConfig, GridInfo

SMALL = ExperimentConfig(model="bm", dim=2, grid_points=32, dirs=90, n_schedule=[50, 200], reps=4, seed=3, threads=1)


def _cfg(**overrides) -> ExperimentConfig:
    return SMALL.model_copy(update=overrides)


def test_normalizer():
    assert normalizer(100) == pytest.approx(math.sqrt(2 * math.log(100)))
    with pytest.raises(ExperimentError):
        normalizer(1)


@pytest.mark.parametrize(
    "fields",
    [
        {"n_schedule": [100, 100]},
        {"n_schedule": [1000, 100]},
        {"n_schedule": [1, 10]},
        {"n_schedule": []},
        {"dim": 2, "axis_scales": [1.0]},
        {"dirs": 4},
        {"seed": -1},
        {"unknown": 1},
    ],
)
def test_config_validation(fields):
    with pytest.raises(ValidationError):
        ExperimentConfig(**fields)


def test_run_hull_scales_by_the_normalizer():
    model = parse_model_spec("bm", dim=2)
    result = run_hull(model, 16, 300, SeedSpec(5), dir_grid=DirectionGrid.circle(90), chunk_paths=64)
    c = 1.0 / normalizer(300)
    np.testing.assert_allclose(result.scaled.vertices, result.hull.vertices * c)
    np.testing.assert_allclose(result.scaled_profile.values, result.profile.values * c)
    np.testing.assert_allclose(
        result.profile.values, support_of_polygon(result.hull, DirectionGrid.circle(90)).values, atol=1e-12
    )


def test_hull_of_scaled_points_is_scaled_hull():
    model = parse_model_spec("fbm:H=0.7", dim=2)
    pts = sample_paths(model, TimeGrid.uniform(16), 200, SeedSpec(6)).points()
    c = 1.0 / normalizer(200)
    grid = DirectionGrid.circle(180)
    np.testing.assert_allclose(
        support_of_polygon(hull_2d(pts * c), grid).values,
        support_of_polygon(scale(hull_2d(pts), c), grid).values,
        atol=1e-12,
    )


def test_run_hull_matches_one_batch():
    model = parse_model_spec("bm", dim=2)
    grid = DirectionGrid.circle(90)
    result = run_hull(model, 16, 300, SeedSpec(5), dir_grid=grid, chunk_paths=50)
    pts = sample_paths(model, TimeGrid.uniform(16), 300, SeedSpec(5)).points()
    np.testing.assert_allclose(result.profile.values, support_of_points(pts, grid).values, atol=1e-10)


def test_singleton_extremes_match_the_normal_oracle():
    cfg = ExperimentConfig(model="singleton", dim=1, grid_points=8, n_schedule=[10, 100], reps=400, seed=11, threads=2)
    for r in run_extremes(cfg, [1.0]):
        assert r.target == pytest.approx(1.0)
        assert abs(r.mean - r.oracle_mean) < 4 * r.se
        assert abs(r.min_mean - r.oracle_mean) < 4 * r.se


def test_brownian_extremes_match_the_reflection_oracle():
    cfg = ExperimentConfig(model="bm", dim=1, grid_points=64, n_schedule=[100, 1000], reps=64, seed=12, threads=2)
    for r in run_extremes(cfg, [1.0]):
        allowance = discretization_allowance(64) / normalizer(r.n)
        assert r.oracle_mean - allowance - 4 * r.se <= r.mean <= r.oracle_mean + 4 * r.se
        assert len(r.z) == 64
        assert set(r.moments) == {1, 2, 4}
        assert r.oracle_moments[4] > 0


def test_extremes_reject_a_bad_direction():
    with pytest.raises(GeometryError):
        run_extremes(_cfg(), [1.0, 1.0])


def test_model_without_oracle_has_no_oracle_fields():
    records = run_extremes(_cfg(model="fbm:H=0.8", reps=2), [0.0, 1.0])
    assert all(r.oracle_mean is None and r.oracle_moments is None for r in records)


def test_convergence_decreases_in_n():
    cfg = ExperimentConfig(
        model="bm", dim=2, grid_points=64, dirs=180, n_schedule=[100, 10000], reps=16, seed=1, nested=True
    )
    records = run_convergence(cfg)
    assert records[1].mean < records[0].mean
    assert all(min(r.rho) >= 0 for r in records)
    assert records[0].grid.mesh == pytest.approx(math.pi / 180)
    assert records[0].grid.mesh_error > 0


def test_negative_control_does_not_converge():
    cfg = ExperimentConfig(
        model="bm", dim=2, grid_points=64, dirs=180, n_schedule=[100, 10000], reps=8, seed=2, reference_radius=0.5
    )
    series = run_rate_diagnostic(cfg)
    assert series.reference == "ball(r=0.5)"
    assert not series.non_increasing
    assert series.records[-1].rate > series.records[0].rate


def test_runs_are_reproducible_and_thread_independent():
    a = run_convergence(_cfg(threads=1))
    b = run_convergence(_cfg(threads=1))
    c = run_convergence(_cfg(threads=3))
    assert [r.rho for r in a] == [r.rho for r in b] == [r.rho for r in c]


def test_seeds_change_the_sample():
    a = run_convergence(_cfg(seed=1))
    b = run_convergence(_cfg(seed=2))
    assert [r.rho for r in a] != [r.rho for r in b]


def test_nested_mode_passes_the_nesting_check():
    checks = []
    run_convergence(_cfg(n_schedule=[20, 80, 320], nested=True), checks=checks)
    by_name = {c.name: c for c in checks}
    assert by_name["nesting"].passed
    assert by_name["rho_nonnegative"].passed


def test_perimeter_sandwich_runs_on_fine_grids():
    checks = []
    run_convergence(_cfg(dirs=360, reps=2), checks=checks)
    assert {c.name for c in checks} >= {"rho_nonnegative", "perimeter_sandwich"}
    assert all(c.passed for c in checks)


def test_two_resolution_records_both_grids():
    records = run_convergence(_cfg(two_resolution=True))
    for r in records:
        assert len(r.rho_fine) == len(r.rho) == 4
        assert r.mean_fine == pytest.approx(float(np.mean(r.rho_fine)))
        assert r.resolution_divergence >= 0
        assert r.resolution_flag == (r.resolution_divergence > 0.01)


def test_two_resolution_is_skipped_for_a_singleton():
    records = run_convergence(_cfg(model="singleton", two_resolution=True))
    assert all(r.rho_fine is None for r in records)


def test_moments_of_the_brownian_hull():
    cfg = _cfg(grid_points=32, dirs=180, n_schedule=[100, 1000], reps=16, nested=True)
    table = run_moment_table(cfg, ["perimeter", "area", "diameter"])
    for per, ar in zip(table["perimeter"], table["area"]):
        assert per.target == pytest.approx(2 * math.pi)
        assert ar.target == pytest.approx(math.pi)
        assert 0.6 < per.ratio < 1.1
        for lp, la in zip(per.values, ar.values):
            assert la / math.pi <= (lp / (2 * math.pi)) ** 2 + 1e-12
    for d in table["diameter"]:
        assert d.degree == 1
        assert 1.0 < d.estimate < 2.5


def test_power_moments():
    first = run_moments(_cfg(), "perimeter")
    second = run_moments(_cfg(), "perimeter", power=2.0)
    for a, b in zip(first, second):
        np.testing.assert_allclose(b.values, np.square(a.values), rtol=1e-12)
        assert b.target == pytest.approx(4 * math.pi ** 2)


def test_moment_errors():
    with pytest.raises(ExperimentError):
        run_moments(_cfg(), "volume")
    with pytest.raises(ExperimentError):
        run_moments(_cfg(dim=3), "perimeter")
    with pytest.raises(ExperimentError):
        run_moments(_cfg(), "perimeter", power=0.0)


def test_other_dimensions():
    d1 = run_moments(_cfg(dim=1, reps=3), "diameter")
    assert all(0 < r.estimate < 3 for r in d1)
    d3 = run_convergence(_cfg(dim=3, dirs=200, reps=2, grid_points=16))
    assert all(min(r.rho) >= 0 for r in d3)


def test_anisotropic_convergence_targets_the_ellipse():
    records = run_convergence(_cfg(axis_scales=[1.0, 2.0], n_schedule=[100, 5000], reps=8, nested=True))
    assert records[-1].mean < records[0].mean


def _record(n, mean, se):
    root = math.sqrt(math.log(n))
    return ConvergenceRecord(
        n=n, rho=[mean], mean=mean, se=se, rate=root * mean, rate_se=root * se,
        grid=GridInfo(grid_points=8, dirs=8, mesh=0.1, mesh_error=0.0),
    )


def test_rate_series_tolerates_one_pooled_se():
    flat = rate_series([_record(100, 0.20, 0.01), _record(1000, 0.17, 0.01)])
    assert flat.non_increasing
    rising = rate_series([_record(100, 0.20, 0.001), _record(1000, 0.25, 0.001)])
    assert not rising.non_increasing


def test_singleton_hull_on_the_line_is_the_sample_range():
    model = parse_model_spec("singleton", dim=1)
    result = run_hull(model, 8, 10, SeedSpec(21), dir_grid=DirectionGrid.line())
    z = sample_paths(model, TimeGrid.uniform(8), 10, SeedSpec(21)).values.reshape(-1)
    assert z.size == 10
    np.testing.assert_array_equal(result.profile.values, [z.max(), -z.min()])


def test_two_brownian_paths_on_two_times_span_four_points():
    model = parse_model_spec("bm", dim=2)
    result = run_hull(model, 2, 2, SeedSpec(22), dir_grid=DirectionGrid.circle(90))
    pts = sample_paths(model, TimeGrid.uniform(2), 2, SeedSpec(22)).points()
    assert pts.shape == (4, 2)
    np.testing.assert_allclose(result.hull.vertices, hull_2d(pts).vertices)
    np.testing.assert_allclose(result.scaled.vertices, hull_2d(pts).vertices / normalizer(2))


def test_opposite_directions_share_the_oracle():
    cfg = ExperimentConfig(model="bm", dim=2, grid_points=64, n_schedule=[100, 1000], reps=64, seed=23, threads=2)
    for r in run_extremes(cfg, [0.6, 0.8]):
        assert r.target == pytest.approx(1.0)
        allowance = discretization_allowance(64) / normalizer(r.n)
        for value in (r.mean, r.min_mean):
            assert r.oracle_mean - allowance - 4 * r.se <= value <= r.oracle_mean + 4 * r.se
        assert abs(r.mean - r.min_mean) <= 4 * math.sqrt(2) * r.se


def test_perimeter_sandwich_on_the_default_direction_grid():
    checks = []
    run_convergence(_cfg(dirs=720, reps=2), checks=checks)
    sandwich = [c for c in checks if c.name == "perimeter_sandwich"]
    assert len(sandwich) == 1 and sandwich[0].passed


def test_default_replications_shrink_for_large_n():
    cfg = ExperimentConfig(n_schedule=[100, 10_000, 20_000])
    assert [cfg.reps_for(n) for n in cfg.n_schedule] == [32, 32, 8]
    assert ExperimentConfig(n_schedule=[100, 20_000], reps=5).reps_for(20_000) == 5


@pytest.mark.parametrize("nested", [False, True])
def test_default_replications_in_a_run(nested):
    checks = []
    cfg = _cfg(reps=None, grid_points=4, dirs=16, n_schedule=[10, 10_001], nested=nested, chunk_paths=4096)
    records = run_convergence(cfg, checks=checks)
    assert [len(r.rho) for r in records] == [32, 8]
    assert all(c.passed for c in checks)
