import os

import pytest

from app.hullshape.acceptance import SCALES, TITLES, format_table, geometry_properties, run_acceptance

slow = pytest.mark.skipif(
    os.getenv("HULLSHAPE_RUN_SLOW") != "1",
    reason="desk-scale Monte Carlo run. Set HULLSHAPE_RUN_SLOW=1 to enable",
)


def test_geometry_property_suite():
    passed, detail = geometry_properties(clouds=40, seed=5)
    assert passed, detail


def test_fast_criteria_pass():
    results = run_acceptance("quick", seed=0, threads=2, only=[1, 2, 8])
    assert [r.id for r in results] == [1, 2, 8]
    assert all(r.passed for r in results), format_table(results)
    assert all(r.seconds >= 0 for r in results)


def test_unknown_scale():
    with pytest.raises(ValueError):
        run_acceptance("huge")


def test_scales_cover_the_same_criteria():
    assert set(SCALES) == {"quick", "full"}
    assert sorted(TITLES) == list(range(1, 9))


@pytest.mark.slow
@slow
def test_quick_suite_passes():
    results = run_acceptance("quick", seed=0)
    assert all(r.passed for r in results), format_table(results)


@pytest.mark.slow
@slow
def test_full_suite_passes():
    results = run_acceptance("full", seed=0)
    assert all(r.passed for r in results), format_table(results)
