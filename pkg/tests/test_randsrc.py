import numpy as np
import pytest
from scipy import stats

from app.hullshape.randsrc import MASK64, SeedSpec, cell_stream_id, derive_stream, mix64


def test_mix64_is_injective_on_a_sample():
    xs = list(range(5000)) + [MASK64 - i for i in range(5000)]
    assert len({mix64(x) for x in xs}) == len(xs)
    assert all(0 <= mix64(x) <= MASK64 for x in xs[:100])


def test_distinct_stream_ids_give_distinct_keys():
    keys = {SeedSpec(42, s).key for s in range(20000)}
    assert len(keys) == 20000


def test_cell_stream_ids_are_distinct():
    ids = {cell_stream_id(rep, idx) for rep in range(200) for idx in range(10)}
    assert len(ids) == 2000


@pytest.mark.parametrize("bad", [-1, 2**64, True])
def test_seed_spec_rejects_out_of_range(bad):
    with pytest.raises((ValueError, TypeError)):
        SeedSpec(bad)


def test_same_seed_same_variates():
    a = derive_stream(SeedSpec(7, 3)).standard_normal(1000)
    b = derive_stream(SeedSpec(7, 3)).standard_normal(1000)
    np.testing.assert_array_equal(a, b)


def test_neighbouring_streams_differ():
    a = derive_stream(SeedSpec(7, 3)).standard_normal(100)
    b = derive_stream(SeedSpec(7, 4)).standard_normal(100)
    assert not np.array_equal(a, b)


def test_iteration_and_array_draws_share_the_sequence():
    arr = derive_stream(SeedSpec(11)).standard_normal(5)
    it = iter(derive_stream(SeedSpec(11)))
    np.testing.assert_array_equal(arr, [next(it) for _ in range(5)])


def test_split_draws_continue_the_stream():
    whole = derive_stream(SeedSpec(5)).standard_normal((10, 4))
    stream = derive_stream(SeedSpec(5))
    parts = np.vstack([stream.standard_normal((3, 4)), stream.standard_normal((7, 4))])
    np.testing.assert_array_equal(whole, parts)


def test_first_two_moments_of_a_million_variates():
    z = derive_stream(SeedSpec(2024, 1)).standard_normal(10**6)
    assert abs(z.mean()) < 4.0 / np.sqrt(10**6)
    assert abs(z.var() - 1.0) < 0.01


def test_ks_passes_for_99_of_100_seeds():
    failures = sum(
        stats.kstest(derive_stream(SeedSpec(seed)).standard_normal(10**5), "norm").pvalue < 1e-3
        for seed in range(100)
    )
    assert failures <= 1


@pytest.mark.parametrize("seed", [0, 1, 42, 2**63 + 5])
def test_lag_one_autocorrelation(seed):
    z = derive_stream(SeedSpec(seed, 9)).standard_normal(10**5)
    assert abs(np.corrcoef(z[:-1], z[1:])[0, 1]) < 0.02


def test_streams_are_uncorrelated():
    a = derive_stream(SeedSpec(1, cell_stream_id(0, 0))).standard_normal(20000)
    b = derive_stream(SeedSpec(1, cell_stream_id(0, 1))).standard_normal(20000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.05
