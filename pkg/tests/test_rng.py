import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ruin2d.rng import PathStream, block_uniforms, raw_block, u_open0, u_open1

U64 = st.integers(0, 2**64 - 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**64 - 2), U64, U64, U64, U64, U64)
def test_philox_matches_numpy(c0, c1, c2, c3, k0, k1):
    # numpy advances the counter before producing its first block
    ref = np.random.Philox(counter=np.array([c0, c1, c2, c3], dtype=np.uint64),
                           key=np.array([k0, k1], dtype=np.uint64)).random_raw(4)
    assert np.array_equal(raw_block((c0 + 1, c1, c2, c3), (k0, k1)), ref)


def test_uniform_conversions_cover_their_intervals():
    top = np.uint64(2**64 - 1)
    assert u_open0(np.uint64(0)) == 2.0**-53
    assert u_open0(top) == 1.0
    assert u_open1(np.uint64(0)) == 0.0
    assert u_open1(top) == 1.0 - 2.0**-53


def test_block_uniforms_are_keyed():
    a = block_uniforms(np.uint64(5), 3, 0, 7, 1)
    assert a == block_uniforms(np.uint64(5), 3, 0, 7, 1)
    for other in [(6, 3, 0, 7, 1), (5, 4, 0, 7, 1), (5, 3, 1, 7, 1), (5, 3, 0, 8, 1), (5, 3, 0, 7, 2)]:
        assert a != block_uniforms(np.uint64(other[0]), *other[1:])
    assert all(0.0 < v <= 1.0 for v in a)


def test_block_uniforms_look_uniform():
    u = np.array([block_uniforms(np.uint64(99), p, 0, n, 0) for p in range(50) for n in range(100)]).ravel()
    assert stats.kstest(u, "uniform").pvalue > 1e-3


def test_path_stream_validation():
    PathStream(2**64 - 1, 0)
    with pytest.raises(ValueError):
        PathStream(-1, 0)
    with pytest.raises(ValueError):
        PathStream(1, -2)
