import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from pupilrecon.errors import ParameterError
from pupilrecon.tiles import TileGrid, merge_tiles, split_tiles


def test_single_tile_is_identity(rng):
    x = rng.random((64, 64))
    g = TileGrid((64, 64), 64, 0)
    tiles = split_tiles(x, g)
    assert len(tiles) == 1
    assert np.array_equal(tiles[0], x)
    assert np.array_equal(merge_tiles(tiles, g), x)


def test_two_by_two_quadrants(rng):
    x = rng.random((64, 64))
    g = TileGrid((64, 64), 32, 0)
    q = split_tiles(x, g)
    assert g.origins == [(0, 0), (0, 32), (32, 0), (32, 32)]
    assert np.array_equal(q[1], x[:32, 32:])
    assert np.array_equal(q[2], x[32:, :32])
    assert np.array_equal(merge_tiles(q, g), x)


def test_three_by_three_overlap_round_trip_bit_exact(rng):
    x = rng.random((256, 256))
    g = TileGrid.regular((256, 256), 3, 16)
    assert len(g) == 9 and g.tile_size == 96
    assert np.array_equal(merge_tiles(split_tiles(x, g), g), x)


def test_blend_weights_partition_of_unity():
    g = TileGrid.regular((256, 256), 3, 16)
    total = np.zeros((256, 256))
    for (r, c), w in zip(g.origins, g.weights()):
        total[r:r + 96, c:c + 96] += w
    assert np.abs(total - 1).max() <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(40, 200), st.integers(40, 200), st.integers(16, 64), st.integers(0, 12))
def test_cover_and_partition_any_grid(h, w, size, overlap):
    size = min(size, h, w)
    overlap = min(overlap, size // 2)
    try:
        g = TileGrid((h, w), size, overlap)
    except ParameterError:
        # spreading can push neighbors past half a tile of overlap; rejected by design
        assume(False)
    total = np.zeros((h, w))
    for (r, c), wt in zip(g.origins, g.weights()):
        total[r:r + size, c:c + size] += wt
    assert np.abs(total - 1).max() <= 1e-12
    x = np.arange(h * w, dtype=float).reshape(h, w)
    assert np.array_equal(merge_tiles(split_tiles(x, g), g), x)


def test_constant_tiles_give_constant_output():
    g = TileGrid((128, 128), 48, 8)
    out = merge_tiles([np.full((48, 48), 3.7) for _ in range(len(g))], g)
    assert np.all(out == 3.7)


def test_errors():
    with pytest.raises(ParameterError):
        TileGrid((32, 32), 64)
    with pytest.raises(ParameterError):
        TileGrid((64, 64), 32, -1)
    g = TileGrid((64, 64), 32, 0)
    with pytest.raises(ParameterError):
        merge_tiles([np.zeros((32, 32))] * 3, g)
    with pytest.raises(ParameterError):
        split_tiles(np.zeros((60, 64)), g)
    with pytest.raises(ParameterError):
        TileGrid.regular((256, 256), 3, 0)
