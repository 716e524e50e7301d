import numpy as np
import pytest

from mcumap.costmodel import (
    TileShape, choose_spatial_adaptation, contiguous_chunks, diana_layer_cycles,
    gap9_cluster_layer_cycles, ne16_layer_cycles, transfer_cycles, walk_chunks,
)
from mcumap.target import MemoryLevel


def test_chunks_whole_tensor_is_one_run():
    assert contiguous_chunks((32, 32, 64), (32, 32, 64)) == 1
    assert contiguous_chunks((1,), (1,)) == 1


def test_chunks_row_block_examples():
    assert contiguous_chunks((8, 32, 64), (32, 32, 64)) == 1
    assert contiguous_chunks((8, 8, 64), (32, 32, 64)) == 8


@pytest.mark.parametrize("seed", range(40))
def test_chunks_match_linear_walk(seed):
    rng = np.random.default_rng(seed)
    rank = int(rng.integers(1, 5))
    full = [int(rng.integers(1, 7)) for _ in range(rank)]
    tile = [int(rng.integers(1, f + 1)) for f in full]
    assert contiguous_chunks(tile, full) == walk_chunks(tile, full)


def test_transfer_cycles_examples():
    diana_l2 = MemoryLevel("l2", 1, ("I",), bandwidth=8, chunk_overhead=70)
    gap9_l2 = MemoryLevel("l2", 1, ("I",), bandwidth=8, chunk_overhead=27)
    assert transfer_cycles(1024, 1, diana_l2) == 198
    assert transfer_cycles(1024, 16, gap9_l2) == 560
    assert transfer_cycles(0, 3, diana_l2) == 3 * 70


def test_transfer_cycles_monotone_in_level_parameters():
    for bw in (1, 2, 4, 8, 16):
        faster = MemoryLevel("a", 1, ("I",), bandwidth=bw * 2, chunk_overhead=10)
        slower = MemoryLevel("b", 1, ("I",), bandwidth=bw, chunk_overhead=10)
        assert transfer_cycles(999, 3, faster) <= transfer_cycles(999, 3, slower)
    low = MemoryLevel("c", 1, ("I",), bandwidth=8, chunk_overhead=5)
    high = MemoryLevel("d", 1, ("I",), bandwidth=8, chunk_overhead=50)
    assert transfer_cycles(999, 3, low) <= transfer_cycles(999, 3, high)


def test_diana_cycles_examples():
    assert diana_layer_cycles([TileShape(16, 1, 1, 16, 1, 1)]) == 26
    big = TileShape(64, 64, 32, 32, 3, 3)
    assert diana_layer_cycles([big]) == 448256
    # doubling an aligned K doubles the total
    k2 = TileShape(128, 64, 32, 32, 3, 3)
    assert diana_layer_cycles([k2]) == 2 * 448256


def test_gap9_cluster_cycles_examples():
    assert gap9_cluster_layer_cycles([TileShape(4, 1, 8, 2, 1, 1)]) == 202
    one = TileShape(4, 1, 8, 2, 1, 1)
    nine = TileShape(4, 1, 8, 2, 3, 3)
    c = {"c_setup": 0}
    assert gap9_cluster_layer_cycles([nine], c) == 9 * gap9_cluster_layer_cycles([one], c)
    # ceiling plateau: K=3 and K=4 are the same iteration count
    assert gap9_cluster_layer_cycles([TileShape(3, 1, 8, 2, 1, 1)]) == \
        gap9_cluster_layer_cycles([TileShape(4, 1, 8, 2, 1, 1)])


def test_ne16_cycles_examples():
    assert ne16_layer_cycles([TileShape(32, 16, 3, 3, 3, 3)]) == 359
    assert ne16_layer_cycles([TileShape(32, 16, 6, 3, 3, 3)]) == 418
    same_blocks_1x1 = ne16_layer_cycles([TileShape(32, 16, 3, 3, 1, 1)])
    same_blocks_3x3 = ne16_layer_cycles([TileShape(32, 16, 3, 3, 3, 3)])
    assert same_blocks_1x1 < same_blocks_3x3
    with pytest.raises(AssertionError):
        ne16_layer_cycles([TileShape(8, 8, 4, 4, 4, 10)])


def test_compute_models_additive_over_aligned_partitions():
    """Splitting along unroll-aligned K/OY/OX boundaries preserves the total
    once per-tile setup constants are zeroed."""
    whole = TileShape(64, 16, 32, 32, 3, 3)
    halves = [TileShape(32, 16, 32, 32, 3, 3)] * 2
    quarters = [TileShape(32, 16, 16, 32, 3, 3)] * 4
    assert diana_layer_cycles([whole]) == diana_layer_cycles(halves)
    zero = {"c_setup": 0}
    assert gap9_cluster_layer_cycles([whole], zero) == gap9_cluster_layer_cycles(halves, zero)
    assert gap9_cluster_layer_cycles([whole], zero) == gap9_cluster_layer_cycles(quarters, zero)
    nz = {"c_setup": 0, "c_block_3x3": 59, "c_block_1x1": 27}
    def ne16_aligned(t):  # block-aligned splits for the 32/16/3/3 geometry
        return ne16_layer_cycles(t, nz)
    whole_b = TileShape(64, 16, 6, 6, 3, 3)
    split_b = [TileShape(32, 16, 6, 6, 3, 3)] * 2
    assert ne16_aligned([whole_b]) == ne16_aligned(split_b)


def test_spatial_adaptation_examples():
    assert choose_spatial_adaptation(8, 8) == ("keep", 8)
    assert choose_spatial_adaptation(12, 8) == ("keep", 6)
    assert choose_spatial_adaptation(9, 8) == ("pad", 16)
    assert choose_spatial_adaptation(1, 16) == ("keep", 1)


@pytest.mark.parametrize("seed", range(60))
def test_spatial_adaptation_invariants(seed):
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(1, 200))
    unroll = int(rng.integers(1, 32))
    kind, value = choose_spatial_adaptation(dim, unroll)
    if kind == "keep":
        assert value <= unroll
        assert dim % value == 0
    else:
        assert value % unroll == 0
        assert value >= dim
