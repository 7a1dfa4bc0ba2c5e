import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from papreid.data_model import Tensor3
from papreid.pooling import PartFeatureSet, global_pool, pap_pool, pcb_pool, pool_batch
from papreid.regions import RegionBand, pcb_stripes


def test_max_of_band():
    fmap = Tensor3(np.array([[[1, 3], [2, 0]]], dtype=np.float32))
    feats = pap_pool(fmap, [RegionBand(0, 0, 2, True)])
    assert feats.parts.tolist() == [[3.0]]
    assert feats.visible.tolist() == [True]


def test_invisible_band_is_zero_vector():
    fmap = Tensor3(np.full((4, 3, 2), 7.0))
    feats = pap_pool(fmap, [RegionBand(0), RegionBand(1, 0, 3, True)])
    assert feats.parts[0].tolist() == [0.0] * 4
    assert feats.visible.tolist() == [False, True]


def test_band_out_of_range():
    fmap = Tensor3(np.zeros((1, 2, 2)))
    with pytest.raises(ValueError):
        pap_pool(fmap, [RegionBand(0, 1, 3, True)])


def test_pcb_hand_example():
    fmap = Tensor3(np.array([1, 5, 2, 7], dtype=np.float32).reshape(1, 4, 1))
    assert pcb_pool(fmap, 2).parts.tolist() == [[5.0], [7.0]]


def test_constant_map():
    fmap = Tensor3(np.full((3, 12, 4), 2.5))
    feats = pcb_pool(fmap, 6)
    assert np.all(feats.parts == 2.5)
    assert global_pool(fmap).parts.tolist() == [[2.5] * 3]


def test_single_pixel_global():
    assert global_pool(Tensor3(np.array([[[-4.0]]]))).parts.tolist() == [[-4.0]]


def test_part_feature_set_invariants():
    with pytest.raises(ValueError):
        PartFeatureSet(np.ones((2, 3)), [True, False])
    with pytest.raises(ValueError):
        PartFeatureSet(np.full((1, 3), np.nan), [True])


fmaps = arrays(
    np.float32,
    st.tuples(st.integers(1, 4), st.integers(6, 20), st.integers(1, 5)),
    elements=st.floats(-100, 100, width=32),
)


@settings(max_examples=60, deadline=None)
@given(fmaps)
def test_pap_on_stripes_equals_pcb(vals):
    fmap = Tensor3(vals)
    assert pap_pool(fmap, pcb_stripes(6, fmap.height)) == pcb_pool(fmap, 6)
    assert pcb_pool(fmap, 1) == global_pool(fmap)


@settings(max_examples=60, deadline=None)
@given(fmaps, st.data())
def test_permutation_within_band(vals, data):
    fmap = Tensor3(vals)
    bands = pcb_stripes(3, fmap.height)
    perm = vals.copy()
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    for b in bands:
        block = perm[:, b.row_start : b.row_end, :]
        flat = block.reshape(block.shape[0], -1)
        perm[:, b.row_start : b.row_end, :] = rng.permuted(flat, axis=1).reshape(block.shape)
    assert pap_pool(Tensor3(perm), bands) == pap_pool(fmap, bands)


@settings(max_examples=60, deadline=None)
@given(fmaps, st.data())
def test_monotone(vals, data):
    C, H, W = vals.shape
    c = data.draw(st.integers(0, C - 1))
    h = data.draw(st.integers(0, H - 1))
    w = data.draw(st.integers(0, W - 1))
    bumped = vals.copy()
    bumped[c, h, w] += data.draw(st.floats(0, 50, width=32))
    bands = pcb_stripes(6, H)
    before = pap_pool(Tensor3(vals), bands).parts
    after = pap_pool(Tensor3(bumped), bands).parts
    assert np.all(after >= before)


def test_pool_batch_independent_of_threads():
    rng = np.random.default_rng(1)
    maps = [Tensor3(rng.standard_normal((8, 24, 8))) for _ in range(20)]
    bands = [pcb_stripes(6, 24) for _ in maps]
    serial = pool_batch(maps, bands, threads=1)
    threaded = pool_batch(maps, bands, threads=4)
    assert all(a == b for a, b in zip(serial, threaded))
