import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tiptrack.errors import InvalidArgument
from tiptrack.imgproc import (
    Component,
    Frame,
    LabelMap,
    ProbMap,
    connected_components,
    morphological_open,
    to_binary,
    to_uint8,
)

from oracles import dilate, erode, flood_fill_partition


def masks(max_side=64):
    return st.tuples(st.integers(1, max_side), st.integers(1, max_side)).flatmap(
        lambda hw: arrays(np.bool_, hw, elements=st.booleans())
    )


def partition(comps):
    return {frozenset(zip(c.xs.tolist(), c.ys.tolist())) for c in comps}


# -- frames and label maps -------------------------------------------------


def test_frame_is_readonly_and_validated():
    f = Frame(np.zeros((4, 5), np.uint8), 3, 0)
    assert (f.width, f.height, f.channels) == (5, 4, 1)
    with pytest.raises(ValueError):
        f.data[0, 0] = 1
    with pytest.raises(InvalidArgument):
        Frame(np.zeros((4, 5, 2), np.uint8), 0, 0)


def test_rgb_gray_and_uint8_rescale():
    rgb = np.zeros((2, 2, 3), np.uint8)
    rgb[..., 1] = 200
    assert Frame(rgb, 0, 0).gray().shape == (2, 2)
    u16 = np.array([[0, 1000], [2000, 4000]], np.uint16)
    out = to_uint8(u16)
    assert out.dtype == np.uint8
    np.testing.assert_array_equal(out, np.round(u16 / 65535 * 255).astype(np.uint8))
    np.testing.assert_array_equal(to_uint8(np.array([[0.0, 1.0]])), [[0, 255]])


def test_labelmap_rejects_out_of_range():
    with pytest.raises(InvalidArgument):
        LabelMap(np.full((3, 3), 2, np.uint8), 2)
    with pytest.raises(InvalidArgument):
        LabelMap(np.zeros((3, 3), np.uint8), 4)


def test_probmap_roundtrip():
    lab = LabelMap(np.array([[0, 1], [2, 0]], np.uint8), 3)
    pm = lab.to_probmap()
    assert pm.num_classes == 3 and pm.is_normalized()
    assert pm.argmax() == lab


# -- to_binary -------------------------------------------------------------


def test_to_binary_examples():
    bg = LabelMap(np.zeros((8, 8), np.uint8), 3)
    assert not to_binary(bg, {1}).any()

    arr = np.zeros((8, 8), np.uint8)
    arr[1, 1:4] = 1
    arr[5, 2:6] = 2
    lab = LabelMap(arr, 3)
    np.testing.assert_array_equal(to_binary(lab, {1, 2}), arr > 0)

    one = np.zeros((8, 8), np.uint8)
    one[5, 5] = 1
    assert not to_binary(LabelMap(one, 3), {2}).any()


def test_to_binary_rejects_bad_class():
    lab = LabelMap(np.zeros((2, 2), np.uint8), 2)
    with pytest.raises(InvalidArgument):
        to_binary(lab, {2})
    with pytest.raises(InvalidArgument):
        to_binary(lab, set())


@given(arrays(np.uint8, (12, 12), elements=st.integers(0, 2)))
def test_to_binary_idempotent(arr):
    b = to_binary(LabelMap(arr, 3), {1})
    again = to_binary(LabelMap(b.astype(np.uint8), 2), {1})
    np.testing.assert_array_equal(b, again)


# -- connected components --------------------------------------------------


def test_cc_examples():
    assert connected_components(np.zeros((5, 5), bool)) == []

    m = np.zeros((6, 6), bool)
    m[0:3, 0:3] = True
    (c,) = connected_components(m)
    assert c.area == 9
    assert c.bbox == (0, 0, 2, 2)
    assert c.centroid == (1.0, 1.0)

    d = np.zeros((3, 3), bool)
    d[0, 0] = d[1, 1] = True
    assert len(connected_components(d, 8)) == 1
    assert len(connected_components(d, 4)) == 2


def test_cc_sorted_by_top_then_left():
    m = np.zeros((10, 10), bool)
    m[5, 1] = m[2, 8] = m[2, 3] = True
    keys = [c.sort_key() for c in connected_components(m)]
    assert keys == sorted(keys) == [(2, 3), (2, 8), (5, 1)]


@settings(max_examples=150, deadline=None)
@given(masks(), st.sampled_from([4, 8]))
def test_cc_matches_flood_fill(mask, conn):
    comps = connected_components(mask, conn)
    assert partition(comps) == flood_fill_partition(mask, conn)


@settings(max_examples=100, deadline=None)
@given(masks())
def test_cc_union_is_foreground_and_disjoint(mask):
    comps = connected_components(mask)
    seen = set()
    for c in comps:
        px = c.pixel_set
        assert not (px & seen)
        seen |= px
    ys, xs = np.nonzero(mask)
    assert seen == set(zip(xs.tolist(), ys.tolist()))


def test_component_local_mask():
    c = Component.from_pixels([(3, 4), (4, 4), (4, 5)])
    mask, ox, oy = c.local_mask(pad=1)
    assert (ox, oy) == (2, 3)
    assert mask.sum() == 3 and mask[1, 1] and mask[2, 2]


# -- morphology ------------------------------------------------------------


def test_open_examples():
    rng = np.random.default_rng(0)
    m = rng.random((16, 16)) > 0.5
    np.testing.assert_array_equal(morphological_open(m, 0), m)

    p = np.zeros((9, 9), bool)
    p[4, 4] = True
    assert not morphological_open(p, 1).any()

    b = np.zeros((9, 9), bool)
    b[2:7, 2:7] = True
    np.testing.assert_array_equal(morphological_open(b, 1), dilate(erode(b, 1), 1))
    np.testing.assert_array_equal(morphological_open(b, 1), b)


@settings(max_examples=60, deadline=None)
@given(masks(24), st.integers(0, 2))
def test_open_matches_brute_force(mask, r):
    np.testing.assert_array_equal(morphological_open(mask, r), dilate(erode(mask, r), r))


@settings(max_examples=100, deadline=None)
@given(masks(40), st.integers(0, 3))
def test_open_is_bounded(mask, r):
    out = morphological_open(mask, r)
    assert not (out & ~dilate(mask, r)).any()
    assert out.sum() <= mask.sum()
