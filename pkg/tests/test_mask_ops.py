import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cacscore.errors import GeometryMismatch
from cacscore.mask_ops import (
    StructuringElement,
    build_cardiac_roi,
    convex_hull_slicewise,
    dilate,
    negate,
    union,
)
from cacscore.volume_io import LabelMask, OrganMasks

from .oracles import brute_dilate, hull_fill, hull_fill_slice, l1_ball_offsets

FACE6 = StructuringElement("face6")
FULL26 = StructuringElement("full26")


def mask(arr, spacing=(0.5, 0.5, 3.0)):
    return LabelMask(np.asarray(arr, dtype=np.uint8), spacing)


def voxels(*ijk, dims=(5, 5, 5)):
    a = np.zeros(dims, np.uint8)
    for v in ijk:
        a[v] = 1
    return mask(a)


def test_kernel_cardinalities():
    assert len(FACE6.offsets()) == 7
    assert len(FULL26.offsets()) == 27
    assert len(StructuringElement.ball(1).offsets()) == 7
    assert len(StructuringElement.ball(1, "full26").offsets()) == 27
    assert len(StructuringElement.ball(2).offsets()) == len(l1_ball_offsets(2)) == 25
    assert len(StructuringElement.ball(0).offsets()) == 1


def test_union_examples():
    a = voxels((0, 0, 0), (1, 0, 0), (2, 0, 0))
    b = voxels((4, 4, 4), (3, 3, 3))
    assert union(a, b).data.sum() == 5
    np.testing.assert_array_equal(union(a, a).data, a.data)
    np.testing.assert_array_equal(union(a, voxels()).data, a.data)
    with pytest.raises(GeometryMismatch):
        union(a, LabelMask(a.data, (1, 1, 1)))


def test_dilate_examples():
    assert dilate(voxels((2, 2, 2)), FACE6).data.sum() == 7
    assert dilate(voxels((2, 2, 2)), FULL26).data.sum() == 27
    # corner: only offsets that stay inside the grid survive
    inside = [d for d in l1_ball_offsets(1) if all(c >= 0 for c in d)]
    assert len(inside) == 4
    assert dilate(voxels((0, 0, 0)), StructuringElement.ball(1)).data.sum() == 4


def test_negate_examples():
    m = voxels((0, 0, 0), (1, 2, 3))
    assert negate(m).data.sum() == 125 - 2
    np.testing.assert_array_equal(negate(negate(m)).data, m.data)
    assert negate(mask(np.ones((3, 3, 3)))).data.sum() == 0


def test_hull_triangle():
    sl = np.zeros((6, 6, 1), np.uint8)
    sl[0, 0, 0] = sl[4, 0, 0] = sl[0, 4, 0] = 1
    out = convex_hull_slicewise(mask(sl)).data[:, :, 0]
    assert out.sum() == hull_fill_slice(sl[:, :, 0].astype(bool)).sum() == 15
    ii, jj = np.nonzero(out)
    assert ((ii + jj) <= 4).all()


def test_hull_fixed_points():
    rect = np.zeros((8, 8, 2), np.uint8)
    rect[2:6, 1:7, 0] = 1
    rect[3, 3, 1] = rect[5, 6, 1] = 1  # two voxels: degenerate
    out = convex_hull_slicewise(mask(rect))
    np.testing.assert_array_equal(out.data, rect)
    line = np.zeros((8, 8, 1), np.uint8)
    line[1, 1, 0] = line[3, 3, 0] = line[6, 6, 0] = 1  # collinear, gaps kept
    np.testing.assert_array_equal(convex_hull_slicewise(mask(line)).data, line)


def test_hull_preserves_geometry():
    m = LabelMask(np.ones((3, 3, 3), np.uint8), (0.5, 0.7, 3.0), (1.0, -2.0, 5.0))
    out = convex_hull_slicewise(m)
    assert out.same_geometry(m)


def _organs(dims=(20, 20, 20)):
    heart = np.zeros(dims, np.uint8)
    heart[7:13, 7:13, 5:15] = 1
    aorta = np.zeros(dims, np.uint8)
    aorta[9:11, 13:18, 3:17] = 1
    lungs = np.zeros(dims, np.uint8)
    lungs[0:4] = 1
    lungs[16:] = 1
    return OrganMasks(mask(heart), mask(aorta), mask(lungs))


def test_roi_matches_composition_oracle():
    o = _organs()
    roi = build_cardiac_roi(o, 3)
    grown = brute_dilate(o.heart.data.astype(bool) | o.aorta.data.astype(bool), l1_ball_offsets(3))
    expected = hull_fill(grown) & ~o.lungs.data.astype(bool)
    np.testing.assert_array_equal(roi.data.astype(bool), expected)
    assert roi.data.sum() == 2168  # frozen from the oracle above


def test_roi_properties():
    o = _organs()
    roi = build_cardiac_roi(o, 3).data.astype(bool)
    heart = o.heart.data.astype(bool)
    lungs = o.lungs.data.astype(bool)
    assert (roi >= (heart & ~lungs)).all()
    assert not (roi & lungs).any()
    assert (build_cardiac_roi(o, 3).data >= build_cardiac_roi(o, 0).data).all()
    empty = mask(np.zeros((20, 20, 20)))
    assert build_cardiac_roi(OrganMasks(empty, empty, empty), 3).data.sum() == 0


def test_roi_geometry_mismatch():
    o = _organs()
    with pytest.raises(GeometryMismatch):
        build_cardiac_roi(OrganMasks(o.heart, o.aorta, LabelMask(o.lungs.data, (1, 1, 1))))


small_masks = arrays(np.bool_, st.tuples(st.integers(1, 7), st.integers(1, 7), st.integers(1, 4)))
kernels = st.sampled_from([FACE6, FULL26, StructuringElement.ball(2)])


@settings(max_examples=60, deadline=None)
@given(small_masks, kernels)
def test_dilate_matches_brute_force(a, se):
    np.testing.assert_array_equal(dilate(mask(a), se).data.astype(bool), brute_dilate(a, se.offsets()))


@settings(max_examples=60, deadline=None)
@given(small_masks)
def test_hull_matches_qhull_oracle(a):
    np.testing.assert_array_equal(convex_hull_slicewise(mask(a)).data.astype(bool), hull_fill(a))
