import numpy as np
import pytest
from hypothesis import given, strategies as st

from camoseg.geometry import BinaryMask, BoundingBox, ImagePoint, SoftMask, mask_iou
from camoseg.mocklab import cell_mask, mock_segmenter
from camoseg.segmenter import (
    MaskCandidate, binarize, candidates_from_wire, candidates_to_wire, parse_segment_request, segment,
    segment_request, select_mask,
)
from camoseg.services import FatalServiceError


def cand(conf, area, shape=(20, 20)):
    v = np.zeros(shape)
    v.ravel()[:area] = 1.0
    return MaskCandidate(SoftMask(v), conf)


def test_select_mask_examples():
    cs = [cand(0.3, 5), cand(0.9, 5), cand(0.5, 5)]
    assert select_mask(cs) is cs[1].mask
    cs = [cand(0.8, 100), cand(0.8, 200)]
    assert select_mask(cs) is cs[1].mask
    one = [cand(0.1, 3)]
    assert select_mask(one) is one[0].mask
    same = [cand(0.8, 10), cand(0.8, 10)]
    assert select_mask(same) is same[0].mask


def test_binarize_examples():
    assert binarize(SoftMask(np.full((2, 2), 0.7))).values.all()
    assert not binarize(SoftMask(np.full((2, 2), 0.3))).values.any()
    assert binarize(SoftMask(np.array([[0.2, 0.5, 0.8]]))).values.tolist() == [[False, True, True]]


@given(st.integers(0, 2**32 - 1), st.floats(0, 1), st.floats(0, 1))
def test_binarize_monotone(seed, t1, t2):
    m = SoftMask(np.random.default_rng(seed).random((6, 6)))
    lo, hi = sorted((t1, t2))
    assert not (binarize(m, hi).values & ~binarize(m, lo).values).any()


def test_wire_round_trip():
    cs = [cand(0.25, 7), cand(0.75, 30)]
    back = candidates_from_wire(candidates_to_wire(cs))
    assert [c.confidence for c in back] == [0.25, 0.75]
    assert all(np.array_equal(a.mask.values, b.mask.values) for a, b in zip(cs, back))
    img = np.zeros((4, 4, 3), np.uint8)
    pts = [ImagePoint(0.2, 0.3), ImagePoint(0.9, 0.1)]
    box = BoundingBox(0.1, 0.1, 0.5, 0.6)
    assert parse_segment_request(segment_request(img, pts, box)) == (pts, box)
    assert parse_segment_request(segment_request(img, pts)) == (pts, None)


def test_mock_segmenter_on_planted_scene(scene, world):
    seg = mock_segmenter(world)
    r, c = sorted(scene.fg_cells)[0]
    fm = scene.features
    p = ImagePoint((c + 0.5) / fm.width, (r + 0.5) / fm.height)
    (a,) = segment(seg, scene.image, [p])
    assert mask_iou(binarize(a.mask), cell_mask(scene)) == 1.0
    (b,) = segment(seg, scene.image, [p])
    assert np.array_equal(a.mask.values, b.mask.values) and a.confidence == b.confidence


def test_segment_preconditions(scene, world):
    with pytest.raises(ValueError):
        segment(mock_segmenter(world), scene.image, [])

    class Bad:
        def describe(self):
            return {"service_id": "bad"}

        def segment(self, image, points, box=None):
            return [cand(1.0, 1, shape=(3, 3))]

    with pytest.raises(FatalServiceError):
        segment(Bad(), scene.image, [ImagePoint(0.5, 0.5)], retries=0)
