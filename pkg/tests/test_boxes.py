import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.models.grid import GridSpec
from app.services.boxes import (
    AnchorLabel,
    BoxEncoding,
    decode_box,
    encode_box,
    jiou,
    jiou_from_evidence,
    make_anchors,
    match_anchors,
    nms,
    pairwise_iou,
    rotated_iou_bev,
)
from app.services.evmap import EvidentialMap
from conftest import car
from models import Layer, OrientedBox3

# diagonal 5 keeps the location offsets readable
ANCHOR = OrientedBox3(x=0.0, y=0.0, z=0.0, l=3.0, w=4.0, h=2.0, yaw=0.0)


def yaw_gap(a: float, b: float) -> float:
    return abs(math.atan2(math.sin(a - b), math.cos(a - b)))


# ---------- encoding ----------

def test_encode_same_heading():
    gt = OrientedBox3(x=5.0, y=0.0, z=0.0, l=3.0, w=4.0, h=2.0, yaw=0.0)
    enc = encode_box(gt, ANCHOR)
    np.testing.assert_allclose(enc.loc, [1.0, 0.0, 0.0])
    np.testing.assert_allclose(enc.dim, [0.0, 0.0, 0.0])
    np.testing.assert_allclose(enc.dir, [0.0, 0.0, 2.0, 0.0], atol=1e-12)


def test_encode_reversed_heading():
    gt = ANCHOR.model_copy(update={"yaw": math.pi})
    enc = encode_box(gt, ANCHOR)
    np.testing.assert_allclose(enc.dir, [-2.0, 0.0, 0.0, 0.0], atol=1e-12)
    back = decode_box(enc, ANCHOR)
    assert yaw_gap(back.yaw, math.pi) < 1e-9


def test_encode_scales_dimensions_and_height():
    gt = OrientedBox3(x=0.0, y=-10.0, z=1.0, l=6.0, w=2.0, h=4.0, yaw=0.0)
    enc = encode_box(gt, ANCHOR)
    np.testing.assert_allclose(enc.loc, [0.0, -2.0, 0.5])
    np.testing.assert_allclose(enc.dim, [math.log(2.0), math.log(0.5), math.log(2.0)])


def test_zero_encoding_is_the_anchor():
    anchor = OrientedBox3(x=3.0, y=-1.0, z=0.5, l=4.41, w=1.98, h=1.64, yaw=math.pi / 2)
    back = decode_box(BoxEncoding.from_array(np.zeros(10)), anchor)
    assert back.center == pytest.approx(anchor.center)
    assert back.dims == pytest.approx(anchor.dims)
    assert yaw_gap(back.yaw, anchor.yaw) < 1e-12


def test_decode_inverts_encode(rng):
    for _ in range(1000):
        anchor = OrientedBox3(
            x=rng.uniform(-20, 20), y=rng.uniform(-20, 20), z=rng.uniform(-1, 1),
            l=rng.uniform(1, 6), w=rng.uniform(1, 3), h=rng.uniform(1, 3), yaw=rng.uniform(-math.pi, math.pi),
        )
        gt = OrientedBox3(
            x=anchor.x + rng.normal(0, 3), y=anchor.y + rng.normal(0, 3), z=anchor.z + rng.normal(0, 0.5),
            l=rng.uniform(1, 6), w=rng.uniform(1, 3), h=rng.uniform(1, 3), yaw=rng.uniform(-math.pi, math.pi),
        )
        back = decode_box(encode_box(gt, anchor), anchor)
        assert back.center == pytest.approx(gt.center, rel=0.0, abs=1e-9)
        assert back.dims == pytest.approx(gt.dims, rel=1e-9, abs=0.0)
        assert yaw_gap(back.yaw, gt.yaw) < 1e-9


def test_encoding_array_layout():
    enc = encode_box(car(1.0, 2.0, 0.3), car(0.0, 0.0))
    np.testing.assert_array_equal(BoxEncoding.from_array(enc.as_array()).as_array(), enc.as_array())
    assert enc.as_array().shape == (10,)


# ---------- overlap ----------

def square(x, y=0.0, side=2.0, yaw=0.0) -> OrientedBox3:
    return OrientedBox3(x=x, y=y, z=0.0, l=side, w=side, h=1.0, yaw=yaw)


def test_iou_examples():
    assert rotated_iou_bev(square(0.0), square(0.0)) == pytest.approx(1.0)
    assert rotated_iou_bev(square(0.0), square(5.0)) == 0.0
    assert rotated_iou_bev(square(0.0), square(1.0)) == pytest.approx(1.0 / 3.0)
    # a quarter turn of a square is the same footprint
    assert rotated_iou_bev(square(0.0), square(0.0, yaw=math.pi / 2)) == pytest.approx(1.0)


def random_box(rng, yaw=None) -> OrientedBox3:
    return OrientedBox3(
        x=rng.uniform(-4, 4), y=rng.uniform(-4, 4), z=0.0,
        l=rng.uniform(0.5, 6), w=rng.uniform(0.5, 3), h=1.0,
        yaw=rng.uniform(-math.pi, math.pi) if yaw is None else yaw,
    )


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_iou_is_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = random_box(rng), random_box(rng)
    iou = rotated_iou_bev(a, b)
    assert 0.0 <= iou <= 1.0
    assert iou == pytest.approx(rotated_iou_bev(b, a), rel=1e-9, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_unrotated_iou_matches_the_interval_formula(seed):
    rng = np.random.default_rng(seed)
    a, b = random_box(rng, yaw=0.0), random_box(rng, yaw=0.0)
    dx = max(0.0, min(a.x + a.l / 2, b.x + b.l / 2) - max(a.x - a.l / 2, b.x - b.l / 2))
    dy = max(0.0, min(a.y + a.w / 2, b.y + b.w / 2) - max(a.y - a.w / 2, b.y - b.w / 2))
    inter = dx * dy
    expected = inter / (a.l * a.w + b.l * b.w - inter)
    assert rotated_iou_bev(a, b) == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_pairwise_iou_shapes():
    a = [square(0.0), square(1.0)]
    b = [square(0.0), square(10.0), square(1.0)]
    iou = pairwise_iou(a, b)
    assert iou.shape == (2, 3)
    np.testing.assert_allclose(iou, pairwise_iou(b, a).T)
    assert pairwise_iou([], b).shape == (0, 3)


def test_nms_keeps_best_of_each_cluster():
    boxes = [square(0.0), square(0.1), square(10.0), square(10.2)]
    assert nms(boxes, [0.9, 0.8, 0.7, 0.95], 0.3) == [3, 0]


def test_nms_does_not_depend_on_input_order(rng):
    for _ in range(20):
        boxes = [random_box(rng) for _ in range(12)]
        scores = rng.uniform(0.0, 1.0, size=12)
        kept = nms(boxes, scores, 0.3)
        perm = rng.permutation(12)
        shuffled = nms([boxes[i] for i in perm], scores[perm], 0.3)
        assert [int(perm[j]) for j in shuffled] == kept


def test_nms_ties_prefer_lower_index():
    boxes = [square(0.0), square(0.0)]
    assert nms(boxes, [0.5, 0.5], 0.3) == [0]


def test_nms_keeps_overlap_below_threshold():
    # IoU exactly 1/3 against a threshold of 0.5 survives
    assert nms([square(0.0), square(1.0)], [0.9, 0.8], 0.5) == [0, 1]
    assert nms([], [], 0.3) == []
    with pytest.raises(ValueError):
        nms([square(0.0)], [0.1, 0.2], 0.3)


# ---------- anchors ----------

def test_make_anchors_pairs_headings():
    anchors = make_anchors([[0.0, 0.0], [5.0, 1.0]], z=0.8)
    assert len(anchors) == 4
    assert [a.yaw for a in anchors] == pytest.approx([0.0, math.pi / 2, 0.0, math.pi / 2])
    assert anchors[2].center == pytest.approx((5.0, 1.0, 0.8))


def test_match_anchors_labels():
    gt = car(0.0, 0.0)
    anchors = [car(0.0, 0.0), car(30.0, 0.0), car(2.6, 0.0)]
    match = match_anchors(anchors, [gt], seed=0)
    # third anchor overlaps 1.81/7.01 of the union
    assert list(match.labels) == [AnchorLabel.POS, AnchorLabel.NEG, AnchorLabel.IGNORE]
    np.testing.assert_array_equal(match.positives, [0])
    np.testing.assert_array_equal(match.sampled_negatives, [1])
    assert match.best_iou[0] == pytest.approx(1.0)


def test_negatives_are_subsampled_reproducibly():
    anchors = make_anchors(np.column_stack([np.arange(300) * 10.0 + 100.0, np.zeros(300)]))
    a = match_anchors(anchors, [car(0.0, 0.0)], seed=4)
    b = match_anchors(anchors, [car(0.0, 0.0)], seed=4)
    assert len(a.sampled_negatives) == 512
    assert np.all(np.diff(a.sampled_negatives) > 0)
    np.testing.assert_array_equal(a.sampled_negatives, b.sampled_negatives)


def test_match_without_ground_truth():
    match = match_anchors([car(0.0, 0.0)], [], seed=0)
    assert list(match.labels) == [AnchorLabel.NEG]
    assert match.best_gt[0] == -1


# ---------- evidence-weighted IoU ----------

SPEC = GridSpec(origin_x=-10.0, origin_y=-10.0, resolution=0.5, width=40, height=40)


def flat(l, x) -> OrientedBox3:
    return OrientedBox3(x=x, y=0.0, z=0.0, l=l, w=2.0, h=1.0, yaw=0.0)


def test_jiou_examples():
    e_fg = np.ones(SPEC.shape)
    assert jiou_from_evidence(flat(4.0, 0.0), flat(4.0, 0.0), e_fg, SPEC) == pytest.approx(1.0)
    assert jiou_from_evidence(flat(4.0, -6.0), flat(4.0, 6.0), e_fg, SPEC) == 0.0
    # det covers the left half of gt
    assert jiou_from_evidence(flat(4.0, 0.0), flat(8.0, 2.0), e_fg, SPEC) == pytest.approx(0.5)


def test_jiou_weights_by_evidence():
    e_fg = np.zeros(SPEC.shape)
    xs, _ = SPEC.cell_centers()
    e_fg[xs < 0.0] = 1.0
    # only the shared left half carries evidence
    assert jiou_from_evidence(flat(4.0, 0.0), flat(8.0, 2.0), e_fg, SPEC) == pytest.approx(1.0)


def test_jiou_is_symmetric(rng):
    for _ in range(30):
        e_fg = rng.uniform(0.0, 2.0, size=SPEC.shape)
        a, b = random_box(rng), random_box(rng)
        assert jiou_from_evidence(a, b, e_fg, SPEC) == jiou_from_evidence(b, a, e_fg, SPEC)


def test_jiou_without_evidence_is_zero():
    far = EvidentialMap(
        positions=np.array([[50.0, 50.0]]), o_cls=np.ones((1, 2)), o_var=np.zeros((1, 2, 2)), layer=Layer.OBJECT
    )
    assert jiou(flat(4.0, 0.0), flat(4.0, 0.0), far, SPEC) == 0.0
