import logging
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import List, Sequence

import numpy as np
import shapely

from app.core.seeding import Stage, stage_rng
from app.models.grid import GridSpec
from app.services.evmap import EvidentialMap, evidence_grid
from models import OrientedBox3

logger = logging.getLogger(__name__)

ANCHOR_DIMS = (4.41, 1.98, 1.64)
ANCHOR_YAWS = (0.0, math.pi / 2.0)
POS_IOU = 0.4
NEG_IOU = 0.2
N_NEGATIVES = 512


@dataclass(frozen=True, eq=False)
class BoxEncoding:
    loc: np.ndarray
    dim: np.ndarray
    dir: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.loc, self.dim, self.dir])

    @classmethod
    def from_array(cls, values) -> "BoxEncoding":
        values = np.asarray(values, dtype=np.float64).reshape(10)
        return cls(loc=values[0:3].copy(), dim=values[3:6].copy(), dir=values[6:10].copy())


def encode_box(gt: OrientedBox3, anchor: OrientedBox3) -> BoxEncoding:
    d_xy = math.hypot(anchor.l, anchor.w)
    loc = np.array([(gt.x - anchor.x) / d_xy, (gt.y - anchor.y) / d_xy, (gt.z - anchor.z) / anchor.h])
    dim = np.log(np.array([gt.l / anchor.l, gt.w / anchor.w, gt.h / anchor.h]))
    flipped = anchor.yaw + math.pi
    direction = np.array(
        [
            math.cos(gt.yaw) - math.cos(anchor.yaw),
            math.sin(gt.yaw) - math.sin(anchor.yaw),
            math.cos(gt.yaw) - math.cos(flipped),
            math.sin(gt.yaw) - math.sin(flipped),
        ]
    )
    return BoxEncoding(loc=loc, dim=dim, dir=direction)


def decode_box(enc: BoxEncoding, anchor: OrientedBox3) -> OrientedBox3:
    """Invert the encoding; the direction pair with the smaller offset norm wins (ties keep the anchor's)."""
    d_xy = math.hypot(anchor.l, anchor.w)
    first, second = enc.dir[0:2], enc.dir[2:4]
    if np.linalg.norm(first) <= np.linalg.norm(second):
        base, offset = anchor.yaw, first
    else:
        base, offset = anchor.yaw + math.pi, second
    yaw = math.atan2(math.sin(base) + offset[1], math.cos(base) + offset[0])
    return OrientedBox3(
        x=anchor.x + enc.loc[0] * d_xy,
        y=anchor.y + enc.loc[1] * d_xy,
        z=anchor.z + enc.loc[2] * anchor.h,
        l=anchor.l * math.exp(enc.dim[0]),
        w=anchor.w * math.exp(enc.dim[1]),
        h=anchor.h * math.exp(enc.dim[2]),
        yaw=yaw,
    )


# ---------- overlap ----------

def _footprints(boxes: Sequence[OrientedBox3]) -> np.ndarray:
    return np.array([b.footprint() for b in boxes], dtype=object)


def pairwise_iou(a: Sequence[OrientedBox3], b: Sequence[OrientedBox3]) -> np.ndarray:
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    pa, pb = _footprints(a), _footprints(b)
    inter = shapely.area(shapely.intersection(pa[:, None], pb[None, :]))
    union = shapely.area(pa)[:, None] + shapely.area(pb)[None, :] - inter
    return np.clip(inter / union, 0.0, 1.0)


def rotated_iou_bev(a: OrientedBox3, b: OrientedBox3) -> float:
    return float(pairwise_iou([a], [b])[0, 0])


def nms(boxes: Sequence[OrientedBox3], scores, iou_thr: float) -> List[int]:
    """Greedy suppression by descending score, ties to the lower index. Returns kept indices in selection order."""
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) != len(boxes):
        raise ValueError("boxes and scores differ in length")
    if len(boxes) == 0:
        return []
    order = np.lexsort((np.arange(len(scores)), -scores))
    iou = pairwise_iou(boxes, boxes)
    kept: List[int] = []
    for i in order:
        if all(iou[i, k] <= iou_thr for k in kept):
            kept.append(int(i))
    return kept


# ---------- anchors ----------

class AnchorLabel(IntEnum):
    IGNORE = -1
    NEG = 0
    POS = 1


@dataclass(frozen=True, eq=False)
class AnchorMatch:
    labels: np.ndarray
    best_gt: np.ndarray
    best_iou: np.ndarray
    sampled_negatives: np.ndarray

    @property
    def positives(self) -> np.ndarray:
        return np.flatnonzero(self.labels == AnchorLabel.POS)


def make_anchors(locations, z: float = 0.0) -> List[OrientedBox3]:
    """Two anchors per location, yaw 0 and 90 degrees."""
    l, w, h = ANCHOR_DIMS
    locations = np.asarray(locations, dtype=np.float64).reshape(-1, 2)
    return [
        OrientedBox3(x=float(x), y=float(y), z=z, l=l, w=w, h=h, yaw=yaw)
        for x, y in locations
        for yaw in ANCHOR_YAWS
    ]


def match_anchors(
    anchors: Sequence[OrientedBox3],
    gts: Sequence[OrientedBox3],
    seed: int,
    n_negatives: int = N_NEGATIVES,
) -> AnchorMatch:
    iou = pairwise_iou(anchors, gts)
    if len(gts):
        best_gt = iou.argmax(axis=1)
        best_iou = iou.max(axis=1)
    else:
        best_gt = np.full(len(anchors), -1, dtype=np.int64)
        best_iou = np.zeros(len(anchors))
    labels = np.full(len(anchors), AnchorLabel.IGNORE, dtype=np.int8)
    labels[best_iou >= POS_IOU] = AnchorLabel.POS
    labels[best_iou <= NEG_IOU] = AnchorLabel.NEG
    negatives = np.flatnonzero(labels == AnchorLabel.NEG)
    if len(negatives) > n_negatives:
        rng = stage_rng(seed, Stage.ANCHORS)
        negatives = np.sort(rng.choice(negatives, size=n_negatives, replace=False))
    return AnchorMatch(labels=labels, best_gt=best_gt, best_iou=best_iou, sampled_negatives=negatives)


# ---------- evidence-weighted IoU ----------

def _cells_in(box: OrientedBox3, spec: GridSpec) -> np.ndarray:
    xs, ys = spec.cell_centers()
    return shapely.contains_xy(box.footprint(), xs, ys)


def jiou_from_evidence(det: OrientedBox3, gt: OrientedBox3, e_fg: np.ndarray, spec: GridSpec) -> float:
    in_det, in_gt = _cells_in(det, spec), _cells_in(gt, spec)
    union = float(np.sum(e_fg[in_det | in_gt]))
    if union <= 0.0:
        return 0.0
    return float(np.sum(e_fg[in_det & in_gt])) / union


def jiou(det: OrientedBox3, gt: OrientedBox3, object_map: EvidentialMap, grid_spec: GridSpec) -> float:
    """Share of the fg evidence mass over det and gt that lies in both."""
    return jiou_from_evidence(det, gt, evidence_grid(object_map, grid_spec).e_fg, grid_spec)
