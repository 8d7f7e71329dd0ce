import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np
import pandas as pd
import shapely
from shapely.geometry import Polygon
from shapely.ops import unary_union

from app.core.errors import FitDivergenceError, NoTargetsError
from app.core.seeding import Stage, stage_rng
from app.models.cloud import PointCloud
from app.models.evidence import BG, FG, N_CLASSES
from app.services.augment import group_mean, voxel_groups
from app.services.edl import EdlBatch, LossBreakdown, edl_grad, edl_loss
from app.services.evmap import EvidentialMap, query_pairs
from models import FitConfig, Layer, OrientedBox3

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ["epoch", "total", "sq", "var", "kl", "lambda"]


@dataclass(frozen=True, eq=False)
class TargetSet:
    points: np.ndarray
    labels: np.ndarray
    layer: Layer

    def __len__(self) -> int:
        return len(self.points)

    @property
    def n_fg(self) -> int:
        return int(np.count_nonzero(self.labels[:, FG]))

    @property
    def n_bg(self) -> int:
        return int(np.count_nonzero(self.labels[:, BG]))


def one_hot(is_fg: np.ndarray) -> np.ndarray:
    y = np.zeros((len(is_fg), N_CLASSES))
    y[np.arange(len(is_fg)), np.where(is_fg, FG, BG)] = 1.0
    return y


def object_bg_count(n_gt: int, cfg: FitConfig) -> int:
    """Background targets drawn away from the boxes; a frame without boxes still gets one share."""
    return cfg.bg_multiplier * max(n_gt, 1)


def _cap(idx: np.ndarray, cap: int, rng: np.random.Generator) -> np.ndarray:
    if len(idx) <= cap:
        return idx
    return np.sort(rng.choice(idx, size=cap, replace=False))


def sample_targets(
    cloud: PointCloud,
    layer: Layer,
    cfg: FitConfig,
    seed: int,
    emap: EvidentialMap,
    gt_boxes: Sequence[OrientedBox3] = (),
    road_area=None,
    stream: int = 0,
) -> TargetSet:
    """Shift observed points into training targets, keeping only targets inside the observed area.

    All geometry (cloud, boxes, road_area) must be in the frame of emap. stream separates
    the draws of different agents sharing one seed.
    """
    if len(cloud) == 0:
        raise ValueError("cannot sample targets from an empty cloud")
    rng = stage_rng(seed, Stage.TARGETS, layer.wire_code, stream, cfg.seed)
    n_shift = cfg.shifts_per_seed(layer)
    shifted = cloud.xy[:, None, :] + rng.normal(0.0, cfg.shift_sigma, size=(len(cloud), n_shift, 2))
    shifted = shifted.reshape(-1, 2)
    shifted = shifted[emap.index.has_neighbor(shifted)]
    if len(shifted) == 0:
        raise NoTargetsError()
    inverse, n = voxel_groups(shifted, cfg.downsample_voxel)
    points = group_mean(shifted, inverse, n)
    # a centroid can leave the observed area at its fringe
    points = points[emap.index.has_neighbor(points)]

    if layer is Layer.ROAD:
        area = road_area if road_area is not None else Polygon()
        is_fg = shapely.contains_xy(area, points[:, 0], points[:, 1])
        fg = _cap(np.flatnonzero(is_fg), cfg.n_tgt_cap, rng)
        bg = _cap(np.flatnonzero(~is_fg), cfg.n_tgt_cap, rng)
        keep = np.sort(np.concatenate([fg, bg]))
    else:
        boxes = unary_union([b.footprint() for b in gt_boxes]) if gt_boxes else Polygon()
        is_fg = shapely.contains_xy(boxes, points[:, 0], points[:, 1])
        if gt_boxes:
            near = shapely.dwithin(boxes, shapely.points(points), cfg.box_margin)
        else:
            near = np.zeros(len(points), dtype=bool)
        far = _cap(np.flatnonzero(~near), object_bg_count(len(gt_boxes), cfg), rng)
        keep = np.sort(np.concatenate([np.flatnonzero(near), far]))

    if len(keep) == 0:
        raise NoTargetsError()
    targets = TargetSet(points=points[keep], labels=one_hot(is_fg[keep]), layer=layer)
    logger.info("%s targets: %d fg, %d bg", layer.value, targets.n_fg, targets.n_bg)
    return targets


# ---------- fitting ----------

@dataclass(frozen=True, eq=False)
class FitResult:
    map: EvidentialMap
    curve: List[LossBreakdown] = field(default_factory=list)
    initial_loss: float = 0.0
    final_loss: float = 0.0

    @property
    def smoothed(self) -> np.ndarray:
        """Running minimum of the per-epoch totals."""
        return np.minimum.accumulate(np.array([b.total for b in self.curve]))

    def curve_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(i, b.total, b.sq_term, b.var_term, b.kl_term, b.lambda_t) for i, b in enumerate(self.curve)],
            columns=LOSS_COLUMNS,
        )


class _Objective:
    """EDL loss of a target set as a function of the map's pre-activation center parameters."""

    def __init__(self, emap: EvidentialMap, targets: TargetSet, cfg: FitConfig):
        self.emap = emap
        self.cfg = cfg
        self.y = targets.labels
        pairs = query_pairs(emap, targets.points)
        self.n = pairs.n_queries
        self.q = pairs.query
        self.c = pairs.center
        self.diff_sq = pairs.diff**2

    def _forward(self, raw_cls: np.ndarray, raw_var: np.ndarray):
        cls = np.maximum(raw_cls, 0.0)
        var = np.maximum(raw_var, 0.0) + self.emap.sigma0_sq
        w = np.exp(-0.5 * np.sum(self.diff_sq[:, None, :] / var[self.c], axis=2))
        contrib = w * cls[self.c]
        e = np.column_stack([np.bincount(self.q, weights=contrib[:, k], minlength=self.n) for k in range(N_CLASSES)])
        return cls, var, w, e

    def _batch(self, e: np.ndarray, epoch: float, where: str) -> EdlBatch:
        if not np.all(np.isfinite(e)):
            raise FitDivergenceError(f"evidence became non-finite {where}")
        return EdlBatch(alpha=e + 1.0, y=self.y, epoch=epoch, a_max=self.cfg.a_max)

    def loss(self, raw_cls, raw_var, epoch: float) -> LossBreakdown:
        _, _, _, e = self._forward(raw_cls, raw_var)
        return edl_loss(self._batch(e, epoch, f"at epoch {epoch}"), self.cfg.reduction)

    def loss_and_grad(self, raw_cls, raw_var, epoch: float):
        cls, var, w, e = self._forward(raw_cls, raw_var)
        batch = self._batch(e, epoch, f"at epoch {epoch}")
        loss = edl_loss(batch, self.cfg.reduction)
        g_alpha = edl_grad(batch, self.cfg.reduction)

        g_pair = g_alpha[self.q] * w
        n_centers = len(raw_cls)
        g_cls = np.column_stack([np.bincount(self.c, weights=g_pair[:, k], minlength=n_centers) for k in range(N_CLASSES)])
        # d w / d sigma^2 = w * 0.5 * dx^2 / sigma^4
        g_var_pair = (g_pair * cls[self.c])[:, :, None] * 0.5 * self.diff_sq[:, None, :] / var[self.c] ** 2
        g_var = np.stack(
            [
                np.column_stack([np.bincount(self.c, weights=g_var_pair[:, k, a], minlength=n_centers) for a in range(2)])
                for k in range(N_CLASSES)
            ],
            axis=1,
        )
        return loss, g_cls * (raw_cls > 0), g_var * (raw_var > 0)


def fit_map(emap: EvidentialMap, targets: TargetSet, cfg: FitConfig) -> FitResult:
    """Full-batch gradient descent on the EDL loss of the targets, one step per epoch."""
    if len(targets) == 0:
        raise NoTargetsError()
    objective = _Objective(emap, targets, cfg)
    raw_cls = emap.o_cls.copy()
    raw_var = emap.o_var.copy()
    curve: List[LossBreakdown] = []

    for epoch in range(cfg.epochs):
        loss, g_cls, g_var = objective.loss_and_grad(raw_cls, raw_var, epoch)
        if not np.isfinite(loss.total):
            raise FitDivergenceError(f"loss became non-finite at epoch {epoch}")
        curve.append(loss)
        logger.debug("epoch %d loss %.6g", epoch, loss.total)
        raw_cls = raw_cls - np.clip(cfg.lr * g_cls, -cfg.max_step, cfg.max_step)
        raw_var = raw_var - np.clip(cfg.lr * g_var, -cfg.max_step, cfg.max_step)
        if not (np.all(np.isfinite(raw_cls)) and np.all(np.isfinite(raw_var))):
            raise FitDivergenceError(f"parameters became non-finite at epoch {epoch}")

    last = cfg.epochs - 1
    initial = objective.loss(emap.o_cls, emap.o_var, last).total
    final = objective.loss(raw_cls, raw_var, last).total
    if not np.isfinite(final):
        raise FitDivergenceError("final loss is non-finite")
    fitted = emap.with_params(np.maximum(raw_cls, 0.0), np.maximum(raw_var, 0.0))
    logger.info("%s fit: loss %.6g -> %.6g over %d epochs", emap.layer.value, initial, final, cfg.epochs)
    return FitResult(map=fitted, curve=curve, initial_loss=initial, final_loss=final)


def write_loss_curve(result: FitResult, path: Union[str, Path]) -> Path:
    path = Path(path)
    result.curve_frame().to_csv(path, index=False, float_format="%.10g")
    return path
