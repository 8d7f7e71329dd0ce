import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Union

import numpy as np
import pandas as pd

from app.core.errors import EmptyCurveError, FrameMismatchError
from app.models.evidence import BG, FG
from app.models.grid import BevRaster

logger = logging.getLogger(__name__)

N_BINS = 10
BIN_EDGES = np.arange(N_BINS + 1) / N_BINS
CALIBRATION_COLUMNS = ["bin_lo", "bin_hi", "weighted_acc", "mass"]

Mode = Literal["all", "obs"]


@dataclass(frozen=True, eq=False)
class EvalInputs:
    p_fg: np.ndarray
    u: np.ndarray
    observed: np.ndarray
    gt: np.ndarray
    u_thr: float = 1.0

    def __post_init__(self):
        shapes = {np.shape(a) for a in (self.p_fg, self.u, self.observed, self.gt)}
        if len(shapes) != 1:
            raise FrameMismatchError(f"evaluation grids differ in shape: {sorted(shapes)}")

    @classmethod
    def from_raster(cls, raster: BevRaster, gt: np.ndarray, u_thr: float = 1.0) -> "EvalInputs":
        return cls(p_fg=raster.p_fg, u=raster.u, observed=raster.observed, gt=gt, u_thr=u_thr)


def iou(inputs: EvalInputs, mode: Mode = "all") -> float:
    confident = inputs.u < inputs.u_thr
    if mode == "obs":
        confident = confident & inputs.observed
    pred_fg = confident & (inputs.p_fg > 1.0 - inputs.p_fg)
    gt_fg = inputs.gt.astype(bool) & confident
    inter = np.count_nonzero(pred_fg & gt_fg)
    union_mask = pred_fg | gt_fg
    if mode == "all":
        # unobserved ground truth counts as missed
        union_mask = union_mask | (inputs.gt.astype(bool) & ~inputs.observed)
    union = np.count_nonzero(union_mask)
    return 1.0 if union == 0 else inter / union


# ---------- calibration ----------

@dataclass(frozen=True)
class CalibrationBin:
    lo: float
    hi: float
    weighted_acc: float
    mass: float

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)


@dataclass(frozen=True)
class CalibrationCurve:
    bins: List[CalibrationBin]

    def __len__(self) -> int:
        return len(self.bins)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(b.lo, b.hi, b.weighted_acc, b.mass) for b in self.bins], columns=CALIBRATION_COLUMNS
        )


def bin_index(u: np.ndarray) -> np.ndarray:
    """Half-open [lo, hi) bins of width 0.1; u = 1 falls in the last bin."""
    return np.clip(np.searchsorted(BIN_EDGES, u, side="right") - 1, 0, N_BINS - 1)


def calibration(
    u,
    predicted,
    true,
    class_counts: Optional[Sequence[int]] = None,
) -> CalibrationCurve:
    """Class-balanced reliability curve; every sample weighs 1 / (number of samples of its true class)."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    predicted = np.asarray(predicted).reshape(-1)
    true = np.asarray(true).reshape(-1).astype(np.int64)
    if class_counts is None:
        class_counts = np.bincount(true)
    counts = np.asarray(class_counts, dtype=np.float64)
    if len(true) and np.any(counts[true] <= 0):
        raise ValueError("class_counts must be positive for every represented class")
    weight = 1.0 / counts[true] if len(true) else np.zeros(0)
    correct = (predicted == true).astype(np.float64)
    idx = bin_index(u)
    mass = np.bincount(idx, weights=weight, minlength=N_BINS)
    hits = np.bincount(idx, weights=weight * correct, minlength=N_BINS)
    present = np.bincount(idx, minlength=N_BINS) > 0
    bins = [
        CalibrationBin(lo=float(BIN_EDGES[b]), hi=float(BIN_EDGES[b + 1]), weighted_acc=float(hits[b] / mass[b]), mass=float(mass[b]))
        for b in range(N_BINS)
        if present[b]
    ]
    return CalibrationCurve(bins=bins)


def calibration_deviation(curve: CalibrationCurve, k: int = 2) -> float:
    """Mass-weighted mean distance from the line through (0, 1) and (1, 1/k)."""
    if len(curve) == 0:
        raise EmptyCurveError("calibration curve has no populated bins")
    mids = np.array([b.mid for b in curve.bins])
    acc = np.array([b.weighted_acc for b in curve.bins])
    mass = np.array([b.mass for b in curve.bins])
    ideal = 1.0 - mids * (1.0 - 1.0 / k)
    return float(np.sum(mass * np.abs(acc - ideal)) / np.sum(mass))


def entropy_uncertainty(p: np.ndarray) -> np.ndarray:
    """Normalized Shannon entropy over the last axis, in [0, 1]."""
    p = np.asarray(p, dtype=np.float64)
    k = p.shape[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(p), 0.0)
    return -plogp.sum(axis=-1) / np.log(k)


def _cell_samples(raster: BevRaster, gt: np.ndarray, mask: np.ndarray):
    predicted = np.where(raster.predicted_fg[mask], FG, BG)
    true = np.where(gt.astype(bool)[mask], FG, BG)
    return predicted, true


def raster_calibration(raster: BevRaster, gt: np.ndarray, mask: Optional[np.ndarray] = None) -> CalibrationCurve:
    """Evidential curve over the cells in mask (observed cells by default)."""
    mask = raster.observed if mask is None else mask
    predicted, true = _cell_samples(raster, gt, mask)
    return calibration(raster.u[mask], predicted, true, np.bincount(true, minlength=2))


def entropy_calibration(raster: BevRaster, gt: np.ndarray, mask: Optional[np.ndarray] = None) -> CalibrationCurve:
    """Same cells and predictions, with the evidence discarded and uncertainty taken from the class probabilities."""
    mask = raster.observed if mask is None else mask
    predicted, true = _cell_samples(raster, gt, mask)
    p = np.stack([raster.p_fg[mask], 1.0 - raster.p_fg[mask]], axis=-1)
    return calibration(entropy_uncertainty(p), predicted, true, np.bincount(true, minlength=2))


def write_calibration(curve: CalibrationCurve, path: Union[str, Path]) -> Path:
    path = Path(path)
    curve.frame().to_csv(path, index=False, float_format="%.10g")
    return path
