from dataclasses import dataclass
from typing import Tuple

import numpy as np

from app.core.errors import FrameMismatchError
from app.models.evidence import BG, FG, dirichlet_params
from models import MAX_GRID_CELLS


@dataclass(frozen=True)
class GridSpec:
    """BEV grid frame. origin is the lower-left corner; arrays are indexed [row, col]."""

    origin_x: float
    origin_y: float
    resolution: float
    width: int
    height: int

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("grid resolution must be > 0")
        if self.width < 1 or self.height < 1:
            raise ValueError("grid must have at least one cell")
        if self.width > MAX_GRID_CELLS or self.height > MAX_GRID_CELLS:
            raise ValueError(f"grid must have at most {MAX_GRID_CELLS} cells per side")

    @classmethod
    def centered(cls, range_m: float, resolution: float) -> "GridSpec":
        n = int(round(2.0 * range_m / resolution))
        return cls(origin_x=-range_m, origin_y=-range_m, resolution=resolution, width=n, height=n)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    def cell_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        cols = self.origin_x + (np.arange(self.width) + 0.5) * self.resolution
        rows = self.origin_y + (np.arange(self.height) + 0.5) * self.resolution
        xs, ys = np.meshgrid(cols, rows)
        return xs, ys

    def centers_flat(self) -> np.ndarray:
        xs, ys = self.cell_centers()
        return np.column_stack([xs.ravel(), ys.ravel()])

    def wire_frame(self) -> Tuple[float, float, float, int, int]:
        """Frame as carried on the wire (single precision)."""
        return (
            float(np.float32(self.origin_x)),
            float(np.float32(self.origin_y)),
            float(np.float32(self.resolution)),
            self.width,
            self.height,
        )

    def same_frame(self, other: "GridSpec") -> bool:
        return self.wire_frame() == other.wire_frame()

    def require_same(self, other: "GridSpec") -> None:
        if not self.same_frame(other):
            raise FrameMismatchError(f"grid frames differ: {self.wire_frame()} vs {other.wire_frame()}")


@dataclass(frozen=True, eq=False)
class BevRaster:
    spec: GridSpec
    p_fg: np.ndarray
    u: np.ndarray
    observed: np.ndarray

    @property
    def predicted_fg(self) -> np.ndarray:
        return self.p_fg > 1.0 - self.p_fg


@dataclass(frozen=True, eq=False)
class UncertaintyGrid:
    spec: GridSpec
    u: np.ndarray
    observed: np.ndarray


@dataclass(frozen=True, eq=False)
class CellMask:
    spec: GridSpec
    mask: np.ndarray

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.mask))


@dataclass(frozen=True, eq=False)
class EvidenceGrid:
    """Per-cell (e_fg, e_bg) evidence on a grid frame plus the observed mask."""

    spec: GridSpec
    evidence: np.ndarray
    observed: np.ndarray

    @classmethod
    def empty(cls, spec: GridSpec) -> "EvidenceGrid":
        return cls(spec=spec, evidence=np.zeros(spec.shape + (2,)), observed=np.zeros(spec.shape, dtype=bool))

    def raster(self) -> BevRaster:
        evidence = np.where(self.observed[..., None], self.evidence, 0.0)
        _, _, p_hat, u = dirichlet_params(evidence)
        return BevRaster(spec=self.spec, p_fg=p_hat[..., FG], u=u, observed=self.observed.copy())

    def uncertainty(self) -> UncertaintyGrid:
        r = self.raster()
        return UncertaintyGrid(spec=self.spec, u=r.u, observed=r.observed)

    @property
    def e_fg(self) -> np.ndarray:
        return self.evidence[..., FG]

    @property
    def e_bg(self) -> np.ndarray:
        return self.evidence[..., BG]
