"""Continuous-space evidential BEV map.

Every center carries a spatial Gaussian per class. The density of a query
point relative to the Gaussian's mode weights the center's evidence output;
evidence from all centers within ``nu`` is summed and parameterizes a
Dirichlet over {fg, bg}.
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd

from app.core.errors import NoObservableCentersError
from app.models.cloud import PointCloud, PointLabel
from app.models.evidence import BG, FG, N_CLASSES, CenterPoint, DirichletResult, dirichlet_result
from app.models.grid import BevRaster, EvidenceGrid, GridSpec
from app.services.augment import group_mean, majority_label, voxel_groups
from app.services.spatial_index import SpatialIndex
from models import ExpansionDecay, Layer, MapInit

logger = logging.getLogger(__name__)

SNAPSHOT_COLUMNS = ["x", "y", "o_fg", "o_bg", "var_fg_x", "var_fg_y", "var_bg_x", "var_bg_y"]
LAYER_FG_LABEL = {Layer.ROAD: PointLabel.ROAD, Layer.OBJECT: PointLabel.VEHICLE}


@dataclass(frozen=True, eq=False)
class EvidentialMap:
    """positions (N, 2); o_cls (N, K); o_var (N, K, 2) indexed [center, class, axis]."""

    positions: np.ndarray
    o_cls: np.ndarray
    o_var: np.ndarray
    layer: Layer
    nu: float = 2.0
    sigma0_sq: float = 0.01

    def __post_init__(self):
        if self.nu <= 0 or self.sigma0_sq <= 0:
            raise ValueError("nu and sigma0_sq must be > 0")
        n = len(self.positions)
        if self.o_cls.shape != (n, N_CLASSES) or self.o_var.shape != (n, N_CLASSES, 2):
            raise ValueError("center arrays disagree in shape")
        if np.any(self.o_cls < 0) or np.any(self.o_var < 0):
            raise ValueError("center outputs must be non-negative")

    @classmethod
    def from_centers(cls, centers, layer: Layer, nu: float = 2.0, sigma0_sq: float = 0.01) -> "EvidentialMap":
        centers = list(centers)
        return cls(
            positions=np.array([c.pos for c in centers], dtype=np.float64).reshape(-1, 2),
            o_cls=np.array([c.o_cls for c in centers], dtype=np.float64).reshape(-1, N_CLASSES),
            o_var=np.array([c.o_var for c in centers], dtype=np.float64).reshape(-1, N_CLASSES, 2),
            layer=layer,
            nu=nu,
            sigma0_sq=sigma0_sq,
        )

    @property
    def K(self) -> int:
        return N_CLASSES

    def __len__(self) -> int:
        return len(self.positions)

    @cached_property
    def index(self) -> SpatialIndex:
        return SpatialIndex(self.positions, self.nu)

    def center(self, i: int) -> CenterPoint:
        return CenterPoint(
            pos=tuple(self.positions[i]),
            o_cls=tuple(self.o_cls[i]),
            o_var=tuple(tuple(v) for v in self.o_var[i]),
        )

    def with_params(self, o_cls: np.ndarray, o_var: np.ndarray) -> "EvidentialMap":
        return EvidentialMap(self.positions, o_cls, o_var, self.layer, self.nu, self.sigma0_sq)

    def merged(self, other: "EvidentialMap") -> "EvidentialMap":
        return EvidentialMap(
            np.concatenate([self.positions, other.positions]),
            np.concatenate([self.o_cls, other.o_cls]),
            np.concatenate([self.o_var, other.o_var]),
            self.layer,
            self.nu,
            self.sigma0_sq,
        )


# ---------- pointwise math ----------

def density_weight(x, c: CenterPoint, k: int, sigma0_sq: float = 0.01) -> float:
    dx = np.asarray(x, dtype=np.float64) - np.asarray(c.pos, dtype=np.float64)
    var = np.asarray(c.o_var[k], dtype=np.float64) + sigma0_sq
    m = float(np.sum(dx * dx / var))
    return float(np.exp(-0.5 * m))


def pair_weights(diff: np.ndarray, o_var: np.ndarray, sigma0_sq: float) -> np.ndarray:
    """Weights (P, K) for offsets diff (P, 2) against per-pair variances o_var (P, K, 2)."""
    var = o_var + sigma0_sq
    m = np.sum(diff[:, None, :] ** 2 / var, axis=2)
    return np.exp(-0.5 * m)


@dataclass(frozen=True, eq=False)
class QueryPairs:
    """Neighbor pairs of a query set, with what fitting needs to differentiate through them."""

    n_queries: int
    query: np.ndarray
    center: np.ndarray
    diff: np.ndarray
    weights: np.ndarray

    def evidence(self, o_cls: np.ndarray) -> np.ndarray:
        contrib = self.weights * o_cls[self.center]
        return np.column_stack(
            [np.bincount(self.query, weights=contrib[:, k], minlength=self.n_queries) for k in range(N_CLASSES)]
        )

    def observed(self) -> np.ndarray:
        out = np.zeros(self.n_queries, dtype=bool)
        out[self.query] = True
        return out


def query_pairs(emap: EvidentialMap, points: np.ndarray, o_var: Optional[np.ndarray] = None) -> QueryPairs:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    q, c, _ = emap.index.pairs(points)
    diff = points[q] - emap.positions[c]
    o_var = emap.o_var if o_var is None else o_var
    w = pair_weights(diff, o_var[c], emap.sigma0_sq)
    return QueryPairs(n_queries=len(points), query=q, center=c, diff=diff, weights=w)


def evidence_many(emap: EvidentialMap, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    pairs = query_pairs(emap, points)
    return pairs.evidence(emap.o_cls), pairs.observed()


def evidence_at(emap: EvidentialMap, x) -> Tuple[np.ndarray, bool]:
    e, observed = evidence_many(emap, np.asarray(x, dtype=np.float64).reshape(1, 2))
    return e[0], bool(observed[0])


def dirichlet_at(emap: EvidentialMap, x) -> DirichletResult:
    e, observed = evidence_at(emap, x)
    return dirichlet_result(e, observed)


def evidence_grid(emap: EvidentialMap, spec: GridSpec) -> EvidenceGrid:
    e, observed = evidence_many(emap, spec.centers_flat())
    return EvidenceGrid(spec=spec, evidence=e.reshape(spec.shape + (N_CLASSES,)), observed=observed.reshape(spec.shape))


def rasterize(emap: EvidentialMap, spec: GridSpec) -> BevRaster:
    return evidence_grid(emap, spec).raster()


# ---------- construction ----------

def expansion_offsets(radius: float, step: float) -> np.ndarray:
    """Lattice offsets of spacing step inside the closed disc of given radius, origin excluded."""
    if radius < 0 or step <= 0:
        raise ValueError("radius must be >= 0 and step > 0")
    n = int(np.floor(radius / step + 1e-9))
    ij = np.array([(i, j) for i in range(-n, n + 1) for j in range(-n, n + 1) if (i, j) != (0, 0)], dtype=np.float64)
    if len(ij) == 0:
        return np.zeros((0, 2))
    off = ij * step
    return off[np.hypot(off[:, 0], off[:, 1]) <= radius + 1e-9]


def expand_centers(
    emap: EvidentialMap, radius: float, step: float, decay: ExpansionDecay = "floor"
) -> EvidentialMap:
    """Fill gaps between centers with decayed copies placed on a disc lattice around each center.

    Copies scale the source outputs by exp(-|offset|^2 / (2 sigma0^2)); with
    decay="source" the source center's own variance is added to sigma0^2.
    Candidates are deduplicated on a step lattice; cells already holding an
    original center keep it.
    """
    offsets = expansion_offsets(radius, step)
    if len(offsets) == 0 or len(emap) == 0:
        return emap
    n, m = len(emap), len(offsets)
    src = np.repeat(np.arange(n), m)
    off = np.tile(offsets, (n, 1))
    pos = emap.positions[src] + off
    if decay == "source":
        scale = pair_weights(off, emap.o_var[src], emap.sigma0_sq)
    else:
        scale = np.repeat(np.exp(-0.5 * np.sum(off**2, axis=1) / emap.sigma0_sq)[:, None], N_CLASSES, axis=1)

    orig_keys = np.round(emap.positions / step).astype(np.int64)
    cand_keys = np.round(pos / step).astype(np.int64)
    _, first = np.unique(cand_keys, axis=0, return_index=True)
    first = np.sort(first)
    taken = {tuple(k) for k in orig_keys}
    keep = np.array([tuple(cand_keys[i]) not in taken for i in first], dtype=bool)
    chosen = first[keep]
    logger.debug("expansion added %d centers to %d", len(chosen), n)

    added = EvidentialMap(
        positions=pos[chosen],
        o_cls=emap.o_cls[src[chosen]] * scale[chosen],
        o_var=emap.o_var[src[chosen]].copy(),
        layer=emap.layer,
        nu=emap.nu,
        sigma0_sq=emap.sigma0_sq,
    )
    return emap.merged(added)


def initial_params(labels: np.ndarray, layer: Layer, init: MapInit) -> Tuple[np.ndarray, np.ndarray]:
    n = len(labels)
    o_var = np.broadcast_to(np.asarray(init.o_var, dtype=np.float64).reshape(N_CLASSES, 2), (n, N_CLASSES, 2)).copy()
    base = np.asarray(init.o_cls, dtype=np.float64)
    if init.mode == "constant":
        return np.tile(base, (n, 1)), o_var
    is_fg = labels == LAYER_FG_LABEL[layer]
    o_cls = np.empty((n, N_CLASSES))
    o_cls[:, FG] = np.where(is_fg, base[FG], init.off_ratio * base[FG])
    o_cls[:, BG] = np.where(is_fg, init.off_ratio * base[BG], base[BG])
    return o_cls, o_var


def build_from_cloud(
    cloud: PointCloud,
    layer: Layer,
    init: MapInit,
    voxel: float = 0.4,
    nu: float = 2.0,
    sigma0_sq: float = 0.01,
) -> EvidentialMap:
    """Centers at the 2D voxel centroids of the measurement points.

    Free-space points feed the road layer only.
    """
    source = cloud if layer is Layer.ROAD else cloud.select(~cloud.is_free_space)
    if len(source) == 0:
        raise NoObservableCentersError()
    inverse, n = voxel_groups(source.xy, voxel)
    positions = group_mean(source.xy, inverse, n)
    labels = majority_label(source.labels, inverse, n)
    o_cls, o_var = initial_params(labels, layer, init)
    logger.info("%s map: %d centers from %d points", layer.value, n, len(source))
    return EvidentialMap(positions, o_cls, o_var, layer, nu, sigma0_sq)


def subsample_centers(emap: EvidentialMap, max_centers: Optional[int], rng: np.random.Generator) -> EvidentialMap:
    if max_centers is None or len(emap) <= max_centers:
        return emap
    keep = np.sort(rng.choice(len(emap), size=max_centers, replace=False))
    return EvidentialMap(emap.positions[keep], emap.o_cls[keep], emap.o_var[keep], emap.layer, emap.nu, emap.sigma0_sq)


# ---------- snapshot ----------

def write_snapshot(emap: EvidentialMap, path: Union[str, Path]) -> Path:
    path = Path(path)
    frame = pd.DataFrame(
        {
            "x": emap.positions[:, 0],
            "y": emap.positions[:, 1],
            "o_fg": emap.o_cls[:, FG],
            "o_bg": emap.o_cls[:, BG],
            "var_fg_x": emap.o_var[:, FG, 0],
            "var_fg_y": emap.o_var[:, FG, 1],
            "var_bg_x": emap.o_var[:, BG, 0],
            "var_bg_y": emap.o_var[:, BG, 1],
        },
        columns=SNAPSHOT_COLUMNS,
    )
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def read_snapshot(path: Union[str, Path], layer: Layer, nu: float = 2.0, sigma0_sq: float = 0.01) -> EvidentialMap:
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in SNAPSHOT_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"snapshot is missing columns {missing}")
    values = frame[SNAPSHOT_COLUMNS].to_numpy(dtype=np.float64)
    return EvidentialMap(
        positions=values[:, 0:2].copy(),
        o_cls=values[:, 2:4].copy(),
        o_var=values[:, 4:8].reshape(-1, N_CLASSES, 2).copy(),
        layer=layer,
        nu=nu,
        sigma0_sq=sigma0_sq,
    )
