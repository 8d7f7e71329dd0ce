import logging
import math
from typing import Tuple

import numpy as np

from app.core.seeding import Stage, stage_rng
from app.models.cloud import FREE_SPACE_INTENSITY, PointCloud, PointLabel
from models import FreeSpaceConfig, GeomAugConfig

logger = logging.getLogger(__name__)

N_LABELS = len(PointLabel)


# ---------- voxel grouping ----------

def voxel_groups(coords: np.ndarray, size: float) -> Tuple[np.ndarray, int]:
    """Voxel id per point, ids numbered in sorted voxel-key order."""
    if size <= 0:
        raise ValueError("voxel size must be > 0")
    coords = np.asarray(coords, dtype=np.float64)
    if len(coords) == 0:
        return np.zeros(0, dtype=np.int64), 0
    keys = np.floor(coords / size).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    return inverse.reshape(-1), len(uniq)


def group_mean(values: np.ndarray, inverse: np.ndarray, n_groups: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    counts = np.bincount(inverse, minlength=n_groups).astype(np.float64)
    if values.ndim == 1:
        return np.bincount(inverse, weights=values, minlength=n_groups) / counts
    cols = [np.bincount(inverse, weights=values[:, j], minlength=n_groups) for j in range(values.shape[1])]
    return np.column_stack(cols) / counts[:, None]


def majority_label(labels: np.ndarray, inverse: np.ndarray, n_groups: int) -> np.ndarray:
    """Most frequent label per group; ties go to the lowest label value."""
    counts = np.bincount(inverse * N_LABELS + labels.astype(np.int64), minlength=n_groups * N_LABELS)
    return counts.reshape(n_groups, N_LABELS).argmax(axis=1).astype(np.int8)


def voxel_downsample(cloud: PointCloud, size: float) -> PointCloud:
    """One centroid point per occupied 3D voxel, in voxel-key order."""
    if len(cloud) == 0:
        return PointCloud.empty()
    inverse, n = voxel_groups(cloud.xyz, size)
    xyz = group_mean(cloud.xyz, inverse, n)
    labels = majority_label(cloud.labels, inverse, n)

    free = cloud.is_free_space
    n_free = np.bincount(inverse, weights=free.astype(np.float64), minlength=n)
    n_hit = np.bincount(inverse, weights=(~free).astype(np.float64), minlength=n)
    hit_sum = np.bincount(inverse, weights=np.where(free, 0.0, cloud.intensity), minlength=n)
    intensity = np.where(n_free >= n_hit, FREE_SPACE_INTENSITY, hit_sum / np.maximum(n_hit, 1.0))
    return PointCloud.from_xyz(xyz, intensity, labels)


# ---------- free space ----------

def free_space_candidates(
    hits: np.ndarray, lidar_origin: np.ndarray, cfg: FreeSpaceConfig
) -> Tuple[np.ndarray, np.ndarray]:
    """Kept ray samples before downsampling, with the index of their source hit."""
    hits = np.asarray(hits, dtype=np.float64).reshape(-1, 3)
    origin = np.asarray(lidar_origin, dtype=np.float64).reshape(3)
    if len(hits) == 0:
        return np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    ray = hits - origin
    length = np.sqrt(np.sum(ray * ray, axis=1))
    reach = length - cfg.d_fs
    k_max = int(np.max(np.floor(np.maximum(reach, 0.0) / cfg.s_fs))) + 1
    if k_max < 1:
        return np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    s = cfg.s_fs * np.arange(1, k_max + 1, dtype=np.float64)
    t = s[None, :] / length[:, None]
    pts = origin + t[..., None] * ray[:, None, :]
    keep = (s[None, :] <= reach[:, None]) & (pts[..., 2] - origin[2] <= cfg.h_fs)
    src = np.broadcast_to(np.arange(len(hits))[:, None], keep.shape)
    return pts[keep], src[keep]


def sample_free_space(cloud: PointCloud, lidar_origin, cfg: FreeSpaceConfig) -> PointCloud:
    """Free-space points (intensity -1) sampled on the rays from the sensor to every reflected point."""
    reflected = cloud.select(~cloud.is_free_space)
    if np.any(~np.isfinite(reflected.d)) or np.any(reflected.d <= 0):
        raise ValueError("every reflected point needs a finite, positive range")
    pts, _ = free_space_candidates(reflected.xyz, lidar_origin, cfg)
    if len(pts) == 0:
        logger.debug("no free-space samples from %d rays", len(reflected))
        return PointCloud.empty()
    raw = PointCloud.from_xyz(
        pts, np.full(len(pts), FREE_SPACE_INTENSITY), np.full(len(pts), PointLabel.OTHER, dtype=np.int8)
    )
    return voxel_downsample(raw, cfg.v_fs)


# ---------- geometric ----------

def geometric_augment(cloud: PointCloud, cfg: GeomAugConfig, seed: int) -> PointCloud:
    if len(cloud) == 0:
        raise ValueError("cannot augment an empty cloud")
    rng = stage_rng(seed, Stage.AUGMENT)
    angle = rng.uniform(-math.pi, math.pi) if cfg.rotation is None else cfg.rotation
    flip_x = bool(rng.random() < 0.5) and cfg.flip_x
    flip_y = bool(rng.random() < 0.5) and cfg.flip_y
    lo, hi = cfg.scale
    scale = rng.uniform(lo, hi)

    c, s = math.cos(angle), math.sin(angle)
    x, y, z = cloud.xyz.T
    xyz = np.column_stack([c * x - s * y, s * x + c * y, z])
    if flip_x:
        xyz[:, 1] = -xyz[:, 1]
    if flip_y:
        xyz[:, 0] = -xyz[:, 0]
    xyz = xyz * scale
    if cfg.noise_sigma > 0:
        xyz = xyz + rng.normal(0.0, cfg.noise_sigma, size=xyz.shape)
    return cloud.with_xyz(xyz)
