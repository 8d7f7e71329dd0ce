from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable

import numpy as np

FREE_SPACE_INTENSITY = -1.0


class PointLabel(IntEnum):
    ROAD = 0
    VEHICLE = 1
    OTHER = 2


def polar_features(xyz: np.ndarray) -> np.ndarray:
    """Range and bearing columns (d, cos, sin) for an (N, 3) array."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    d = np.sqrt(np.sum(xyz * xyz, axis=1))
    planar = np.hypot(xyz[:, 0], xyz[:, 1])
    safe = np.where(planar > 0, planar, 1.0)
    cos_t = np.where(planar > 0, xyz[:, 0] / safe, 1.0)
    sin_t = np.where(planar > 0, xyz[:, 1] / safe, 0.0)
    return np.column_stack([d, cos_t, sin_t])


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Measurement points with the input feature vector [x, y, z, d, cos, sin, i] and a label."""

    features: np.ndarray
    labels: np.ndarray

    @classmethod
    def from_xyz(cls, xyz: np.ndarray, intensity: np.ndarray, labels: np.ndarray) -> "PointCloud":
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        intensity = np.asarray(intensity, dtype=np.float64).reshape(-1)
        labels = np.asarray(labels, dtype=np.int8).reshape(-1)
        if not len(xyz) == len(intensity) == len(labels):
            raise ValueError("xyz, intensity and labels must have the same length")
        features = np.column_stack([xyz, polar_features(xyz), intensity]) if len(xyz) else np.zeros((0, 7))
        return cls(features=features, labels=labels)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(features=np.zeros((0, 7)), labels=np.zeros(0, dtype=np.int8))

    @classmethod
    def concat(cls, clouds: Iterable["PointCloud"]) -> "PointCloud":
        clouds = [c for c in clouds if len(c)]
        if not clouds:
            return cls.empty()
        return cls(
            features=np.concatenate([c.features for c in clouds]),
            labels=np.concatenate([c.labels for c in clouds]),
        )

    def __len__(self) -> int:
        return int(self.features.shape[0])

    @property
    def xyz(self) -> np.ndarray:
        return self.features[:, 0:3]

    @property
    def xy(self) -> np.ndarray:
        return self.features[:, 0:2]

    @property
    def z(self) -> np.ndarray:
        return self.features[:, 2]

    @property
    def d(self) -> np.ndarray:
        return self.features[:, 3]

    @property
    def cos_theta(self) -> np.ndarray:
        return self.features[:, 4]

    @property
    def sin_theta(self) -> np.ndarray:
        return self.features[:, 5]

    @property
    def intensity(self) -> np.ndarray:
        return self.features[:, 6]

    @property
    def is_free_space(self) -> np.ndarray:
        return self.intensity == FREE_SPACE_INTENSITY

    def select(self, mask: np.ndarray) -> "PointCloud":
        return PointCloud(features=self.features[mask], labels=self.labels[mask])

    def with_xyz(self, xyz: np.ndarray) -> "PointCloud":
        """Same points moved to new coordinates, polar features recomputed."""
        return PointCloud.from_xyz(xyz, self.intensity, self.labels)

    def same_as(self, other: "PointCloud") -> bool:
        return (
            self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
            and self.labels.tobytes() == other.labels.tobytes()
        )
