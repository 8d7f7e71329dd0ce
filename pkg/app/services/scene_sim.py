import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import shapely
from shapely.geometry import Polygon
from shapely.ops import unary_union

from app.core.seeding import Stage, stage_rng
from app.models.cloud import PointCloud, PointLabel
from app.models.grid import GridSpec
from models import AgentSpec, OrientedBox3, Scenario, wrap_angle

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Pose:
    """Planar pose of a sensor frame in the world; z is the mount height above ground."""

    x: float
    y: float
    yaw: float
    z: float = 0.0

    @classmethod
    def of_agent(cls, agent: AgentSpec) -> "Pose":
        return cls(agent.x, agent.y, agent.yaw, agent.lidar.mount_height)

    def to_world(self, xyz: np.ndarray) -> np.ndarray:
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        x, y, z = xyz.T
        return np.column_stack([self.x + c * x - s * y, self.y + s * x + c * y, z + self.z])

    def to_local(self, xyz: np.ndarray) -> np.ndarray:
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        dx, dy = xyz[:, 0] - self.x, xyz[:, 1] - self.y
        return np.column_stack([c * dx + s * dy, -s * dx + c * dy, xyz[:, 2] - self.z])

    def xy_to_world(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        return self.to_world(np.column_stack([xy, np.zeros(len(xy))]))[:, :2]

    def xy_to_local(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        return self.to_local(np.column_stack([xy, np.zeros(len(xy))]))[:, :2]

    def box_to_local(self, box: OrientedBox3) -> OrientedBox3:
        local = self.to_local(np.array([[box.x, box.y, box.z]]))[0]
        return box.model_copy(
            update={"x": float(local[0]), "y": float(local[1]), "z": float(local[2]), "yaw": wrap_angle(box.yaw - self.yaw)}
        )


def transform_cloud(cloud: PointCloud, src: Pose, dst: Pose) -> PointCloud:
    """Express a cloud recorded in frame src in frame dst."""
    if len(cloud) == 0:
        return cloud
    return cloud.with_xyz(dst.to_local(src.to_world(cloud.xyz)))


# ---------- geometry helpers ----------

def road_union(scenario: Scenario):
    geom = unary_union([Polygon(r) for r in scenario.roads]) if scenario.roads else Polygon()
    shapely.prepare(geom)
    return geom


def road_area_in(scenario: Scenario, pose: Pose):
    """Road union expressed in the frame of pose."""
    return shapely.transform(road_union(scenario), pose.xy_to_local)


def vehicle_union(scenario: Scenario):
    geom = unary_union([v.footprint() for v in scenario.vehicles]) if scenario.vehicles else Polygon()
    shapely.prepare(geom)
    return geom


def label_ground(scenario: Scenario, xy_world: np.ndarray) -> np.ndarray:
    """ROAD inside any road polygon, OTHER elsewhere."""
    xy_world = np.asarray(xy_world, dtype=np.float64).reshape(-1, 2)
    inside = shapely.contains_xy(road_union(scenario), xy_world[:, 0], xy_world[:, 1])
    return np.where(inside, PointLabel.ROAD, PointLabel.OTHER).astype(np.int8)


def _slab_hits(origin: np.ndarray, dirs: np.ndarray, box: OrientedBox3) -> np.ndarray:
    """Entry distance of each ray into the box footprint, inf where the ray misses."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    ox, oy = origin[0] - box.x, origin[1] - box.y
    o_local = np.array([c * ox + s * oy, -s * ox + c * oy])
    d_local = np.column_stack([c * dirs[:, 0] + s * dirs[:, 1], -s * dirs[:, 0] + c * dirs[:, 1]])
    half = np.array([box.l / 2.0, box.w / 2.0])

    t_near = np.full(len(dirs), -np.inf)
    t_far = np.full(len(dirs), np.inf)
    for axis in range(2):
        d = d_local[:, axis]
        parallel = np.abs(d) < 1e-15
        safe = np.where(parallel, 1.0, d)
        t1 = (-half[axis] - o_local[axis]) / safe
        t2 = (half[axis] - o_local[axis]) / safe
        lo = np.where(parallel, -np.inf, np.minimum(t1, t2))
        hi = np.where(parallel, np.inf, np.maximum(t1, t2))
        if abs(o_local[axis]) > half[axis]:
            hi = np.where(parallel, -np.inf, hi)
        t_near = np.maximum(t_near, lo)
        t_far = np.minimum(t_far, hi)
    hit = (t_far >= t_near) & (t_far >= 0.0)
    return np.where(hit, np.maximum(t_near, 0.0), np.inf)


# ---------- simulation ----------

def raycast(scenario: Scenario, agent_index: int) -> PointCloud:
    """Plan-view LiDAR sweep of one agent, in that agent's sensor frame."""
    if not 0 <= agent_index < len(scenario.agents):
        raise IndexError(f"agent index {agent_index} out of range")
    agent = scenario.agents[agent_index]
    lidar = agent.lidar
    bearings = 2.0 * math.pi * np.arange(lidar.n_rays) / lidar.n_rays
    world_dirs = np.column_stack([np.cos(bearings + agent.yaw), np.sin(bearings + agent.yaw)])
    origin = np.array([agent.x, agent.y])

    first_hit = np.full(lidar.n_rays, np.inf)
    hit_box = np.full(lidar.n_rays, -1, dtype=np.int64)
    for b, box in enumerate(scenario.vehicles):
        t = _slab_hits(origin, world_dirs, box)
        closer = t < first_hit
        first_hit = np.where(closer, t, first_hit)
        hit_box = np.where(closer, b, hit_box)
    sees_vehicle = first_hit < lidar.max_range

    radii = np.asarray(lidar.ring_radii, dtype=np.float64)
    ray_idx, ring_idx = np.nonzero(radii[None, :] < np.where(sees_vehicle, first_hit, np.inf)[:, None])
    r = radii[ring_idx]
    ground_local = np.column_stack(
        [r * np.cos(bearings[ray_idx]), r * np.sin(bearings[ray_idx]), np.full(len(r), -lidar.mount_height)]
    )
    pose = Pose.of_agent(agent)
    ground_labels = label_ground(scenario, pose.to_world(ground_local)[:, :2])

    v_rays = np.flatnonzero(sees_vehicle)
    t = first_hit[v_rays]
    box_z = np.array([scenario.vehicles[b].z for b in hit_box[v_rays]], dtype=np.float64)
    vehicle_local = np.column_stack(
        [t * np.cos(bearings[v_rays]), t * np.sin(bearings[v_rays]), box_z - lidar.mount_height]
    )

    xyz = np.concatenate([ground_local, vehicle_local])
    labels = np.concatenate([ground_labels, np.full(len(v_rays), PointLabel.VEHICLE, dtype=np.int8)])
    intensity = stage_rng(scenario.seed, Stage.RAYCAST, agent_index).uniform(0.0, 1.0, size=len(xyz))
    if len(xyz) == 0:
        logger.warning("agent %d produced an empty cloud", agent_index)
    logger.debug("agent %d: %d ground, %d vehicle returns", agent_index, len(ground_local), len(v_rays))
    return PointCloud.from_xyz(xyz, intensity, labels)


def vehicle_hits(cloud: PointCloud, scenario: Scenario, pose: Pose) -> List[np.ndarray]:
    """World xy of the vehicle returns lying on each scenario vehicle."""
    pts = cloud.select(cloud.labels == PointLabel.VEHICLE)
    world = pose.to_world(pts.xyz)[:, :2]
    hits = []
    for box in scenario.vehicles:
        grown = box.footprint().buffer(1e-6)
        hits.append(world[shapely.intersects_xy(grown, world[:, 0], world[:, 1])])
    return hits


def ground_truth_grids(
    scenario: Scenario, grid_spec: GridSpec, pose: Optional[Pose] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Road and vehicle masks at cell centers; the grid lives in the frame of pose (world if None)."""
    centers = grid_spec.centers_flat()
    if pose is not None:
        centers = pose.xy_to_world(centers)
    road = shapely.contains_xy(road_union(scenario), centers[:, 0], centers[:, 1])
    vehicle = shapely.contains_xy(vehicle_union(scenario), centers[:, 0], centers[:, 1])
    return road.reshape(grid_spec.shape), vehicle.reshape(grid_spec.shape)
