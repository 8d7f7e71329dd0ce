"""Scene to grids: simulate every agent, build and fit its maps, and line everything up on the ego frame."""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from app.core.errors import NoObservableCentersError, NoTargetsError, ScenarioError
from app.core.seeding import Stage, stage_rng
from app.models.cloud import PointCloud
from app.models.grid import CellMask, EvidenceGrid, GridSpec
from app.services.augment import sample_free_space
from app.services.boxes import (
    BoxEncoding,
    decode_box,
    encode_box,
    jiou_from_evidence,
    make_anchors,
    nms,
    pairwise_iou,
)
from app.services.coop import CoopGrid, PreparedLayer, SweepTable, sweep
from app.services.evmap import (
    EvidentialMap,
    build_from_cloud,
    evidence_grid,
    expand_centers,
    subsample_centers,
)
from app.services.fit import FitResult, fit_map, sample_targets
from app.services.scene_sim import (
    Pose,
    ground_truth_grids,
    label_ground,
    raycast,
    road_area_in,
    transform_cloud,
    vehicle_hits,
)
from models import Layer, OrientedBox3, PipelineConfig, Scenario, Strategy

logger = logging.getLogger(__name__)

DETECTION_COLUMNS = ["x", "y", "yaw", "l", "w", "score", "agent", "iou", "jiou"]


@dataclass(frozen=True)
class Detection:
    box: OrientedBox3
    score: float
    agent: int


@dataclass(frozen=True, eq=False)
class LayerProducts:
    map: EvidentialMap
    fit: Optional[FitResult]
    grid: EvidenceGrid


@dataclass(frozen=True, eq=False)
class AgentProducts:
    index: int
    cloud: PointCloud
    n_free: int
    layers: Dict[Layer, LayerProducts] = field(default_factory=dict)
    detections: List[Detection] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class PreparedScene:
    scenario: Scenario
    config: PipelineConfig
    spec: GridSpec
    ego_index: int
    agents: List[AgentProducts]
    layers: Dict[Layer, PreparedLayer]
    gt_boxes: List[OrientedBox3]

    @property
    def ego(self) -> AgentProducts:
        return self.agents[self.ego_index]

    def prepared(self, layers: Sequence[Layer]) -> List[PreparedLayer]:
        return [self.layers[layer] for layer in layers]


class _AgentJob:
    """Per-agent work. Inputs are read-only and shapely geometry is built per call, so jobs can share a thread pool."""

    def __init__(self, scenario: Scenario, cfg: PipelineConfig, spec: GridSpec, layers: Sequence[Layer]):
        self.scenario = scenario
        self.cfg = cfg
        self.spec = spec
        self.layers = list(layers)
        self.ego_pose = Pose.of_agent(scenario.agents[scenario.ego_index])
        self.gt_boxes = [self.ego_pose.box_to_local(v) for v in scenario.vehicles]

    def cloud_in_ego_frame(self, index: int, raw: PointCloud) -> PointCloud:
        pose = Pose.of_agent(self.scenario.agents[index])
        cloud = raw
        if self.cfg.use_free_space and len(raw):
            free = sample_free_space(raw, np.zeros(3), self.cfg.free_space)
            if len(free):
                labels = label_ground(self.scenario, pose.to_world(free.xyz)[:, :2])
                cloud = PointCloud.concat([raw, PointCloud(features=free.features, labels=labels)])
        return transform_cloud(cloud, pose, self.ego_pose)

    def build_layer(self, index: int, cloud: PointCloud, layer: Layer) -> LayerProducts:
        cfg = self.cfg
        seed = self.scenario.seed
        emap = build_from_cloud(cloud, layer, cfg.init, cfg.center_voxel, cfg.nu, cfg.sigma0_sq)
        emap = subsample_centers(emap, cfg.max_centers, stage_rng(seed, Stage.CENTERS, index, layer.wire_code))
        radius = cfg.expansion_for(layer)
        if radius > 0:
            emap = expand_centers(emap, radius, cfg.expansion_step, cfg.expansion_decay)
        try:
            targets = sample_targets(
                cloud,
                layer,
                cfg.fit,
                seed,
                emap,
                gt_boxes=self.gt_boxes,
                road_area=road_area_in(self.scenario, self.ego_pose),
                stream=index,
            )
        except NoTargetsError:
            logger.warning("agent %d %s layer: no targets, keeping the initial map", index, layer.value)
            return LayerProducts(map=emap, fit=None, grid=evidence_grid(emap, self.spec))
        result = fit_map(emap, targets, cfg.fit)
        return LayerProducts(map=result.map, fit=result, grid=evidence_grid(result.map, self.spec))

    def detect(self, index: int, raw: PointCloud) -> List[Detection]:
        pose = Pose.of_agent(self.scenario.agents[index])
        rng = stage_rng(self.scenario.seed, Stage.DETECTIONS, index)
        found = []
        for b, hits in enumerate(vehicle_hits(raw, self.scenario, pose)):
            if len(hits) < self.cfg.min_hits:
                continue
            gt = self.gt_boxes[b]
            center = self.ego_pose.xy_to_local(hits.mean(axis=0))
            anchors = make_anchors(center, z=gt.z)
            anchor = anchors[int(np.argmax(pairwise_iou(anchors, [gt])[:, 0]))]
            noisy = encode_box(gt, anchor).as_array() + rng.normal(0.0, self.cfg.detection_noise, size=10)
            box = decode_box(BoxEncoding.from_array(noisy), anchor)
            found.append(Detection(box=box, score=1.0 - math.exp(-len(hits) / 10.0), agent=index))
        return found

    def __call__(self, index: int) -> AgentProducts:
        raw = raycast(self.scenario, index)
        cloud = self.cloud_in_ego_frame(index, raw)
        n_free = int(np.count_nonzero(cloud.is_free_space))
        logger.info("agent %d: %d points (%d free space)", index, len(cloud), n_free)
        layers: Dict[Layer, LayerProducts] = {}
        for layer in self.layers:
            try:
                layers[layer] = self.build_layer(index, cloud, layer)
            except NoObservableCentersError:
                if index == self.scenario.ego_index:
                    raise
                logger.warning("agent %d %s layer: no observable centers, skipped", index, layer.value)
        return AgentProducts(index=index, cloud=cloud, n_free=n_free, layers=layers, detections=self.detect(index, raw))


def prepare_scene(
    scenario: Scenario,
    cfg: PipelineConfig,
    layers: Sequence[Layer] = (Layer.ROAD, Layer.OBJECT),
    strategy: Strategy = Strategy.ALL,
    workers: int = 1,
) -> PreparedScene:
    spec = GridSpec.centered(cfg.range_m, cfg.resolution)
    needed = list(dict.fromkeys(list(layers) + ([Layer.ROAD] if strategy is Strategy.ROAD else [])))
    job = _AgentJob(scenario, cfg, spec, needed)
    indices = list(range(len(scenario.agents)))
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        agents = list(pool.map(job, indices))

    ego_index = scenario.ego_index
    gt_road, gt_vehicle = ground_truth_grids(scenario, spec, job.ego_pose)
    prepared: Dict[Layer, PreparedLayer] = {}
    for layer in layers:
        coops = []
        for agent in agents:
            if agent.index == ego_index or layer not in agent.layers:
                continue
            road_mask = None
            if strategy is Strategy.ROAD and Layer.ROAD in agent.layers:
                raster = agent.layers[Layer.ROAD].grid.raster()
                road_mask = CellMask(spec=spec, mask=raster.predicted_fg & raster.observed)
            elif strategy is Strategy.ROAD:
                road_mask = CellMask(spec=spec, mask=np.zeros(spec.shape, dtype=bool))
            coops.append(CoopGrid(agent_id=agent.index, grid=agent.layers[layer].grid, road_mask=road_mask))
        prepared[layer] = PreparedLayer(
            layer=layer,
            ego=agents[ego_index].layers[layer].grid,
            coops=coops,
            gt=gt_road if layer is Layer.ROAD else gt_vehicle,
        )
    return PreparedScene(
        scenario=scenario,
        config=cfg,
        spec=spec,
        ego_index=ego_index,
        agents=agents,
        layers=prepared,
        gt_boxes=job.gt_boxes,
    )


def run_sweep(
    scenario: Scenario,
    cfg: PipelineConfig,
    u_ego_values: Sequence[float],
    layers: Sequence[Layer] = (Layer.ROAD, Layer.OBJECT),
    strategy: Strategy = Strategy.ALL,
    u_coop: float = 1.0,
    u_thr: float = 1.0,
    workers: int = 1,
) -> Tuple[PreparedScene, SweepTable]:
    scene = prepare_scene(scenario, cfg, layers, strategy, workers)
    table = sweep(scene.prepared(layers), u_ego_values, strategy, u_coop, u_thr, cfg.link_mbps)
    return scene, table


# ---------- detections ----------

def fuse_detections(detections: Sequence[Detection], iou_thr: float) -> List[Detection]:
    kept = nms([d.box for d in detections], [d.score for d in detections], iou_thr)
    return [detections[i] for i in kept]


def detections_frame(
    detections: Sequence[Detection],
    gt_boxes: Sequence[OrientedBox3],
    e_fg: np.ndarray,
    spec: GridSpec,
) -> pd.DataFrame:
    """One row per detection with its best box IoU and the evidence IoU against that box."""
    rows = []
    iou = pairwise_iou([d.box for d in detections], gt_boxes)
    for i, det in enumerate(detections):
        if len(gt_boxes):
            j = int(np.argmax(iou[i]))
            best, evidence_iou = float(iou[i, j]), jiou_from_evidence(det.box, gt_boxes[j], e_fg, spec)
        else:
            best, evidence_iou = 0.0, 0.0
        b = det.box
        rows.append((b.x, b.y, b.yaw, b.l, b.w, det.score, det.agent, best, evidence_iou))
    return pd.DataFrame(rows, columns=DETECTION_COLUMNS)


def write_detections(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    frame.to_csv(path, index=False, float_format="%.10g")
    return path


def all_detections(scene: PreparedScene) -> List[Detection]:
    return [d for agent in scene.agents for d in agent.detections]


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioError(f"cannot read scenario {path}: {e}") from e
    try:
        return Scenario.model_validate_json(text)
    except ValidationError as e:
        raise ScenarioError(f"invalid scenario {path}: {e}") from e
