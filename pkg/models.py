import math
from enum import Enum
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from shapely.geometry import Point, Polygon
from shapely.ops import unary_union


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    return math.pi if wrapped <= -math.pi else wrapped


# Enums shared by the scenario format, the pipeline and the wire codec
class Layer(str, Enum):
    ROAD = "road"
    OBJECT = "object"

    @property
    def wire_code(self) -> int:
        return 0 if self is Layer.ROAD else 1

    @classmethod
    def from_wire(cls, code: int) -> "Layer":
        return {0: cls.ROAD, 1: cls.OBJECT}[code]


class Strategy(str, Enum):
    ALL = "all"
    ROAD = "road"


# "floor" decays expansion copies with sigma0^2 only, "source" adds the source center's variance
ExpansionDecay = Literal["floor", "source"]

# cell indices travel as uint16 on the wire
MAX_GRID_CELLS = 0xFFFF


# ==================== SCENARIO FILE ====================

class OrientedBox3(BaseModel):
    model_config = ConfigDict(frozen=True)

    x: float
    y: float
    z: float = 0.0
    l: float = Field(..., gt=0)
    w: float = Field(..., gt=0)
    h: float = Field(..., gt=0)
    yaw: float = 0.0

    @field_validator("yaw")
    @classmethod
    def _wrap_yaw(cls, v: float) -> float:
        return wrap_angle(v)

    @property
    def center(self) -> Tuple[float, float, float]:
        return (self.x, self.y, self.z)

    @property
    def dims(self) -> Tuple[float, float, float]:
        return (self.l, self.w, self.h)

    def corners_xy(self) -> List[Tuple[float, float]]:
        """Footprint corners, counter-clockwise."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = self.l / 2.0, self.w / 2.0
        out = []
        for u, v in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
            out.append((self.x + c * u - s * v, self.y + s * u + c * v))
        return out

    def footprint(self) -> Polygon:
        return Polygon(self.corners_xy())


class LidarSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_rays: int = Field(360, ge=4)
    ring_radii: List[float] = Field(default_factory=lambda: [3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 12.0, 15.0, 18.0, 22.0])
    max_range: float = Field(50.0, gt=0)
    mount_height: float = Field(1.9, gt=0)

    @model_validator(mode="after")
    def _check_rings(self) -> "LidarSpec":
        radii = self.ring_radii
        if not radii:
            raise ValueError("ring_radii must not be empty")
        if radii[0] <= 0:
            raise ValueError("ring_radii must be positive")
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValueError("ring_radii must be strictly increasing")
        if radii[-1] > self.max_range:
            raise ValueError("ring_radii must not exceed max_range")
        return self


class AgentSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    x: float
    y: float
    yaw: float = 0.0
    is_ego: bool = False
    lidar: LidarSpec = Field(default_factory=LidarSpec)

    @field_validator("yaw")
    @classmethod
    def _wrap_yaw(cls, v: float) -> float:
        return wrap_angle(v)

    @property
    def pose(self) -> Tuple[float, float, float]:
        return (self.x, self.y, self.yaw)


class Scenario(BaseModel):
    model_config = ConfigDict(frozen=True)

    roads: List[List[Tuple[float, float]]]
    vehicles: List[OrientedBox3] = Field(default_factory=list)
    agents: List[AgentSpec]
    seed: int = Field(0, ge=0, le=2**64 - 1)

    @field_validator("roads")
    @classmethod
    def _check_polygons(cls, roads: List[List[Tuple[float, float]]]) -> List[List[Tuple[float, float]]]:
        for i, ring in enumerate(roads):
            if len(ring) < 3:
                raise ValueError(f"road polygon {i} has fewer than 3 vertices")
            poly = Polygon(ring)
            if not poly.is_valid or not poly.exterior.is_simple or poly.area <= 0:
                raise ValueError(f"road polygon {i} is not simple")
        return roads

    @model_validator(mode="after")
    def _check_agents(self) -> "Scenario":
        egos = [a for a in self.agents if a.is_ego]
        if len(egos) != 1:
            raise ValueError(f"exactly one ego agent required, got {len(egos)}")
        union = unary_union([Polygon(r) for r in self.roads]) if self.roads else Polygon()
        for i, agent in enumerate(self.agents):
            if not union.covers(Point(agent.x, agent.y)):
                raise ValueError(f"agent {i} pose lies outside the road polygons")
        return self

    @property
    def ego_index(self) -> int:
        return next(i for i, a in enumerate(self.agents) if a.is_ego)

    def with_seed(self, seed: Optional[int]) -> "Scenario":
        return self if seed is None else self.model_copy(update={"seed": seed})


# ==================== ALGORITHM CONFIGS ====================

class FreeSpaceConfig(BaseModel):
    h_fs: float = -1.5
    d_fs: float = Field(1.0, ge=0)
    s_fs: float = Field(6.0, gt=0)
    v_fs: float = Field(0.2, gt=0)


class GeomAugConfig(BaseModel):
    scale: Tuple[float, float] = (0.95, 1.05)
    flip_x: bool = True
    flip_y: bool = True
    # None draws a uniform angle over the full circle
    rotation: Optional[float] = None
    noise_sigma: float = Field(0.2, ge=0)

    @field_validator("scale")
    @classmethod
    def _check_scale(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        lo, hi = v
        if not 0 < lo <= hi:
            raise ValueError("scale range must satisfy 0 < lo <= hi")
        return v


class MapInit(BaseModel):
    mode: Literal["constant", "per_label"] = "constant"
    o_cls: Tuple[float, float] = (1.0, 1.0)
    # fg_x, fg_y, bg_x, bg_y
    o_var: Tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    off_ratio: float = Field(0.1, ge=0)

    @field_validator("o_cls", "o_var")
    @classmethod
    def _non_negative(cls, v):
        if any(x < 0 for x in v):
            raise ValueError("initial outputs must be non-negative")
        return v


class FitConfig(BaseModel):
    # None selects the per-layer default: 10 shifts per seed for roads, 1 for objects
    n_tgt: Optional[int] = Field(None, ge=1)
    shift_sigma: float = Field(3.0, gt=0)
    downsample_voxel: float = Field(0.4, gt=0)
    n_tgt_cap: int = Field(3000, ge=1)
    box_margin: float = Field(4.0, ge=0)
    bg_multiplier: int = Field(50, ge=0)
    lr: float = Field(0.05, ge=0)
    epochs: int = Field(300, ge=1)
    a_max: float = Field(10.0, ge=1)
    max_step: float = Field(2.0, gt=0)
    reduction: Literal["sum", "mean"] = "sum"
    seed: int = Field(0, ge=0)

    def shifts_per_seed(self, layer: Layer) -> int:
        if self.n_tgt is not None:
            return self.n_tgt
        return 10 if layer is Layer.ROAD else 1


class PipelineConfig(BaseModel):
    range_m: float = Field(50.0, gt=0)
    resolution: float = Field(0.4, gt=0)
    nu: float = Field(2.0, gt=0)
    sigma0_sq: float = Field(0.01, gt=0)
    center_voxel: float = Field(0.4, gt=0)
    use_free_space: bool = True
    free_space: FreeSpaceConfig = Field(default_factory=FreeSpaceConfig)
    init: MapInit = Field(default_factory=lambda: MapInit(mode="per_label"))
    road_expansion: float = Field(0.0, ge=0)
    object_expansion: float = Field(1.2, ge=0)
    expansion_step: float = Field(0.4, gt=0)
    expansion_decay: ExpansionDecay = "floor"
    max_centers: Optional[int] = Field(None, ge=1)
    fit: FitConfig = Field(default_factory=FitConfig)
    min_hits: int = Field(3, ge=1)
    detection_noise: float = Field(0.05, ge=0)
    nms_iou: float = Field(0.3, ge=0, le=1)
    link_mbps: float = Field(27.0, gt=0)

    @model_validator(mode="after")
    def _check_grid_size(self) -> "PipelineConfig":
        cells = int(round(2.0 * self.range_m / self.resolution))
        if cells > MAX_GRID_CELLS:
            raise ValueError(f"grid of {cells} cells per side exceeds {MAX_GRID_CELLS}; raise resolution or lower range_m")
        return self

    def expansion_for(self, layer: Layer) -> float:
        return self.road_expansion if layer is Layer.ROAD else self.object_expansion


def check_thresholds(values: List[float]) -> List[float]:
    if not values:
        raise ValueError("u_ego must yield at least one value")
    if any(not 0.0 <= v <= 1.0 for v in values):
        raise ValueError("u_ego values must lie in [0, 1]")
    return values


class RunConfig(BaseModel):
    scenario: Path
    out: Path
    u_ego: List[float]
    sweep: bool = False
    u_coop: float = Field(1.0, ge=0, le=1)
    strategy: Strategy = Strategy.ALL
    u_thr: float = Field(1.0, ge=0, le=1)
    seed: Optional[int] = Field(None, ge=0)
    layers: List[Layer] = Field(default_factory=lambda: [Layer.ROAD, Layer.OBJECT])
    pipeline: PipelineConfig = Field(default_factory=PipelineConfig)

    @field_validator("u_ego")
    @classmethod
    def _check_thresholds(cls, values: List[float]) -> List[float]:
        return check_thresholds(values)


# ==================== API SCHEMAS ====================

class ScenarioSummary(BaseModel):
    n_roads: int
    n_vehicles: int
    n_agents: int
    ego_index: int
    seed: int


class SweepRequest(BaseModel):
    scenario: Scenario
    u_ego: List[float] = Field(default_factory=lambda: [0.5])
    strategy: Strategy = Strategy.ALL
    u_coop: float = Field(1.0, ge=0, le=1)
    u_thr: float = Field(1.0, ge=0, le=1)
    layers: List[Layer] = Field(default_factory=lambda: [Layer.ROAD, Layer.OBJECT])
    pipeline: PipelineConfig = Field(default_factory=PipelineConfig)

    @field_validator("u_ego")
    @classmethod
    def _check_thresholds(cls, values: List[float]) -> List[float]:
        return check_thresholds(values)


class SweepRowResponse(BaseModel):
    u_ego: float
    layer: Layer
    baseline_bytes: int
    selected_bytes: int
    iou_all: float
    iou_obs: float


class LayerSummaryResponse(BaseModel):
    layer: Layer
    ego_iou_all: float
    ego_iou_obs: float
    baseline_iou_all: float
    baseline_iou_obs: float
    baseline_bytes: int


class SweepResponse(BaseModel):
    rows: List[SweepRowResponse]
    layers: List[LayerSummaryResponse]


class DirichletRequest(BaseModel):
    evidence: List[float] = Field(..., min_length=2)

    @field_validator("evidence")
    @classmethod
    def _non_negative(cls, v: List[float]) -> List[float]:
        if any(x < 0 or not math.isfinite(x) for x in v):
            raise ValueError("evidence must be finite and non-negative")
        return v


class DirichletResponse(BaseModel):
    alpha: List[float]
    strength: float
    p_hat: List[float]
    uncertainty: float


class CpmCellResponse(BaseModel):
    col: int
    row: int
    e_fg: float
    e_bg: float


class CpmPayloadResponse(BaseModel):
    agent_id: int
    frame_id: int
    layer: Layer
    origin: Tuple[float, float]
    cell_size: float
    width: int
    height: int
    n_cells: int
    size_bytes: int
    cells: List[CpmCellResponse]



# ==================== RUN MANIFEST ====================

class LayerReport(BaseModel):
    rendered_u_ego: float
    ego_iou_all: float
    ego_iou_obs: float
    fused_iou_all: float
    fused_iou_obs: float
    baseline_iou_all: float
    baseline_iou_obs: float
    selected_bytes: int
    baseline_bytes: int
    selected_latency_ms: float
    baseline_latency_ms: float
    n_centers: int
    initial_loss: Optional[float] = None
    final_loss: Optional[float] = None
    # None when no observed cell exists to bin
    calibration_deviation: Optional[float] = None
    entropy_calibration_deviation: Optional[float] = None


class Manifest(BaseModel):
    files: List[str]
    config: RunConfig
    summary: Dict[Layer, LayerReport]
    n_detections: int = 0
