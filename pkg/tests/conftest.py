from pathlib import Path

import numpy as np
import pytest

from models import AgentSpec, FitConfig, LidarSpec, OrientedBox3, PipelineConfig, Scenario

ROOT = Path(__file__).resolve().parent.parent
OCCLUSION = ROOT / "scenarios" / "occlusion.json"

CAR = {"l": 4.41, "w": 1.98, "h": 1.64, "z": 0.82}


def car(x: float, y: float, yaw: float = 0.0) -> OrientedBox3:
    return OrientedBox3(x=x, y=y, yaw=yaw, **CAR)


def straight_road(half_width: float = 4.0, half_length: float = 40.0):
    return [[(-half_length, -half_width), (half_length, -half_width), (half_length, half_width), (-half_length, half_width)]]


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def occlusion_path() -> Path:
    return OCCLUSION


@pytest.fixture
def occlusion() -> Scenario:
    return Scenario.model_validate_json(OCCLUSION.read_text(encoding="utf-8"))


@pytest.fixture
def lidar() -> LidarSpec:
    return LidarSpec(n_rays=90, ring_radii=[3.0, 5.0, 8.0, 12.0], max_range=20.0, mount_height=1.9)


@pytest.fixture
def single_agent(lidar) -> Scenario:
    """One ego on a straight road with one car 10 m ahead."""
    return Scenario(
        roads=straight_road(),
        vehicles=[car(10.0, 0.0)],
        agents=[AgentSpec(x=0.0, y=0.0, is_ego=True, lidar=lidar)],
        seed=3,
    )


@pytest.fixture
def two_agents(lidar) -> Scenario:
    """Ego and one cooperative agent facing each other; a car sits between them off the ego's line."""
    return Scenario(
        roads=straight_road(),
        vehicles=[car(6.0, 0.0), car(12.0, 0.0)],
        agents=[
            AgentSpec(x=0.0, y=0.0, is_ego=True, lidar=lidar),
            AgentSpec(x=18.0, y=2.0, yaw=np.pi, lidar=lidar),
        ],
        seed=11,
    )


@pytest.fixture
def fast_pipeline() -> PipelineConfig:
    return PipelineConfig(range_m=16.0, resolution=0.8, fit=FitConfig(epochs=15, n_tgt_cap=400))
