from enum import IntEnum

import numpy as np


class Stage(IntEnum):
    RAYCAST = 1
    TARGETS = 2
    ANCHORS = 3
    DETECTIONS = 4
    AUGMENT = 5
    CENTERS = 6


def stage_rng(seed: int, stage: Stage, *keys: int) -> np.random.Generator:
    """Generator for one pipeline stage; identical arguments give identical streams."""
    return np.random.default_rng([int(seed), int(stage), *(int(k) for k in keys)])
