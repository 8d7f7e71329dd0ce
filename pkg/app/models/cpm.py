from dataclasses import dataclass, field

import numpy as np

from app.models.grid import GridSpec
from models import Layer


@dataclass(frozen=True)
class CpmHeader:
    agent_id: int
    frame_id: int
    layer: Layer
    origin_x: float
    origin_y: float
    cell_size: float
    width: int
    height: int

    @classmethod
    def for_grid(cls, spec: GridSpec, agent_id: int, frame_id: int, layer: Layer) -> "CpmHeader":
        ox, oy, res, width, height = spec.wire_frame()
        return cls(agent_id, frame_id, layer, ox, oy, res, width, height)

    def grid_spec(self) -> GridSpec:
        return GridSpec(self.origin_x, self.origin_y, self.cell_size, self.width, self.height)


@dataclass(frozen=True, eq=False)
class CpmPayload:
    """Sparse evidence cells shared by one agent, in row-major order."""

    header: CpmHeader
    cols: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint16))
    rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint16))
    e_fg: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float32))
    e_bg: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float32))

    @property
    def n_cells(self) -> int:
        return int(self.cols.shape[0])

    @property
    def agent_id(self) -> int:
        return self.header.agent_id

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CpmPayload):
            return NotImplemented
        return self.header == other.header and all(
            np.asarray(a).tobytes() == np.asarray(b).tobytes()
            for a, b in (
                (self.cols, other.cols),
                (self.rows, other.rows),
                (self.e_fg, other.e_fg),
                (self.e_bg, other.e_bg),
            )
        )

    __hash__ = None
