"""Uncertainty-gated exchange of evidence between agents.

The ego requests cells it is unsure about, each cooperative agent answers
with the requested cells it is sure about, and the answer travels as a CPM
payload whose evidence is added to the ego grid.
"""
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from app.core.errors import CpmDecodeError, CpmErrorKind, FrameMismatchError
from app.models.cpm import CpmHeader, CpmPayload
from app.models.grid import CellMask, EvidenceGrid, UncertaintyGrid
from app.services.metrics import EvalInputs, iou
from models import Layer, Strategy

logger = logging.getLogger(__name__)

MAGIC = b"CPM1"
VERSION = 1
HEADER = struct.Struct("<4sBIIBfffHHI")
RECORD_DTYPE = np.dtype([("col", "<u2"), ("row", "<u2"), ("e_fg", "<f4"), ("e_bg", "<f4")])
HEADER_SIZE = HEADER.size
RECORD_SIZE = RECORD_DTYPE.itemsize
SWEEP_COLUMNS = ["u_ego", "layer", "baseline_bytes", "selected_bytes", "iou_all", "iou_obs"]


def payload_size(n_cells: int) -> int:
    return HEADER_SIZE + RECORD_SIZE * n_cells


def latency_ms(n_bytes: int, link_mbps: float = 27.0) -> float:
    return n_bytes * 8.0 / (link_mbps * 1e6) * 1e3


# ---------- masks ----------

def request_mask(ego: UncertaintyGrid, u_ego: float) -> CellMask:
    if not 0.0 <= u_ego <= 1.0:
        raise ValueError("u_ego must lie in [0, 1]")
    return CellMask(spec=ego.spec, mask=ego.u > u_ego)


def response_mask(
    coop: UncertaintyGrid,
    request: CellMask,
    u_coop: float = 1.0,
    strategy: Strategy = Strategy.ALL,
    road_mask: Optional[CellMask] = None,
) -> CellMask:
    coop.spec.require_same(request.spec)
    mask = request.mask & coop.observed & (coop.u < u_coop)
    if strategy is Strategy.ROAD:
        if road_mask is None:
            raise ValueError("road strategy needs a road mask")
        coop.spec.require_same(road_mask.spec)
        mask = mask & road_mask.mask
    return CellMask(spec=coop.spec, mask=mask)


# ---------- codec ----------

def select_payload(grid: EvidenceGrid, mask: CellMask, header: CpmHeader) -> CpmPayload:
    """Masked cells of grid as a payload, row-major, evidence at wire precision."""
    grid.spec.require_same(mask.spec)
    grid.spec.require_same(header.grid_spec())
    rows, cols = np.nonzero(mask.mask)
    return CpmPayload(
        header=header,
        cols=cols.astype(np.uint16),
        rows=rows.astype(np.uint16),
        e_fg=grid.e_fg[rows, cols].astype(np.float32),
        e_bg=grid.e_bg[rows, cols].astype(np.float32),
    )


def encode_payload(payload: CpmPayload) -> bytes:
    h = payload.header
    records = np.empty(payload.n_cells, dtype=RECORD_DTYPE)
    records["col"] = payload.cols
    records["row"] = payload.rows
    records["e_fg"] = payload.e_fg
    records["e_bg"] = payload.e_bg
    head = HEADER.pack(
        MAGIC,
        VERSION,
        h.agent_id,
        h.frame_id,
        h.layer.wire_code,
        h.origin_x,
        h.origin_y,
        h.cell_size,
        h.width,
        h.height,
        payload.n_cells,
    )
    return head + records.tobytes()


def encode_cpm(grid: EvidenceGrid, mask: CellMask, header: CpmHeader) -> bytes:
    return encode_payload(select_payload(grid, mask, header))


def decode_cpm(data: bytes) -> CpmPayload:
    data = bytes(data)
    if data[:4] != MAGIC[: len(data[:4])]:
        raise CpmDecodeError(CpmErrorKind.BAD_MAGIC, f"expected {MAGIC!r}, got {data[:4]!r}")
    if len(data) < HEADER_SIZE:
        raise CpmDecodeError(CpmErrorKind.TRUNCATED, f"{len(data)} bytes is shorter than the {HEADER_SIZE}-byte header")
    _, version, agent_id, frame_id, layer_code, ox, oy, res, width, height, n_cells = HEADER.unpack_from(data)
    if version != VERSION:
        raise CpmDecodeError(CpmErrorKind.BAD_VERSION, f"unsupported version {version}")
    if layer_code not in (0, 1):
        raise CpmDecodeError(CpmErrorKind.BAD_LAYER, f"unknown layer code {layer_code}")
    expected = payload_size(n_cells)
    if len(data) < expected:
        raise CpmDecodeError(CpmErrorKind.TRUNCATED, f"{n_cells} cells need {expected} bytes, got {len(data)}")
    if len(data) > expected:
        raise CpmDecodeError(CpmErrorKind.TRAILING_BYTES, f"{len(data) - expected} bytes after the last record")
    if not (res > 0 and width > 0 and height > 0):
        raise CpmDecodeError(CpmErrorKind.BAD_CELL, "grid frame has no cells")

    records = np.frombuffer(data, dtype=RECORD_DTYPE, count=n_cells, offset=HEADER_SIZE)
    cols, rows = records["col"].copy(), records["row"].copy()
    e_fg, e_bg = records["e_fg"].copy(), records["e_bg"].copy()
    if np.any(cols >= width) or np.any(rows >= height):
        raise CpmDecodeError(CpmErrorKind.BAD_CELL, "cell index outside the grid")
    flat = rows.astype(np.int64) * width + cols
    if len(np.unique(flat)) != len(flat):
        raise CpmDecodeError(CpmErrorKind.BAD_CELL, "duplicate cell")
    if not (np.all(np.isfinite(e_fg)) and np.all(np.isfinite(e_bg))) or np.any(e_fg < 0) or np.any(e_bg < 0):
        raise CpmDecodeError(CpmErrorKind.BAD_CELL, "evidence must be finite and non-negative")

    header = CpmHeader(agent_id, frame_id, Layer.from_wire(layer_code), ox, oy, res, width, height)
    return CpmPayload(header=header, cols=cols, rows=rows, e_fg=e_fg, e_bg=e_bg)


# ---------- fusion ----------

def fuse(ego: EvidenceGrid, payload: CpmPayload) -> EvidenceGrid:
    """Add received evidence to the ego grid; received cells become observed."""
    ego.spec.require_same(payload.header.grid_spec())
    evidence = ego.evidence.copy()
    observed = ego.observed.copy()
    rows, cols = payload.rows.astype(np.int64), payload.cols.astype(np.int64)
    evidence[rows, cols, 0] += payload.e_fg.astype(np.float64)
    evidence[rows, cols, 1] += payload.e_bg.astype(np.float64)
    observed[rows, cols] = True
    return EvidenceGrid(spec=ego.spec, evidence=evidence, observed=observed)


def fuse_many(ego: EvidenceGrid, payloads: Iterable[CpmPayload]) -> EvidenceGrid:
    ordered = sorted(payloads, key=lambda p: (p.header.agent_id, p.header.frame_id, p.header.layer.wire_code))
    fused = ego
    for payload in ordered:
        fused = fuse(fused, payload)
    return fused


# ---------- selection runs ----------

@dataclass(frozen=True, eq=False)
class CoopGrid:
    agent_id: int
    grid: EvidenceGrid
    road_mask: Optional[CellMask] = None


@dataclass(frozen=True, eq=False)
class PreparedLayer:
    """Everything a selection run needs for one layer, all on the ego grid frame."""

    layer: Layer
    ego: EvidenceGrid
    coops: List[CoopGrid]
    gt: np.ndarray

    def __post_init__(self):
        for c in self.coops:
            if not c.grid.spec.same_frame(self.ego.spec):
                raise FrameMismatchError(f"agent {c.agent_id} grid is not on the ego frame")


@dataclass(frozen=True, eq=False)
class SelectionResult:
    request: CellMask
    messages: Dict[int, bytes]
    payloads: List[CpmPayload]
    fused: EvidenceGrid

    @property
    def total_bytes(self) -> int:
        return sum(len(m) for m in self.messages.values())


def _select(
    prepared: PreparedLayer,
    request: CellMask,
    u_coop: float,
    strategy: Strategy,
    frame_id: int,
) -> SelectionResult:
    messages: Dict[int, bytes] = {}
    payloads: List[CpmPayload] = []
    for coop in prepared.coops:
        response = response_mask(coop.grid.uncertainty(), request, u_coop, strategy, coop.road_mask)
        if response.count == 0:
            continue
        header = CpmHeader.for_grid(coop.grid.spec, coop.agent_id, frame_id, prepared.layer)
        message = encode_cpm(coop.grid, response, header)
        messages[coop.agent_id] = message
        payloads.append(decode_cpm(message))
    return SelectionResult(
        request=request, messages=messages, payloads=payloads, fused=fuse_many(prepared.ego, payloads)
    )


def run_selection(
    prepared: PreparedLayer,
    u_ego: float,
    u_coop: float = 1.0,
    strategy: Strategy = Strategy.ALL,
    frame_id: int = 0,
) -> SelectionResult:
    """One request/response round; agents with nothing to send stay silent."""
    return _select(prepared, request_mask(prepared.ego.uncertainty(), u_ego), u_coop, strategy, frame_id)


def run_baseline(
    prepared: PreparedLayer,
    u_coop: float = 1.0,
    strategy: Strategy = Strategy.ALL,
    frame_id: int = 0,
) -> SelectionResult:
    """Every cooperative agent shares every cell it is sure about, unrequested."""
    everything = CellMask(spec=prepared.ego.spec, mask=np.ones(prepared.ego.spec.shape, dtype=bool))
    return _select(prepared, everything, u_coop, strategy, frame_id)


# ---------- sweep ----------

@dataclass(frozen=True)
class SweepRow:
    u_ego: float
    layer: Layer
    baseline_bytes: int
    selected_bytes: int
    iou_all: float
    iou_obs: float


@dataclass(frozen=True)
class LayerSummary:
    layer: Layer
    ego_iou_all: float
    ego_iou_obs: float
    baseline_iou_all: float
    baseline_iou_obs: float
    baseline_bytes: int
    baseline_latency_ms: float


@dataclass(frozen=True)
class SweepTable:
    rows: List[SweepRow] = field(default_factory=list)
    summaries: List[LayerSummary] = field(default_factory=list)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(r.u_ego, r.layer.value, r.baseline_bytes, r.selected_bytes, r.iou_all, r.iou_obs) for r in self.rows],
            columns=SWEEP_COLUMNS,
        )

    def rows_for(self, layer: Layer) -> List[SweepRow]:
        return [r for r in self.rows if r.layer is layer]


def evaluate(grid: EvidenceGrid, gt: np.ndarray, u_thr: float):
    inputs = EvalInputs.from_raster(grid.raster(), gt, u_thr)
    return iou(inputs, "all"), iou(inputs, "obs")


def sweep(
    prepared: Sequence[PreparedLayer],
    u_ego_values: Sequence[float],
    strategy: Strategy = Strategy.ALL,
    u_coop: float = 1.0,
    u_thr: float = 1.0,
    link_mbps: float = 27.0,
) -> SweepTable:
    """Selection run per threshold and layer on already prepared grids."""
    rows: List[SweepRow] = []
    summaries: List[LayerSummary] = []
    for layer in prepared:
        base = run_baseline(layer, u_coop, strategy)
        ego_all, ego_obs = evaluate(layer.ego, layer.gt, u_thr)
        base_all, base_obs = evaluate(base.fused, layer.gt, u_thr)
        summaries.append(
            LayerSummary(
                layer=layer.layer,
                ego_iou_all=ego_all,
                ego_iou_obs=ego_obs,
                baseline_iou_all=base_all,
                baseline_iou_obs=base_obs,
                baseline_bytes=base.total_bytes,
                baseline_latency_ms=latency_ms(base.total_bytes, link_mbps),
            )
        )
        for u_ego in u_ego_values:
            sel = run_selection(layer, u_ego, u_coop, strategy)
            iou_all, iou_obs = evaluate(sel.fused, layer.gt, u_thr)
            rows.append(SweepRow(u_ego, layer.layer, base.total_bytes, sel.total_bytes, iou_all, iou_obs))
            logger.info(
                "%s u_ego=%.3g: %d of %d bytes, IoU all %.4f obs %.4f",
                layer.layer.value,
                u_ego,
                sel.total_bytes,
                base.total_bytes,
                iou_all,
                iou_obs,
            )
    return SweepTable(rows=rows, summaries=summaries)


def write_sweep(table: SweepTable, path: Union[str, Path]) -> Path:
    path = Path(path)
    table.frame().to_csv(path, index=False, float_format="%.10g")
    return path
