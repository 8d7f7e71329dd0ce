import logging

from fastapi import APIRouter, Request

from app.core.dependencies import http_error
from app.core.errors import CpmDecodeError
from app.services.coop import decode_cpm
from models import CpmCellResponse, CpmPayloadResponse

logger = logging.getLogger(__name__)

router = APIRouter()


@router.post("/decode", response_model=CpmPayloadResponse)
async def decode(request: Request):
    """
    Decode a raw CPM body (application/octet-stream).
    POST /api/cpm/decode
    Malformed payloads answer 400 with the decode error kind in the detail.
    """
    body = await request.body()
    try:
        payload = decode_cpm(body)
    except CpmDecodeError as e:
        logger.warning("rejected CPM of %d bytes: %s", len(body), e.kind.value)
        raise http_error(e)

    h = payload.header
    return CpmPayloadResponse(
        agent_id=h.agent_id,
        frame_id=h.frame_id,
        layer=h.layer,
        origin=(h.origin_x, h.origin_y),
        cell_size=h.cell_size,
        width=h.width,
        height=h.height,
        n_cells=payload.n_cells,
        size_bytes=len(body),
        cells=[
            CpmCellResponse(col=int(c), row=int(r), e_fg=float(f), e_bg=float(b))
            for c, r, f, b in zip(payload.cols, payload.rows, payload.e_fg, payload.e_bg)
        ],
    )
