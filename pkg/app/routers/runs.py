import logging

from fastapi import APIRouter, HTTPException

from app.core.dependencies import SettingsDep, http_error
from app.services.pipeline import run_sweep
from models import LayerSummaryResponse, SweepRequest, SweepResponse, SweepRowResponse

logger = logging.getLogger(__name__)

router = APIRouter()


@router.post("/sweep", response_model=SweepResponse)
def sweep_run(payload: SweepRequest, settings: SettingsDep):
    """
    Simulate the posted scenario, fit every agent's maps and run the selection sweep.
    POST /api/runs/sweep
    """
    try:
        _, table = run_sweep(
            payload.scenario,
            payload.pipeline,
            payload.u_ego,
            layers=payload.layers,
            strategy=payload.strategy,
            u_coop=payload.u_coop,
            u_thr=payload.u_thr,
            workers=settings.worker_count,
        )
    except HTTPException:
        raise
    except Exception as e:
        logger.warning("sweep failed: %s", e)
        raise http_error(e)

    return SweepResponse(
        rows=[
            SweepRowResponse(
                u_ego=r.u_ego,
                layer=r.layer,
                baseline_bytes=r.baseline_bytes,
                selected_bytes=r.selected_bytes,
                iou_all=r.iou_all,
                iou_obs=r.iou_obs,
            )
            for r in table.rows
        ],
        layers=[
            LayerSummaryResponse(
                layer=s.layer,
                ego_iou_all=s.ego_iou_all,
                ego_iou_obs=s.ego_iou_obs,
                baseline_iou_all=s.baseline_iou_all,
                baseline_iou_obs=s.baseline_iou_obs,
                baseline_bytes=s.baseline_bytes,
            )
            for s in table.summaries
        ],
    )
