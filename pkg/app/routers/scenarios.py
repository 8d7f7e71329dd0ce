import logging

from fastapi import APIRouter

from models import Scenario, ScenarioSummary

logger = logging.getLogger(__name__)

router = APIRouter()


@router.post("/validate", response_model=ScenarioSummary)
def validate_scenario(scenario: Scenario):
    """
    Validate a scenario document.
    POST /api/scenarios/validate
    Invalid documents never reach this body: FastAPI answers 422 with the pydantic errors.
    """
    logger.info("scenario ok: %d agents, %d vehicles", len(scenario.agents), len(scenario.vehicles))
    return ScenarioSummary(
        n_roads=len(scenario.roads),
        n_vehicles=len(scenario.vehicles),
        n_agents=len(scenario.agents),
        ego_index=scenario.ego_index,
        seed=scenario.seed,
    )
