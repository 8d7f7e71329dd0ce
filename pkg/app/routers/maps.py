from fastapi import APIRouter

from app.models.evidence import dirichlet_params
from models import DirichletRequest, DirichletResponse

router = APIRouter()


@router.post("/dirichlet", response_model=DirichletResponse)
def dirichlet(payload: DirichletRequest):
    """Dirichlet parameters, expected probabilities and uncertainty for one evidence vector."""
    alpha, strength, p_hat, u = dirichlet_params(payload.evidence)
    return DirichletResponse(
        alpha=alpha.tolist(),
        strength=float(strength),
        p_hat=p_hat.tolist(),
        uncertainty=float(u),
    )
