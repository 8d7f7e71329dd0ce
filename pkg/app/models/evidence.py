from dataclasses import dataclass
from typing import Tuple

import numpy as np

FG, BG = 0, 1
N_CLASSES = 2


@dataclass(frozen=True)
class CenterPoint:
    """One map-resident center: position, per-class evidence output and per-class, per-axis variance output."""

    pos: Tuple[float, float]
    o_cls: Tuple[float, float]
    # ((fg_x, fg_y), (bg_x, bg_y))
    o_var: Tuple[Tuple[float, float], Tuple[float, float]]

    def __post_init__(self):
        if min(self.o_cls) < 0 or min(min(v) for v in self.o_var) < 0:
            raise ValueError("center outputs must be non-negative")


@dataclass(frozen=True, eq=False)
class DirichletResult:
    alpha: np.ndarray
    S: float
    p_hat: np.ndarray
    u: float
    observed: bool

    @property
    def K(self) -> int:
        return int(self.alpha.shape[0])


def dirichlet_params(evidence: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """alpha, S, p_hat and u for evidence of shape (..., K)."""
    evidence = np.asarray(evidence, dtype=np.float64)
    alpha = evidence + 1.0
    strength = alpha.sum(axis=-1)
    p_hat = alpha / strength[..., None]
    u = evidence.shape[-1] / strength
    return alpha, strength, p_hat, u


def dirichlet_result(evidence: np.ndarray, observed: bool) -> DirichletResult:
    evidence = np.asarray(evidence, dtype=np.float64).reshape(-1)
    if not observed:
        evidence = np.zeros_like(evidence)
    alpha, strength, p_hat, u = dirichlet_params(evidence)
    return DirichletResult(alpha=alpha, S=float(strength), p_hat=p_hat, u=float(u), observed=bool(observed))
