"""Evidential loss over Dirichlet outputs and its analytic gradient."""
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import special as sp

from app.core.errors import EdlInputError
from app.services.special import digamma, gammaln, trigamma

Reduction = Literal["sum", "mean"]


@dataclass(frozen=True, eq=False)
class EdlBatch:
    alpha: np.ndarray
    y: np.ndarray
    epoch: float
    a_max: float

    def __post_init__(self):
        alpha = np.atleast_2d(np.asarray(self.alpha, dtype=np.float64))
        y = np.atleast_2d(np.asarray(self.y, dtype=np.float64))
        if alpha.shape != y.shape:
            raise EdlInputError(f"alpha {alpha.shape} and y {y.shape} differ in shape")
        if alpha.shape[1] < 2:
            raise EdlInputError("need at least two classes")
        if not np.all(np.isfinite(alpha)) or np.any(alpha < 1.0):
            raise EdlInputError("alpha must be finite and >= 1")
        if np.any((y != 0.0) & (y != 1.0)) or np.any(y.sum(axis=1) != 1.0):
            raise EdlInputError("y rows must be one-hot")
        if self.a_max < 1:
            raise EdlInputError("a_max must be >= 1")
        if self.epoch < 0:
            raise EdlInputError("epoch must be >= 0")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return int(self.alpha.shape[0])

    @property
    def k(self) -> int:
        return int(self.alpha.shape[1])

    @property
    def lambda_t(self) -> float:
        return annealing_weight(self.epoch, self.a_max)

    @property
    def alpha_tilde(self) -> np.ndarray:
        return self.alpha * (1.0 - self.y) + self.y


@dataclass(frozen=True)
class LossBreakdown:
    sq_term: float
    var_term: float
    kl_term: float
    lambda_t: float
    total: float


def annealing_weight(epoch: float, a_max: float) -> float:
    return float(min(1.0, epoch / a_max))


def kl_to_flat(alpha_tilde: np.ndarray) -> np.ndarray:
    """KL[Dir(alpha_tilde) || Dir(1)] per row."""
    alpha_tilde = np.atleast_2d(alpha_tilde)
    k = alpha_tilde.shape[1]
    strength = alpha_tilde.sum(axis=1)
    return (
        gammaln(strength)
        - gammaln(alpha_tilde).sum(axis=1)
        - sp.gammaln(k)
        + ((alpha_tilde - 1.0) * (digamma(alpha_tilde) - digamma(strength)[:, None])).sum(axis=1)
    )


def _scale(batch: EdlBatch, reduction: Reduction) -> float:
    return 1.0 / batch.n if reduction == "mean" else 1.0


def edl_loss(batch: EdlBatch, reduction: Reduction = "sum") -> LossBreakdown:
    alpha, y = batch.alpha, batch.y
    strength = alpha.sum(axis=1, keepdims=True)
    p = alpha / strength
    scale = _scale(batch, reduction)

    sq = float(np.sum((y - p) ** 2)) * scale
    var = float(np.sum(p * (1.0 - p) / (strength + 1.0))) * scale
    kl = float(np.sum(kl_to_flat(batch.alpha_tilde))) * scale
    lam = batch.lambda_t
    return LossBreakdown(sq_term=sq, var_term=var, kl_term=kl, lambda_t=lam, total=sq + var + lam * kl)


def edl_grad(batch: EdlBatch, reduction: Reduction = "sum") -> np.ndarray:
    """d(total)/d(alpha), shape (N, K)."""
    alpha, y = batch.alpha, batch.y
    k = batch.k
    strength = alpha.sum(axis=1, keepdims=True)
    p = alpha / strength
    q = np.sum(p * p, axis=1, keepdims=True)

    d_sq = (2.0 / strength) * ((p - y) - np.sum((p - y) * p, axis=1, keepdims=True))
    d_var = -(2.0 / strength) * (p - q) / (strength + 1.0) - (1.0 - q) / (strength + 1.0) ** 2

    a_t = batch.alpha_tilde
    s_t = a_t.sum(axis=1, keepdims=True)
    d_kl = (1.0 - y) * ((a_t - 1.0) * trigamma(a_t) - (s_t - k) * trigamma(s_t))

    return (d_sq + d_var + batch.lambda_t * d_kl) * _scale(batch, reduction)
