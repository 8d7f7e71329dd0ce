from typing import Tuple

import numpy as np
from scipy import special as sp

from app.core.errors import SpecialFunctionDomainError


def _check_domain(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if np.any(~np.isfinite(x)) or np.any(x <= 0):
        raise SpecialFunctionDomainError("special functions are defined here for finite x > 0 only")
    return x


def gammaln(x):
    return sp.gammaln(_check_domain(x))


def digamma(x):
    return sp.digamma(_check_domain(x))


def trigamma(x):
    return sp.polygamma(1, _check_domain(x))


def special_functions(x) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(ln Gamma(x), psi(x), psi'(x)) for x > 0, scalar or array."""
    x = _check_domain(x)
    return sp.gammaln(x), sp.digamma(x), sp.polygamma(1, x)
