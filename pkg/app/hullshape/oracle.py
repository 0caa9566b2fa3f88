"""
Exact finite-n oracle for directional maxima.

The max Y of n i.i.d. variables with CDF F has density n F^{n-1} f, and its
moments are computed by adaptive quadrature. Three laws are covered:

- ``normal``:      N(0, 1)                       (single-point process)
- ``abs_normal``:  |N(0, 1)|, F = 2 Phi - 1      (sup of Brownian motion on [0, 1])
- ``bridge``:      F = 1 - exp(-2 x^2), x >= 0   (sup of the standard Brownian bridge)

All Monte Carlo thresholds in the experiments and the acceptance suite are
derived from these values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy import special
from scipy.integrate import quad

from app.hullshape.models import CovarianceModel

LAWS = ("normal", "abs_normal", "bridge")
MOMENT_POWERS = (1, 2, 4)

# E[max over a grid of mesh h] falls short of E[sup] by about 0.5826 sqrt(h)
# for unit-variance Brownian paths; sqrt(h) bounds it with room to spare.
BIAS_COEFFICIENT = 1.0


@dataclass(frozen=True)
class ExtremeOracle:
    law: str
    n: int
    moments: Dict[int, float]

    @property
    def mean(self) -> float:
        return self.moments[1]

    @property
    def sd(self) -> float:
        return math.sqrt(max(self.moments[2] - self.moments[1] ** 2, 0.0))

    def scaled(self, factor: float) -> "ExtremeOracle":
        """Law of factor * Y (factor > 0)."""
        return ExtremeOracle(self.law, self.n, {p: m * factor ** p for p, m in self.moments.items()})


def _log_cdf_pdf(law: str) -> Tuple[Callable[[float], float], Callable[[float], float], float]:
    if law == "normal":
        return (
            lambda y: float(special.log_ndtr(y)),
            lambda y: -0.5 * y * y - 0.5 * math.log(2.0 * math.pi),
            -math.inf,
        )
    if law == "abs_normal":
        return (
            lambda y: math.log1p(-2.0 * float(special.ndtr(-y))) if y > 0 else -math.inf,
            lambda y: math.log(2.0) - 0.5 * y * y - 0.5 * math.log(2.0 * math.pi),
            0.0,
        )
    if law == "bridge":
        return (
            lambda y: math.log1p(-math.exp(-2.0 * y * y)) if y > 0 else -math.inf,
            lambda y: math.log(4.0 * y) - 2.0 * y * y if y > 0 else -math.inf,
            0.0,
        )
    raise ValueError(f"unknown law {law!r}; expected one of {', '.join(LAWS)}")


def _location(law: str, n: int) -> float:
    """Level exceeded on average once among n draws."""
    if n < 2:
        return 0.5 if law != "normal" else 0.0
    if law == "normal":
        return float(special.ndtri(1.0 - 1.0 / n))
    if law == "abs_normal":
        return float(special.ndtri(1.0 - 0.5 / n))
    return math.sqrt(math.log(n) / 2.0)


@lru_cache(maxsize=256)
def max_moments(law: str, n: int, powers: Tuple[int, ...] = MOMENT_POWERS) -> ExtremeOracle:
    if n < 1:
        raise ValueError("n must be >= 1")
    log_cdf, log_pdf, support_lo = _log_cdf_pdf(law)
    loc = _location(law, n)
    lo = max(support_lo, -10.0)
    hi = loc + 10.0

    def density(y: float) -> float:
        lf = log_pdf(y)
        if lf == -math.inf:
            return 0.0
        if n > 1:
            lc = log_cdf(y)
            if lc == -math.inf:
                return 0.0
            lf += (n - 1) * lc
        return math.exp(math.log(n) + lf)

    breaks = [p for p in (loc - 2.0, loc, loc + 2.0) if lo < p < hi]
    moments: Dict[int, float] = {}
    for p in sorted(set(powers) | {1, 2}):
        value, _ = quad(lambda y: y ** p * density(y), lo, hi, points=breaks, limit=400)
        moments[p] = float(value)
    return ExtremeOracle(law, n, moments)


def law_for(model: CovarianceModel) -> Optional[Tuple[str, float]]:
    """
    (law, unit) such that sup_t <theta, X(t)> = sigma(theta) / unit * Y with Y of that law;
    None when no exact law is known for the model.
    """
    if model.name == "singleton":
        return "normal", 1.0
    if model.name == "bm":
        return "abs_normal", 1.0
    if model.name == "fbb" and abs(model.params.get("H", 0.0) - 0.5) < 1e-15:
        # fbb(1/2) is the Brownian bridge, sigma_max = 1/2
        return "bridge", 0.5
    return None


def oracle_for(model: CovarianceModel, sigma_theta: float, n: int) -> Optional[ExtremeOracle]:
    """Exact law of Z_n = M_n / sqrt(2 ln n) in a direction with limit support sigma_theta."""
    found = law_for(model)
    if found is None or n < 2:
        return None
    law, unit = found
    return max_moments(law, n).scaled(sigma_theta / unit / math.sqrt(2.0 * math.log(n)))


def discretization_allowance(k: int, scale: float = 1.0) -> float:
    """Bound on E[sup] - E[grid max] when local increments over mesh h = 1/k have variance scale^2 h."""
    return BIAS_COEFFICIENT * scale * math.sqrt(1.0 / k)


def empirical_moments(values: np.ndarray, powers: Tuple[int, ...] = MOMENT_POWERS) -> Dict[int, float]:
    v = np.asarray(values, dtype=float)
    return {p: float(np.mean(v ** p)) for p in powers}
