"""
Von Mises density and likelihood.
Maximizing the von Mises likelihood of the targets is the same as minimizing the summed
cos loss: NLL = κ · Σ δ_cos(μ, t_k) + N · ln(2π I₀(κ)).
"""

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from modules.circular_module import TWO_PI, wrap
from modules.utils_module import ContractError, DomainError, require_finite

# Series below the crossover, asymptotic expansion above it. At κ = 15 the asymptotic
# series' smallest term is ~e^{-2κ} ≈ 1e-13 relative, well inside the 1e-10 budget.
SERIES_CROSSOVER = 15.0
_SERIES_MAX_TERMS = 500
_ASYMPTOTIC_MAX_TERMS = 200


def _i0_series(kappa: float) -> float:
    # Σ (κ/2)^{2m} / (m!)², all terms positive
    q = 0.25 * kappa * kappa
    term = 1.0
    total = 1.0
    for m in range(1, _SERIES_MAX_TERMS):
        term *= q / (m * m)
        total += term
        if term < total * 1e-17:
            break
    return total


def _i0_asymptotic_factor(kappa: float) -> float:
    """1 + 1/(8κ) + 9/(128κ²) + ..., truncated at the smallest term"""
    term = 1.0
    total = 1.0
    for k in range(_ASYMPTOTIC_MAX_TERMS):
        nxt = term * (2 * k + 1) ** 2 / (8.0 * (k + 1) * kappa)
        if nxt >= term or nxt < total * 1e-17:
            break
        term = nxt
        total += term
    return total


def bessel_i0(kappa: float) -> float:
    """Modified Bessel function of the first kind, order 0"""
    require_finite(kappa, "kappa")
    if kappa < 0:
        raise DomainError(f"bessel_i0 needs kappa >= 0, got {kappa}")
    if kappa <= SERIES_CROSSOVER:
        return _i0_series(kappa)
    return math.exp(kappa) / math.sqrt(TWO_PI * kappa) * _i0_asymptotic_factor(kappa)


def log_bessel_i0(kappa: float) -> float:
    """ln I₀(κ) without overflowing for large κ"""
    require_finite(kappa, "kappa")
    if kappa < 0:
        raise DomainError(f"log_bessel_i0 needs kappa >= 0, got {kappa}")
    if kappa <= SERIES_CROSSOVER:
        return math.log(_i0_series(kappa))
    return kappa - 0.5 * math.log(TWO_PI * kappa) + math.log(_i0_asymptotic_factor(kappa))


@dataclass(frozen=True)
class VonMises:
    mu: float
    kappa: float

    def __post_init__(self):
        require_finite(self.mu, "mu")
        require_finite(self.kappa, "kappa")
        if self.kappa <= 0:
            raise DomainError(f"kappa must be > 0, got {self.kappa}")
        object.__setattr__(self, "mu", wrap(self.mu))

    def log_normalizer(self) -> float:
        """ln(2π I₀(κ))"""
        return math.log(TWO_PI) + log_bessel_i0(self.kappa)


def pdf(d: VonMises, t):
    """Density at t (scalar or array)"""
    t = np.asarray(t, dtype=np.float64)
    density = np.exp(d.kappa * np.cos(t - d.mu) - d.log_normalizer())
    return float(density) if density.ndim == 0 else density


def neg_log_likelihood(d: VonMises, samples: Sequence[float]) -> float:
    """−Σ ln pdf = −κ Σ cos(t_k − μ) + N ln(2π I₀(κ))"""
    t = np.asarray(samples, dtype=np.float64).ravel()
    if t.size == 0:
        raise ContractError("neg_log_likelihood needs at least one sample")
    return -d.kappa * math.fsum(np.cos(t - d.mu)) + t.size * d.log_normalizer()
