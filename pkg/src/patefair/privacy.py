"""Renyi-DP accounting for Gaussian noisy-argmax voting and conversion to (eps, delta)-DP.

Each released label (hard or soft) is one Gaussian-mechanism query on the
vote-count vector, whose L2 sensitivity is 2 (one teacher moving its vote).
A query costs ``gamma / sigma^2`` at order ``gamma``; ``m`` queries add up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SENSITIVITY = 2.0


class PrivacyError(ValueError):
    pass


@dataclass(frozen=True)
class PrivacyLedger:
    sigma: float
    query_count: int
    delta: float = 1e-5
    sensitivity: float = SENSITIVITY

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise PrivacyError(f"sigma must be positive, got {self.sigma}")
        if self.query_count < 0:
            raise PrivacyError("query_count must be nonnegative")
        if not 0.0 < self.delta < 1.0:
            raise PrivacyError(f"delta must be in (0, 1), got {self.delta}")
        if self.sensitivity != SENSITIVITY:
            raise PrivacyError("vote-count sensitivity is fixed at 2")


@dataclass(frozen=True)
class RdpPoint:
    gamma: float
    epsilon_rdp: float


def rdp_per_query(sigma: float, gamma: float) -> float:
    if not sigma > 0:
        raise PrivacyError(f"sigma must be positive, got {sigma}")
    if gamma < 1:
        raise PrivacyError(f"RDP order must be >= 1, got {gamma}")
    return gamma / sigma**2


def compose(ledger: PrivacyLedger, gamma: float) -> float:
    return ledger.query_count * rdp_per_query(ledger.sigma, gamma)


def rdp_to_dp(gamma: float, eps_rdp: float, delta: float) -> float:
    if not gamma > 1:
        raise PrivacyError(f"conversion needs gamma > 1, got {gamma}")
    if not 0.0 < delta < 1.0:
        raise PrivacyError(f"delta must be in (0, 1), got {delta}")
    return eps_rdp + math.log(1.0 / delta) / (gamma - 1.0)


def epsilon_at(ledger: PrivacyLedger, gamma: float) -> float:
    return rdp_to_dp(gamma, compose(ledger, gamma), ledger.delta)


def min_epsilon(ledger: PrivacyLedger) -> tuple[float, float]:
    """Smallest (eps, delta)-DP epsilon over RDP orders, and the order attaining it.

    ``eps(gamma) = m gamma / sigma^2 + log(1/delta) / (gamma - 1)`` is convex
    on ``gamma > 1`` with minimizer ``1 + sigma * sqrt(log(1/delta) / m)``.
    With no queries the infimum 0 is approached as ``gamma -> inf``.
    """
    m = ledger.query_count
    if m == 0:
        return 0.0, math.inf
    gamma = 1.0 + ledger.sigma * math.sqrt(math.log(1.0 / ledger.delta) / m)
    return epsilon_at(ledger, gamma), gamma


def min_epsilon_grid(ledger: PrivacyLedger, points: int = 200_001) -> tuple[float, float]:
    """Brute-force minimum over a dense log-spaced grid of orders (cross-check)."""
    if ledger.query_count == 0:
        return 0.0, math.inf
    _, g_star = min_epsilon(ledger)
    hi = max(10.0 * g_star, 1e3)
    gammas = 1.0 + np.logspace(-6, math.log10(hi), points)
    eps = ledger.query_count * gammas / ledger.sigma**2 + math.log(1.0 / ledger.delta) / (gammas - 1.0)
    i = int(np.argmin(eps))
    # refine around the best grid point
    lo, up = gammas[max(i - 1, 0)], gammas[min(i + 1, points - 1)]
    fine = np.linspace(lo, up, 10_001)
    eps_f = ledger.query_count * fine / ledger.sigma**2 + math.log(1.0 / ledger.delta) / (fine - 1.0)
    j = int(np.argmin(eps_f))
    return float(eps_f[j]), float(fine[j])
