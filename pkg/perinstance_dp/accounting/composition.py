"""Composition and group privacy for (ε, δ) budgets; identical for DP and pDP."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from perinstance_dp.errors import ParameterError


@dataclass(frozen=True)
class PdpBudget:
    eps: float
    delta: float

    def __post_init__(self):
        if not self.eps >= 0:
            raise ParameterError(f"eps must be non-negative, got {self.eps}")
        if not 0 <= self.delta < 1:
            raise ParameterError(f"delta must be in [0, 1), got {self.delta}")


def compose_simple(budgets: Sequence[PdpBudget]) -> PdpBudget:
    return PdpBudget(
        eps=math.fsum(b.eps for b in budgets),
        delta=math.fsum(b.delta for b in budgets)
    )


def compose_advanced(eps: float, delta: float, k: int, delta_slack: float) -> PdpBudget:
    """k-fold adaptive composition: ε′ = √(2k ln(1/δ′)) ε + kε(e^ε − 1), δ_total = kδ + δ′."""
    if k < 0:
        raise ParameterError(f"k must be non-negative, got {k}")
    if not 0 < delta_slack < 1:
        raise ParameterError(f"delta_slack must be in (0, 1), got {delta_slack}")
    eps_total = math.sqrt(2.0 * k * math.log(1.0 / delta_slack)) * eps + k * eps * math.expm1(eps)
    return PdpBudget(eps=eps_total, delta=k * delta + delta_slack)


def advanced_composition_crossover(eps: float, delta_slack: float, k_max: int = 100_000) -> int | None:
    """Smallest k for which advanced composition beats k·ε, or None up to k_max."""
    for k in range(1, k_max + 1):
        if compose_advanced(eps, 0.0, k, delta_slack).eps < k * eps:
            return k
    return None


def group_privacy(eps_seq: Sequence[float], delta_seq: Sequence[float]) -> PdpBudget:
    """Protecting a group one member at a time: (Σεᵢ, Σᵢ δᵢ Π_{j<i} e^{εⱼ})."""
    if len(eps_seq) != len(delta_seq):
        raise ParameterError(f"eps and delta sequences differ in length ({len(eps_seq)} vs {len(delta_seq)})")
    delta_total = 0.0
    running_eps = 0.0
    for eps_i, delta_i in zip(eps_seq, delta_seq):
        delta_total += delta_i * math.exp(running_eps)
        running_eps += eps_i
    return PdpBudget(eps=math.fsum(eps_seq), delta=delta_total)
