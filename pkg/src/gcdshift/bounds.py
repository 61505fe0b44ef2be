"""Domain-discrepancy and dependence-based error-bound reporting.

The proxy distance scores how separable two domains are under a binary
classifier (or its complement, whichever errs less); the confidence term is
the finite-sample deviation at confidence 1 - delta; the two bound reports
combine these with the labelled-set error and the dependence score between
the domain and semantic features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "INDEPENDENCE_FLOOR", "BoundsConfig", "BoundReport",
    "proxy_a_distance", "confidence_term", "thm_bounds",
]

# value the pairwise dependence estimator takes under a null (all-zero) critic
INDEPENDENCE_FLOOR = -2.0 * math.log(2.0)


@dataclass
class BoundsConfig:
    delta: float = 0.05            # confidence 1 - delta
    complexity: int | None = None  # hypothesis-class size proxy d; None = domain-head parameter count
    mi_clamp: bool = True          # clamp the dependence score to [0, 1]

    def validate(self) -> None:
        if not (0.0 < self.delta < 1.0):
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.complexity is not None and self.complexity < 1:
            raise ValueError(f"complexity must be positive, got {self.complexity}")


@dataclass
class BoundReport:
    d_hat: float
    confidence: float
    dependence: float      # clamped non-negative dependence score
    e_l: float
    e_u: float
    thm1_rhs: float
    thm2_rhs: float
    thm1_slack: float      # rhs - e_u; negative = violated
    thm2_slack: float
    vacuous: bool          # confidence term undefined (negative radicand)


def proxy_a_distance(err_a: float, err_b: float) -> float:
    """2 * (1 - min over the classifier and its complement of summed errors),
    clamped to [0, 2]."""
    for name, e in (("err_a", err_a), ("err_b", err_b)):
        if not (0.0 <= e <= 1.0):
            raise ValueError(f"{name} must lie in [0, 1], got {e}")
    s = err_a + err_b
    best = min(s, 2.0 - s)  # complement classifier flips both error rates
    return float(min(2.0, max(0.0, 2.0 * (1.0 - best))))


def confidence_term(d: int, m_a: int, m_b: int, delta: float) -> float:
    """4 * max over the two domains of sqrt((d*log(2m) - log(2/delta)) / m).

    Returns inf when either radicand is negative (the bound is vacuous at
    these sample sizes)."""
    if d < 1 or m_a < 1 or m_b < 1:
        raise ValueError(f"d, m_a, m_b must be positive, got {d}, {m_a}, {m_b}")
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    worst = 0.0
    for m in (m_a, m_b):
        rad = (d * math.log(2.0 * m) - math.log(2.0 / delta)) / m
        if rad < 0.0:
            return float("inf")
        worst = max(worst, math.sqrt(rad))
    return 4.0 * worst


def thm_bounds(e_l: float, d_hat: float, confidence: float,
               mi_estimate: float, e_u: float, cfg: BoundsConfig) -> BoundReport:
    """Assemble both bound reports from already-measured quantities.

    thm1_rhs = e_l + d_hat/2 + confidence/2.
    thm2_rhs = e_l + sqrt(dependence), where dependence is the estimator value
    above its null floor, clamped at 0 (and at 1 when cfg.mi_clamp).
    """
    cfg.validate()
    for name, v in (("e_l", e_l), ("e_u", e_u)):
        if not (0.0 <= v <= 1.0):
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    if not (0.0 <= d_hat <= 2.0):
        raise ValueError(f"d_hat must lie in [0, 2], got {d_hat}")

    dep = max(0.0, mi_estimate - INDEPENDENCE_FLOOR)
    if cfg.mi_clamp:
        dep = min(1.0, dep)
    vacuous = math.isinf(confidence)
    thm1 = e_l + d_hat / 2.0 + confidence / 2.0
    thm2 = e_l + math.sqrt(dep)
    return BoundReport(d_hat=d_hat, confidence=confidence, dependence=dep,
                       e_l=e_l, e_u=e_u, thm1_rhs=thm1, thm2_rhs=thm2,
                       thm1_slack=thm1 - e_u, thm2_slack=thm2 - e_u,
                       vacuous=vacuous)
