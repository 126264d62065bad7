"""(epsilon, delta) accounting over finite transcript distributions.

For finite spaces the optimal additive slack at a given budget is exactly

    delta(eps) = sum over transcripts of max(0, P(T) - e^eps * Q(T))

(the worst event is the set of transcripts where P exceeds e^eps * Q), and
the tightest pure budget is the largest absolute log ratio over the support.
Probabilities stay exact rationals; e^eps is evaluated once in binary64 and
then treated exactly, so terms where Q(T) == 0 carry no rounding at all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from ..errors import ParameterError
from .exact import AdjacentPair, FactorTable, TraceDistribution, factor_table

__all__ = ["DpReport", "delta_at", "dp_report", "epsilon_hat"]


def delta_at(dist_p: TraceDistribution, dist_q: TraceDistribution, eps: float) -> Fraction:
    """Exact optimal delta for P against Q at budget eps (one direction)."""
    factor = Fraction(math.exp(eps))
    total = Fraction(0)
    for trace in dist_p.support() | dist_q.support():
        gap = dist_p.prob(trace) - factor * dist_q.prob(trace)
        if gap > 0:
            total += gap
    return total


def delta_at_symmetric(dist_p: TraceDistribution, dist_q: TraceDistribution, eps: float) -> Fraction:
    """max of the two directional deltas: what the DP definition demands."""
    return max(delta_at(dist_p, dist_q, eps), delta_at(dist_q, dist_p, eps))


def epsilon_hat(dist_p: TraceDistribution, dist_q: TraceDistribution) -> tuple[float, Fraction | None]:
    """Worst absolute log ratio over the joint support.

    Returns (eps, max_ratio). eps is inf (and max_ratio None) when one
    distribution puts mass where the other has none.
    """
    best: Fraction | None = None
    for trace in dist_p.support() | dist_q.support():
        p, q = dist_p.prob(trace), dist_q.prob(trace)
        if p == 0 or q == 0:
            return math.inf, None
        ratio = p / q if p >= q else q / p
        if best is None or ratio > best:
            best = ratio
    if best is None:
        return 0.0, Fraction(1)
    return math.log(best), best


@dataclass
class DpReport:
    """Privacy accounting for one adjacent pair of transcript distributions."""

    epsilon_hat: float
    max_ratio: Fraction | None
    delta_curve: list[tuple[float, Fraction]]
    exact: bool
    factor_summary: dict | None = None

    def delta_at_epsilon(self, eps: float) -> Fraction:
        for grid_eps, delta in self.delta_curve:
            if grid_eps == eps:
                return delta
        raise ParameterError(f"epsilon {eps} not on the report grid")

    def to_json_dict(self) -> dict:
        out = {
            "epsilon_hat": self.epsilon_hat if math.isfinite(self.epsilon_hat) else "inf",
            "max_ratio": None if self.max_ratio is None else str(self.max_ratio),
            "exact": self.exact,
            "delta_curve": [
                {"epsilon": eps, "delta": float(delta), "delta_exact": str(delta)}
                for eps, delta in self.delta_curve
            ],
        }
        if self.factor_summary is not None:
            out["factors"] = self.factor_summary
        return out


def dp_report(
    dist_p: TraceDistribution,
    dist_q: TraceDistribution,
    eps_grid: Sequence[float] | None = None,
    pair: AdjacentPair | None = None,
) -> DpReport:
    """Full report: epsilon_hat, symmetric delta curve, optional factor table.

    ``eps_grid`` defaults to 0, 1 and the measured epsilon_hat (when finite).
    """
    if not dist_p.same_instance(dist_q):
        raise ParameterError("distributions come from different instances")
    eps, ratio = epsilon_hat(dist_p, dist_q)
    if eps_grid is None:
        eps_grid = [0.0, 1.0] + ([eps] if math.isfinite(eps) and eps > 1.0 else [])
    curve = [(float(e), delta_at_symmetric(dist_p, dist_q, float(e))) for e in eps_grid]
    summary = None
    if pair is not None:
        table = factor_table(dist_p, dist_q, pair)
        summary = _summarize_factors(table)
    return DpReport(
        epsilon_hat=eps,
        max_ratio=ratio,
        delta_curve=curve,
        exact=dist_p.exact and dist_q.exact,
        factor_summary=summary,
    )


def _summarize_factors(table: FactorTable) -> dict:
    max_down = Fraction(0)
    max_over = Fraction(0)
    for ratios in table.rows.values():
        for fd, fo in ratios:
            max_down = max(max_down, fd, 1 / fd)
            max_over = max(max_over, fo, 1 / fo)
    return {
        "changed_positions": sorted(table.pair.changed_positions()),
        "max_download_factor": str(max_down),
        "max_overwrite_factor": str(max_over),
        "off_position_violations": len(table.off_position_violations()),
        "bound_violations": len(table.bound_violations()),
    }
