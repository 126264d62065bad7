"""Exact checks for the stateless retrieval scheme.

:func:`enumerate_ir` rebuilds the transcript distribution combinatorially
(branching on hit/miss and enumerating subsets), independent of the closed
two-case formula, so the two can be checked against each other. The
membership inequalities (both directions, over all index triples) come from
the closed-form membership probabilities and run exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations

from ..dpir import DpIrParams, achieved_epsilon, ir_transcript_prob, membership_prob
from ..errors import SizeError
from .exact import TraceDistribution

__all__ = ["Lemma1Report", "enumerate_ir", "lemma1_check", "max_transcript_ratio"]

MAX_ENUM_TRANSCRIPTS = 500_000


def enumerate_ir(params: DpIrParams, queried: int) -> TraceDistribution:
    """Exact transcript distribution for one query, by direct enumeration."""
    n, k = params.n, params.k
    if math.comb(n, k) > MAX_ENUM_TRANSCRIPTS:
        raise SizeError(f"C({n},{k}) transcripts exceed the enumeration budget")
    alpha = params.alpha_fraction
    probs: dict[tuple[int, ...], Fraction] = {}
    # Miss branch: a uniform k-subset of [n].
    miss_weight = alpha / math.comb(n, k)
    for subset in combinations(range(1, n + 1), k):
        probs[subset] = miss_weight
    # Hit branch: the target joined by a uniform (k-1)-subset of the rest.
    hit_weight = (1 - alpha) / math.comb(n - 1, k - 1)
    others = [j for j in range(1, n + 1) if j != queried]
    for extra in combinations(others, k - 1):
        subset = tuple(sorted((queried,) + extra))
        probs[subset] += hit_weight
    return TraceDistribution(
        probs=probs, exact=True, n=n, p=alpha, queries=(queried,)
    )


def max_transcript_ratio(params: DpIrParams) -> Fraction:
    """Exact worst per-transcript probability ratio between two queries.

    Realized when the transcript contains one query's index but not the
    other's: ((1-alpha)/C(n-1,k-1) + alpha/C(n,k)) / (alpha/C(n,k)), which
    simplifies to (1-alpha)*n/(alpha*k) + 1.
    """
    alpha = params.alpha_fraction
    if params.k == params.n:
        return Fraction(1)
    case_in = ir_transcript_prob(params, 1, tuple(range(1, params.k + 1)))
    case_out = ir_transcript_prob(params, params.n, tuple(range(1, params.k + 1)))
    return case_in / case_out


@dataclass
class Lemma1Report:
    """Result of the membership-inequality sweep over all (a, b, c) triples."""

    n: int
    epsilon: float
    delta: Fraction
    triples_checked: int = 0
    violations: list[tuple[int, int, int, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def lemma1_check(params: DpIrParams, epsilon: float | None = None, delta=0) -> Lemma1Report:
    """Verify, for all a, b, c: Pr[c in T(a)] <= e^eps Pr[c in T(b)] + delta,
    and the same with membership negated.

    ``epsilon`` defaults to the scheme's achieved budget. The comparison is
    exact: e^eps enters as a binary64 value treated as a rational.
    """
    if epsilon is None:
        epsilon = achieved_epsilon(params)
    factor = Fraction(math.exp(epsilon))
    delta = Fraction(delta)
    report = Lemma1Report(n=params.n, epsilon=epsilon, delta=delta)
    n = params.n
    inclusion: dict[tuple[int, int], Fraction] = {}
    for a in range(1, n + 1):
        for c in range(1, n + 1):
            inclusion[a, c] = membership_prob(params, a, c)
    for a in range(1, n + 1):
        for b in range(1, n + 1):
            for c in range(1, n + 1):
                report.triples_checked += 1
                p_in_a, p_in_b = inclusion[a, c], inclusion[b, c]
                if p_in_a > factor * p_in_b + delta:
                    report.violations.append((a, b, c, "inclusion"))
                if (1 - p_in_a) > factor * (1 - p_in_b) + delta:
                    report.violations.append((a, b, c, "exclusion"))
    return report
