"""The always-fetch-the-target scheme: the audit suite's negative control.

The scheme downloads the queried block with probability 1 and every other
block independently with probability 1/n. It looks private (every block is
touched with positive probability) but the event "the target was NOT
downloaded" has probability 0 under the real query and (n-1)/n under any
other query, so no finite budget can close the gap: the optimal additive
slack is at least (n-1)/n at every epsilon. All checks here are exact.
"""

from __future__ import annotations

from fractions import Fraction
from itertools import combinations

from ..errors import ParameterError, SizeError
from .exact import TraceDistribution

__all__ = [
    "strawman_delta_lower_bound",
    "strawman_exact_distribution",
    "strawman_membership_distribution",
    "strawman_membership_prob",
    "strawman_query",
]

MAX_EXACT_N = 16


def strawman_query(n: int, index: int, rng) -> tuple[int, ...]:
    """Sample one download set: the target plus Bernoulli(1/n) extras."""
    if not 1 <= index <= n:
        raise ParameterError(f"index {index} out of range [1, {n}]")
    chosen = [j for j in range(1, n + 1) if j == index or rng.randrange(n) == 0]
    return tuple(chosen)


def strawman_membership_prob(n: int, queried: int, member: int) -> Fraction:
    """Exact Pr[member downloaded | query = queried]."""
    if member == queried:
        return Fraction(1)
    return Fraction(1, n)


def strawman_membership_distribution(n: int, queried: int, member: int) -> TraceDistribution:
    """Two-event coarsening (member in / not in the set) of the transcript.

    Any coarsening only lowers the optimal delta, so a bound proved on this
    distribution holds for the full transcript space; it makes the n = 100
    check exact without enumerating 2**99 sets.
    """
    inside = strawman_membership_prob(n, queried, member)
    probs = {
        ((1, member),): inside,       # member was downloaded
        ((0, member),): 1 - inside,   # member was not downloaded
    }
    return TraceDistribution(
        probs=probs, exact=True, n=n, p=Fraction(1, n), queries=(queried,)
    )


def strawman_exact_distribution(n: int, queried: int) -> TraceDistribution:
    """Full exact distribution over download sets (small n only)."""
    if n > MAX_EXACT_N:
        raise SizeError(f"full enumeration limited to n <= {MAX_EXACT_N}")
    if not 1 <= queried <= n:
        raise ParameterError(f"index {queried} out of range [1, {n}]")
    others = [j for j in range(1, n + 1) if j != queried]
    include = Fraction(1, n)
    probs: dict = {}
    for size in range(len(others) + 1):
        weight = include ** size * (1 - include) ** (len(others) - size)
        for extra in combinations(others, size):
            members = tuple(sorted((queried,) + extra))
            probs[members] = weight
    return TraceDistribution(
        probs=probs, exact=True, n=n, p=include, queries=(queried,)
    )


def strawman_delta_lower_bound(n: int) -> Fraction:
    """The closed-form floor (n-1)/n on delta at any finite epsilon."""
    return Fraction(n - 1, n)
