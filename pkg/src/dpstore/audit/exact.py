"""Exact transcript-distribution analysis for the stash DP-RAM.

Three independent routes to the same numbers keep each other honest:

- :func:`enumerate_ram` runs a forward dynamic program over stash-membership
  states, splitting on every branch the query algorithm can take. It never
  consults the closed forms.
- :func:`ram_trace_prob` multiplies the closed-form per-position factors
  (overwrite marginal times download conditional) along a trace.
- the Monte Carlo sampler in :mod:`dpstore.audit.sampling` runs the real
  client.

All arithmetic here is exact: branch weights are integers over a common
denominator per query, so rational stash probabilities come out exact and
lemma checks need no tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from ..dpram import PrevCase, classify_prev_case, download_conditional, overwrite_marginal
from ..errors import ParameterError, SizeError

__all__ = [
    "AdjacentPair",
    "CaseAuditReport",
    "FactorTable",
    "TraceDistribution",
    "enumerate_ram",
    "factor_table",
    "lemma_case_audit",
    "nx_index",
    "position_factors",
    "pr_index",
    "ram_trace_prob",
]

MAX_ENUM_N = 6
MAX_ENUM_LEN = 5
MAX_ENUM_CELLS = 10_000_000

TraceSeq = tuple[tuple[int, int], ...]


@dataclass
class TraceDistribution:
    """Probability map over trace sequences, exact or estimated.

    Estimated distributions carry exact empirical frequencies
    (count / trials as a Fraction) plus the trial count for error bars.
    """

    probs: dict[TraceSeq, Fraction]
    exact: bool
    n: int
    p: Fraction
    queries: tuple[int, ...]
    trials: int | None = None

    def prob(self, trace: TraceSeq) -> Fraction:
        return self.probs.get(trace, Fraction(0))

    def total(self) -> Fraction:
        return sum(self.probs.values(), Fraction(0))

    def support(self) -> set[TraceSeq]:
        return {t for t, pr in self.probs.items() if pr > 0}

    def same_instance(self, other: "TraceDistribution") -> bool:
        return self.n == other.n and self.p == other.p


def pr_index(queries: Sequence[int], j: int) -> int | None:
    """Index of the most recent earlier query to the same block, else None."""
    target = queries[j]
    for i in range(j - 1, -1, -1):
        if queries[i] == target:
            return i
    return None


def nx_index(queries: Sequence[int], j: int) -> int | None:
    """Index of the next later query to the same block, else None."""
    target = queries[j]
    for i in range(j + 1, len(queries)):
        if queries[i] == target:
            return i
    return None


def _normalize_initial_law(
    n: int, p: Fraction, law
) -> tuple[dict[frozenset, int], int]:
    """Return integer weights per initial stash set plus their denominator."""
    if law is None:
        num, den = p.numerator, p.denominator
        weights: dict[frozenset, int] = {}
        # Product Bernoulli(p) over the n blocks.
        for mask in range(1 << n):
            members = frozenset(i + 1 for i in range(n) if mask >> i & 1)
            weights[members] = num ** len(members) * (den - num) ** (n - len(members))
        return weights, den ** n
    if isinstance(law, (set, frozenset, list, tuple)):
        members = frozenset(law)
        if not all(1 <= i <= n for i in members):
            raise ParameterError("initial stash members must lie in [1, n]")
        return {members: 1}, 1
    if isinstance(law, Mapping):
        entries = {frozenset(k): Fraction(v) for k, v in law.items()}
        if sum(entries.values()) != 1:
            raise ParameterError("initial stash law must sum to 1")
        den = 1
        for v in entries.values():
            den = den * v.denominator // _gcd(den, v.denominator)
        return {k: int(v * den) for k, v in entries.items()}, den
    raise ParameterError(f"unsupported initial stash law {law!r}")


def _gcd(a: int, b: int) -> int:
    while b:
        a, b = b, a % b
    return a


def enumerate_ram(
    n: int,
    p,
    queries: Sequence[int],
    initial_stash_law=None,
) -> TraceDistribution:
    """Exact distribution of the full trace sequence for ``queries``.

    ``initial_stash_law`` defaults to the setup's product-Bernoulli(p) law;
    a set pins the initial stash exactly, a mapping {set: prob} gives any
    custom law. Raises :class:`SizeError` beyond the documented instance
    bounds (n <= 6, length <= 5, < 10**7 table cells).
    """
    p = Fraction(p)
    if not 0 < p <= 1:
        raise ParameterError(f"stash probability must be in (0, 1], got {p}")
    queries = tuple(queries)
    if not all(1 <= q <= n for q in queries):
        raise ParameterError("queries must index blocks in [1, n]")
    if n > MAX_ENUM_N or len(queries) > MAX_ENUM_LEN:
        raise SizeError(
            f"instance (n={n}, l={len(queries)}) exceeds enumerable bounds "
            f"(n <= {MAX_ENUM_N}, l <= {MAX_ENUM_LEN})"
        )
    if (2 ** n) * (n * n) ** len(queries) > MAX_ENUM_CELLS:
        raise SizeError("state space exceeds the enumeration budget")

    init_weights, init_den = _normalize_initial_law(n, p, initial_stash_law)
    num, den = p.numerator, p.denominator
    no_stash_weight = (den - num) * n  # scaled to the per-query denominator

    # level: trace prefix -> {stash set -> integer weight}.
    level: dict[TraceSeq, dict[frozenset, int]] = {(): dict(init_weights)}
    for q in queries:
        nxt: dict[TraceSeq, dict[frozenset, int]] = {}
        for trace, states in level.items():
            for stash, weight in states.items():
                hit = q in stash
                base = stash - {q} if hit else stash
                with_q = base | {q}
                # Download branch: uniform decoy on a hit, forced cell else.
                d_choices = (
                    [(d, weight) for d in range(1, n + 1)]
                    if hit
                    else [(q, weight * n)]
                )
                for d, wd in d_choices:
                    for o in range(1, n + 1):
                        # Overwrite stashes the block, decoy index o.
                        _bump(nxt, trace + ((d, o),), with_q, wd * num)
                    # No stash: the real cell is rewritten in place.
                    _bump(nxt, trace + ((d, q),), base, wd * no_stash_weight)
        level = nxt

    denominator = init_den * (den * n * n) ** len(queries)
    probs = {
        trace: Fraction(sum(states.values()), denominator)
        for trace, states in level.items()
    }
    return TraceDistribution(probs=probs, exact=True, n=n, p=p, queries=queries)


def _bump(table, trace: TraceSeq, stash: frozenset, weight: int) -> None:
    states = table.get(trace)
    if states is None:
        states = {}
        table[trace] = states
    states[stash] = states.get(stash, 0) + weight


def position_factors(
    n: int, p: Fraction, queries: Sequence[int], trace: TraceSeq
) -> list[tuple[Fraction, Fraction]]:
    """Closed-form (download conditional, overwrite marginal) per position."""
    p = Fraction(p)
    factors = []
    for j, q in enumerate(queries):
        d, o = trace[j]
        prev = pr_index(queries, j)
        prev_o = trace[prev][1] if prev is not None else None
        case = classify_prev_case(q, prev_o)
        factors.append(
            (download_conditional(n, p, case, q, d), overwrite_marginal(n, p, q, o))
        )
    return factors


def ram_trace_prob(n: int, p, queries: Sequence[int], trace: TraceSeq) -> Fraction:
    """Closed-form probability of a trace: product of per-position factors.

    This is the factorization route; :func:`enumerate_ram` must agree with it
    on every trace, which the test suite asserts.
    """
    result = Fraction(1)
    for down, over in position_factors(n, Fraction(p), queries, trace):
        result *= down * over
    return result


@dataclass(frozen=True)
class AdjacentPair:
    """Two equal-length query sequences at Hamming distance exactly 1."""

    q1: tuple[int, ...]
    q2: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "q1", tuple(self.q1))
        object.__setattr__(self, "q2", tuple(self.q2))
        if len(self.q1) != len(self.q2):
            raise ParameterError("adjacent sequences must have equal length")
        diffs = [j for j, (a, b) in enumerate(zip(self.q1, self.q2)) if a != b]
        if len(diffs) != 1:
            raise ParameterError(
                f"sequences differ at {len(diffs)} positions, adjacency needs exactly 1"
            )
        object.__setattr__(self, "_k", diffs[0])

    @property
    def k(self) -> int:
        """The single differing position (0-based)."""
        return self._k  # type: ignore[attr-defined]

    def changed_positions(self) -> set[int]:
        """Positions where per-position factors may differ from 1:
        the changed index plus the next occurrence of either block."""
        out = {self.k}
        for seq in (self.q1, self.q2):
            nxt = nx_index(seq, self.k)
            if nxt is not None:
                out.add(nxt)
        return out


@dataclass
class FactorTable:
    """Per-transcript, per-position factor ratios for an adjacent pair.

    Ratios are oriented q2 over q1. ``rows`` maps each trace to a list of
    (download ratio, overwrite ratio) per position.
    """

    pair: AdjacentPair
    n: int
    p: Fraction
    rows: dict[TraceSeq, list[tuple[Fraction, Fraction]]]

    def off_position_violations(self) -> list[tuple[TraceSeq, int]]:
        """Traces and positions outside the changed set whose ratio != 1."""
        changed = self.pair.changed_positions()
        bad = []
        for trace, ratios in self.rows.items():
            for j, (fd, fo) in enumerate(ratios):
                if j not in changed and (fd != 1 or fo != 1):
                    bad.append((trace, j))
        return bad

    def bound_violations(self) -> list[tuple[TraceSeq, int, str]]:
        """Positions where a factor exceeds n^2/p (download) or n/p (overwrite)."""
        down_bound = Fraction(self.n * self.n) / self.p
        over_bound = Fraction(self.n) / self.p
        bad = []
        for trace, ratios in self.rows.items():
            for j, (fd, fo) in enumerate(ratios):
                if fd > down_bound or 1 / fd > down_bound:
                    bad.append((trace, j, "download"))
                if fo > over_bound or 1 / fo > over_bound:
                    bad.append((trace, j, "overwrite"))
        return bad

    def max_product_ratio(self) -> Fraction:
        best = Fraction(0)
        for ratios in self.rows.values():
            prod = Fraction(1)
            for fd, fo in ratios:
                prod *= fd * fo
            best = max(best, prod, 1 / prod if prod else best)
        return best


def factor_table(
    dist_q: TraceDistribution, dist_q2: TraceDistribution, pair: AdjacentPair
) -> FactorTable:
    """Per-position conditional-factor ratios across both supports.

    Requires exact distributions over the same instance; the ratio product
    per trace equals the probability ratio (checked by tests, guaranteed by
    the factorization lemmas).
    """
    if not (dist_q.exact and dist_q2.exact):
        raise ParameterError("factor tables need exact distributions")
    if not dist_q.same_instance(dist_q2):
        raise ParameterError("distributions come from different instances")
    if dist_q.queries != pair.q1 or dist_q2.queries != pair.q2:
        raise ParameterError("pair does not match the distributions' query sequences")
    n, p = dist_q.n, dist_q.p
    rows: dict[TraceSeq, list[tuple[Fraction, Fraction]]] = {}
    for trace in dist_q.support() | dist_q2.support():
        f1 = position_factors(n, p, pair.q1, trace)
        f2 = position_factors(n, p, pair.q2, trace)
        rows[trace] = [
            (d2 / d1, o2 / o1) for (d1, o1), (d2, o2) in zip(f1, f2)
        ]
    return FactorTable(pair=pair, n=n, p=p, rows=rows)


@dataclass
class CaseAuditReport:
    """Outcome of the exhaustive per-case factor audit for one pair."""

    pair: AdjacentPair
    n: int
    p: Fraction
    positions_checked: int = 0
    combos_checked: int = 0
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def lemma_case_audit(n: int, p, pair: AdjacentPair) -> CaseAuditReport:
    """Check the factor lemmas over every transcript, grouped by case.

    A position's factor depends on the transcript only through its own
    coordinates and the overwrite coordinate of the previous same-block
    query, so ranging over those coordinate values covers all transcripts
    of any length exactly. Checks:

    - off the changed positions both factors equal 1 exactly;
    - every download factor ratio lies within [p/n^2, n^2/p];
    - every overwrite factor ratio lies within [p/n, n/p].
    """
    p = Fraction(p)
    report = CaseAuditReport(pair=pair, n=n, p=p)
    q1, q2 = pair.q1, pair.q2
    changed = pair.changed_positions()
    down_bound = Fraction(n * n) / p
    over_bound = Fraction(n) / p

    for j in range(len(q1)):
        report.positions_checked += 1
        must_be_one = j not in changed

        # Overwrite factors: depend on (q_j, o_j) only.
        for o in range(1, n + 1):
            ratio = overwrite_marginal(n, p, q2[j], o) / overwrite_marginal(n, p, q1[j], o)
            report.combos_checked += 1
            if must_be_one and ratio != 1:
                report.violations.append(f"overwrite ratio {ratio} != 1 at j={j}, o={o}")
            if ratio > over_bound or 1 / ratio > over_bound:
                report.violations.append(f"overwrite ratio {ratio} beyond n/p at j={j}, o={o}")

        # Download factors: depend on (q_j, d_j) and the previous overwrite
        # coordinate on each side.
        pr1, pr2 = pr_index(q1, j), pr_index(q2, j)
        if pr1 == pr2 and pr1 is not None:
            # Shared coordinate: both cases read the same o value.
            combos = [(classify_prev_case(q1[j], o), classify_prev_case(q2[j], o))
                      for o in range(1, n + 1)]
        else:
            side1 = _case_options(q1[j], pr1, n)
            side2 = _case_options(q2[j], pr2, n)
            combos = [(c1, c2) for c1 in side1 for c2 in side2]
        if must_be_one and pr1 != pr2:
            report.violations.append(
                f"previous-query index differs at unchanged position j={j}"
            )
        for case1, case2 in combos:
            for d in range(1, n + 1):
                ratio = download_conditional(n, p, case2, q2[j], d) / download_conditional(
                    n, p, case1, q1[j], d
                )
                report.combos_checked += 1
                if must_be_one and ratio != 1:
                    report.violations.append(
                        f"download ratio {ratio} != 1 at j={j}, d={d}, cases {case1}/{case2}"
                    )
                if ratio > down_bound or 1 / ratio > down_bound:
                    report.violations.append(
                        f"download ratio {ratio} beyond n^2/p at j={j}, d={d}"
                    )
    return report


def _case_options(q: int, prev: int | None, n: int) -> list[PrevCase]:
    if prev is None:
        return [PrevCase.NEVER_QUERIED]
    # The previous overwrite coordinate ranges over [n]; both derived cases
    # occur for some value.
    return [PrevCase.PREV_OVERWROTE_SAME, PrevCase.PREV_OVERWROTE_OTHER]
