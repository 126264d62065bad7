"""Audit machinery: oracle soundness, factor lemmas, DP accounting, strawman."""

import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpstore.audit import (
    AdjacentPair,
    TraceDistribution,
    delta_at,
    delta_at_symmetric,
    dp_report,
    empirical_distribution,
    enumerate_ram,
    epsilon_hat,
    factor_table,
    lemma1_check,
    lemma_case_audit,
    max_transcript_ratio,
    nx_index,
    position_factors,
    pr_index,
    ram_trace_prob,
    ram_trace_runner,
    strawman_delta_lower_bound,
    strawman_exact_distribution,
    strawman_membership_distribution,
    strawman_membership_prob,
    strawman_query,
)
from dpstore.dpir import DpIrParams
from dpstore.dpram import overwrite_marginal
from dpstore.errors import ParameterError, SizeError

HALF = Fraction(1, 2)
THIRD = Fraction(1, 3)


def brute_force_distribution(n, p, queries, initial_stash=None):
    """Explicit branch-tree enumeration: recurses through every download and
    overwrite alternative, no state merging. Test-local oracle for the DP."""
    p = Fraction(p)
    out: dict = {}

    def add(trace, weight):
        out[trace] = out.get(trace, Fraction(0)) + weight

    def recurse(stash, j, weight, trace):
        if j == len(queries):
            add(trace, weight)
            return
        q = queries[j]
        base = stash - {q}
        if q in stash:
            d_branches = [(d, weight / n) for d in range(1, n + 1)]
        else:
            d_branches = [(q, weight)]
        for d, wd in d_branches:
            for o in range(1, n + 1):
                recurse(base | {q}, j + 1, wd * p / n, trace + ((d, o),))
            recurse(base, j + 1, wd * (1 - p), trace + ((d, q),))

    if initial_stash is not None:
        recurse(frozenset(initial_stash), 0, Fraction(1), ())
    else:
        for mask in range(1 << n):
            members = frozenset(i + 1 for i in range(n) if mask >> i & 1)
            weight = p ** len(members) * (1 - p) ** (n - len(members))
            recurse(members, 0, weight, ())
    return out


class TestEnumerateRam:
    def test_matches_brute_force_exactly(self):
        for n, p, queries in [(3, HALF, (1, 2)), (3, THIRD, (2, 2)), (2, HALF, (1, 2, 1))]:
            dist = enumerate_ram(n, p, queries)
            brute = brute_force_distribution(n, p, queries)
            assert dist.probs == brute

    def test_matches_closed_form_factorization(self):
        for n, p, queries in [(3, HALF, (1, 2, 1)), (4, THIRD, (1, 2, 1, 2))]:
            dist = enumerate_ram(n, p, queries)
            assert dist.total() == 1
            for trace, prob in dist.probs.items():
                assert ram_trace_prob(n, p, queries, trace) == prob

    def test_point_mass_initial_law_single_query(self):
        # Block never stashed at setup: d is forced, o follows the marginal.
        n, p = 4, HALF
        dist = enumerate_ram(n, p, (1,), initial_stash_law=frozenset())
        assert dist.prob(((1, 1),)) == Fraction(5, 8)
        for o in (2, 3, 4):
            assert dist.prob(((1, o),)) == Fraction(1, 8)
        # The decoy-download branch never fires, so d != 1 has no mass.
        assert all(trace[0][0] == 1 for trace in dist.support())

    def test_overwrite_marginal_agrees_at_every_position(self):
        n, p, queries = 3, THIRD, (1, 2, 1)
        dist = enumerate_ram(n, p, queries)
        for j, q in enumerate(queries):
            for o in range(1, n + 1):
                marginal = sum(pr for t, pr in dist.probs.items() if t[j][1] == o)
                assert marginal == overwrite_marginal(n, p, q, o)

    def test_custom_mixture_law(self):
        law = {frozenset(): HALF, frozenset({1}): HALF}
        dist = enumerate_ram(3, HALF, (1,), initial_stash_law=law)
        assert dist.total() == 1

    def test_bad_law_rejected(self):
        with pytest.raises(ParameterError):
            enumerate_ram(3, HALF, (1,), initial_stash_law={frozenset(): HALF})

    def test_size_guard(self):
        with pytest.raises(SizeError):
            enumerate_ram(7, HALF, (1,))
        with pytest.raises(SizeError):
            enumerate_ram(6, HALF, (1, 2, 3, 4, 5, 6))

    def test_history_independence_of_overwrite(self):
        # Lemma restated testably: Pr[o_j | history, d_j] == Pr[o_j].
        n, p, queries = 3, HALF, (1, 2, 1)
        dist = enumerate_ram(n, p, queries)
        j = 2
        by_history: dict = {}
        for trace, prob in dist.probs.items():
            history = trace[:j] + (trace[j][0],)
            cell = by_history.setdefault(history, {})
            cell[trace[j][1]] = cell.get(trace[j][1], Fraction(0)) + prob
        for history, branch in by_history.items():
            total = sum(branch.values())
            for o, mass in branch.items():
                assert mass / total == overwrite_marginal(n, p, queries[j], o)

    def test_download_depends_only_on_previous_overwrite(self):
        # Lemma restated testably: Pr[d_j | full history] is a function of
        # o_{pr(Q, j)} alone.
        n, p, queries = 3, HALF, (1, 2, 1)
        j, prev = 2, 0  # pr(Q, 3rd query) is the 1st query
        dist = enumerate_ram(n, p, queries)
        conditionals: dict = {}
        by_history: dict = {}
        for trace, prob in dist.probs.items():
            by_history.setdefault(trace[:j], {}).setdefault(trace[j][0], Fraction(0))
            by_history[trace[:j]][trace[j][0]] += prob
        for history, branch in by_history.items():
            total = sum(branch.values())
            key = history[prev][1]  # the previous overwrite index
            for d in range(1, n + 1):
                value = branch.get(d, Fraction(0)) / total
                anchor = conditionals.setdefault((key, d), value)
                assert anchor == value


class TestFactorLemmas:
    PAIRS = [
        (3, HALF, AdjacentPair((1, 2, 1), (1, 3, 1))),
        (3, THIRD, AdjacentPair((1, 2, 2), (1, 2, 1))),
        (4, HALF, AdjacentPair((1, 2, 1, 2), (1, 3, 1, 2))),
        (4, THIRD, AdjacentPair((2, 2), (2, 3))),
    ]

    @pytest.mark.parametrize("n,p,pair", PAIRS)
    def test_factor_table_off_positions_are_1(self, n, p, pair):
        table = factor_table(
            enumerate_ram(n, p, pair.q1), enumerate_ram(n, p, pair.q2), pair
        )
        assert table.off_position_violations() == []
        assert table.bound_violations() == []

    @pytest.mark.parametrize("n,p,pair", PAIRS)
    def test_factor_products_equal_probability_ratios(self, n, p, pair):
        d1, d2 = enumerate_ram(n, p, pair.q1), enumerate_ram(n, p, pair.q2)
        table = factor_table(d1, d2, pair)
        for trace, ratios in table.rows.items():
            product = Fraction(1)
            for fd, fo in ratios:
                product *= fd * fo
            assert product == d2.prob(trace) / d1.prob(trace)

    @pytest.mark.parametrize("n,p,pair", PAIRS)
    def test_case_audit_is_clean(self, n, p, pair):
        report = lemma_case_audit(n, p, pair)
        assert report.ok, report.violations
        assert report.combos_checked > 0

    def test_factor_table_rejects_estimated_inputs(self):
        pair = AdjacentPair((1, 2), (1, 3))
        exact = enumerate_ram(3, HALF, (1, 2))
        estimated = empirical_distribution(
            ram_trace_runner(3, HALF, (1, 3)), 100, seed=0, n=3, p=HALF, queries=(1, 3)
        )
        with pytest.raises(ParameterError):
            factor_table(exact, estimated, pair)

    def test_adjacency_validation(self):
        with pytest.raises(ParameterError):
            AdjacentPair((1, 2), (1, 2))
        with pytest.raises(ParameterError):
            AdjacentPair((1, 2), (2, 1))
        with pytest.raises(ParameterError):
            AdjacentPair((1,), (1, 2))

    def test_pr_nx_helpers(self):
        queries = (1, 2, 1, 2, 1)
        assert pr_index(queries, 0) is None
        assert pr_index(queries, 2) == 0
        assert pr_index(queries, 4) == 2
        assert nx_index(queries, 0) == 2
        assert nx_index(queries, 4) is None
        pair = AdjacentPair((1, 2, 1), (1, 3, 1))
        assert pair.k == 1
        assert pair.changed_positions() == {1}


class TestDpReport:
    def toy(self, p1, p2) -> TraceDistribution:
        return TraceDistribution(
            probs={"A": Fraction(p1), "B": Fraction(p2)},
            exact=True, n=2, p=HALF, queries=(1,),
        )

    def test_identical_distributions(self):
        d = self.toy(HALF, HALF)
        report = dp_report(d, d, eps_grid=[0.0])
        assert report.epsilon_hat == 0.0
        assert report.delta_at_epsilon(0.0) == 0

    def test_two_transcript_hand_formula(self):
        d1, d2 = self.toy(Fraction(3, 4), Fraction(1, 4)), self.toy(HALF, HALF)
        for eps in (0.0, 0.2, 0.5, 2.0):
            factor = Fraction(math.exp(eps))
            expected = max(0, Fraction(3, 4) - factor * HALF) + max(
                0, Fraction(1, 4) - factor * HALF
            )
            assert delta_at(d1, d2, eps) == expected
        assert delta_at_symmetric(d1, d2, 0.0) == Fraction(1, 4)
        # Worst symmetric ratio is at B: (1/2) / (1/4) = 2.
        eps, ratio = epsilon_hat(d1, d2)
        assert ratio == 2
        assert eps == pytest.approx(math.log(2))

    def test_disjoint_support_is_infinite(self):
        d1 = TraceDistribution({"A": Fraction(1)}, True, 2, HALF, (1,))
        d2 = TraceDistribution({"B": Fraction(1)}, True, 2, HALF, (1,))
        report = dp_report(d1, d2, eps_grid=[0.0, 5.0])
        assert report.epsilon_hat == math.inf
        assert report.delta_at_epsilon(5.0) == 1

    @given(
        p1=st.fractions(Fraction(1, 24), Fraction(23, 24), max_denominator=24),
        q1=st.fractions(Fraction(1, 24), Fraction(23, 24), max_denominator=24),
        eps_lo=st.floats(0.0, 2.0),
        eps_hi=st.floats(0.0, 2.0),
    )
    @settings(max_examples=60, deadline=None)
    def test_delta_monotone_and_vanishing(self, p1, q1, eps_lo, eps_hi):
        # Interior probabilities keep the supports equal, so delta vanishes
        # once e^eps clears the worst ratio; it stays positive forever when
        # one side has mass the other lacks entirely.
        d1, d2 = self.toy(p1, 1 - p1), self.toy(q1, 1 - q1)
        lo, hi = min(eps_lo, eps_hi), max(eps_lo, eps_hi)
        assert delta_at(d1, d2, lo) >= delta_at(d1, d2, hi)
        assert delta_at(d1, d2, 50.0) == 0

    def test_report_grid_and_json(self):
        d1, d2 = self.toy(Fraction(3, 4), Fraction(1, 4)), self.toy(HALF, HALF)
        report = dp_report(d1, d2, eps_grid=[0.0, 1.0])
        as_json = report.to_json_dict()
        assert {entry["epsilon"] for entry in as_json["delta_curve"]} == {0.0, 1.0}
        with pytest.raises(ParameterError):
            report.delta_at_epsilon(3.0)


class TestEmpirical:
    def test_seed_determinism(self):
        runner = ram_trace_runner(3, HALF, (1, 2))
        one = empirical_distribution(runner, 4000, seed=9, n=3, p=HALF, queries=(1, 2))
        two = empirical_distribution(runner, 4000, seed=9, n=3, p=HALF, queries=(1, 2))
        assert one.probs == two.probs

    def test_frequencies_sum_to_one_exactly(self):
        runner = ram_trace_runner(3, HALF, (1,))
        dist = empirical_distribution(runner, 999, seed=1, n=3, p=HALF, queries=(1,))
        assert dist.total() == 1
        assert dist.trials == 999

    def test_matches_exact_oracle(self):
        n, p, queries = 3, HALF, (1, 2)
        trials = 40000
        exact = enumerate_ram(n, p, queries)
        est = empirical_distribution(
            ram_trace_runner(n, p, queries), trials, seed=3, n=n, p=p, queries=queries
        )
        for trace, prob in exact.probs.items():
            expected = float(prob)
            sigma = math.sqrt(expected * (1 - expected) / trials)
            assert abs(float(est.prob(trace)) - expected) < 4.5 * sigma

    def test_quadrupling_trials_halves_mean_error(self):
        n, p, queries = 3, HALF, (1, 2)
        exact = enumerate_ram(n, p, queries)

        def mean_abs_error(trials, seed):
            est = empirical_distribution(
                ram_trace_runner(n, p, queries), trials, seed=seed, n=n, p=p, queries=queries
            )
            errors = [
                abs(float(est.prob(t)) - float(pr)) for t, pr in exact.probs.items()
            ]
            return sum(errors) / len(errors)

        # Root-trials convergence: 4x the sample roughly halves the error.
        small = sum(mean_abs_error(5000, s) for s in range(3)) / 3
        large = sum(mean_abs_error(20000, s + 10) for s in range(3)) / 3
        assert 0.3 < large / small < 0.75


class TestStrawman:
    def test_target_always_included(self):
        rng = random.Random(5)
        for _ in range(200):
            assert 4 in strawman_query(9, 4, rng)

    def test_exclusion_probability_exact(self):
        assert strawman_membership_prob(10, 3, 7) == Fraction(1, 10)
        dist = strawman_membership_distribution(10, 3, 7)
        assert dist.prob(((0, 7),)) == Fraction(9, 10)

    def test_delta_floor_from_membership_coarsening(self):
        for n in (10, 100):
            other = strawman_membership_distribution(n, 2, 1)
            own = strawman_membership_distribution(n, 1, 1)
            for eps in (1.0, 5.0, math.log(n), 2 * math.log(n)):
                assert delta_at(other, own, eps) >= strawman_delta_lower_bound(n)

    def test_delta_floor_on_full_enumeration(self):
        n = 10
        own = strawman_exact_distribution(n, 1)
        other = strawman_exact_distribution(n, 2)
        assert own.total() == 1
        for eps in (1.0, 5.0):
            assert delta_at_symmetric(own, other, eps) >= strawman_delta_lower_bound(n)

    def test_membership_marginal_of_full_enumeration(self):
        n = 8
        dist = strawman_exact_distribution(n, 2)
        inc = sum(pr for t, pr in dist.probs.items() if 5 in t)
        assert inc == strawman_membership_prob(n, 2, 5)

    def test_strawman_fails_the_exclusion_inequality(self):
        # Pr[B_a not in T(b)] = (n-1)/n but Pr[B_a not in T(a)] = 0: no finite
        # budget with delta = 0 can cover it.
        n = 10
        for eps in (1.0, 5.0, 50.0):
            lhs = 1 - strawman_membership_prob(n, 2, 1)  # query b = 2, block a = 1
            rhs = math.exp(eps) * (1 - strawman_membership_prob(n, 1, 1))
            assert lhs > rhs

    def test_sampled_sets_match_membership_law(self):
        n, trials = 6, 20000
        rng = random.Random(6)
        count = sum(1 in strawman_query(n, 3, rng) for _ in range(trials))
        expected = 1 / n
        sigma = math.sqrt(expected * (1 - expected) / trials)
        assert abs(count / trials - expected) < 4 * sigma


class TestIrChecks:
    def test_lemma1_passes_for_the_real_scheme(self):
        params = DpIrParams(n=6, alpha=HALF, k=3)
        report = lemma1_check(params)
        assert report.ok
        assert report.triples_checked == 216

    def test_lemma1_equal_queries_hold_trivially(self):
        params = DpIrParams(n=4, alpha=HALF, k=2)
        report = lemma1_check(params, epsilon=0.0)
        # Only a == b triples are guaranteed at epsilon 0; violations must
        # all involve distinct queries.
        assert all(a != b for a, b, _, _ in report.violations)

    def test_max_ratio_formula(self):
        params = DpIrParams(n=6, alpha=HALF, k=3)
        ratio = max_transcript_ratio(params)
        alpha = HALF
        assert ratio == (1 - alpha) * 6 / (alpha * 3) + 1 == 3
