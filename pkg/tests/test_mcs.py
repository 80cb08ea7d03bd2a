import math
import random
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import chisquare

from termsearch.exprlang import ATOM_BY_SYMBOL, ATOMS, Expression, ExpressionError, parse_prefix
from termsearch.mcs import (
    AmafTable,
    DiscoveryConfig,
    amaf_playout,
    amaf_probabilities,
    discover,
    uniform_playout,
    update_amaf,
)

SC, PR, PLUS = (ATOM_BY_SYMBOL[s] for s in ("sc", "pr", "+"))
LEAVES = [a for a in ATOMS if a.arity == 0]


def two_playout_table():
    t = AmafTable()
    update_amaf(t, parse_prefix("+ sc sc"), 100)
    update_amaf(t, parse_prefix("pr"), 50)
    return t


class TestAmafTable:
    def test_updates_count_distinct_atoms_once(self):
        t = AmafTable()
        update_amaf(t, parse_prefix("pr"), 10)
        assert (t.total_playouts, t.total_score) == (1, 10)
        assert t.per_atom(PR) == (1, 10)
        update_amaf(t, parse_prefix("+ sc sc"), 20)
        assert (t.total_playouts, t.total_score) == (2, 30)
        assert t.per_atom(SC) == (1, 20)
        assert t.per_atom(PLUS) == (1, 20)
        assert t.mean() == 15

    def test_incomplete_rejected(self):
        with pytest.raises(ExpressionError):
            update_amaf(AmafTable(), Expression.empty(), 1.0)


class TestAmafProbabilities:
    def test_worked_example(self):
        p = amaf_probabilities(two_playout_table(), [SC, PR, PLUS], 1.0)
        # mu = 75, deviations (25, -25, 25), maxi = 25
        z = 2 * math.e + math.exp(-1)
        assert p == pytest.approx([math.e / z, math.exp(-1) / z, math.e / z], abs=1e-12)
        assert p == pytest.approx([0.4683, 0.0634, 0.4683], abs=1e-3)

    def test_high_temperature_sharpens(self):
        p = amaf_probabilities(two_playout_table(), [SC, PR, PLUS], 1000.0)
        assert p[0] + p[2] >= 0.999

    def test_empty_table_is_uniform(self):
        for n in (1, 3, 17):
            assert amaf_probabilities(AmafTable(), list(ATOMS[:n]), 5.0) == [1.0 / n] * n

    def test_equal_scores_are_uniform(self):
        t = AmafTable()
        for text in ("sc", "+ pr nb", "log 2"):
            update_amaf(t, parse_prefix(text), 7.0)
        assert amaf_probabilities(t, list(ATOMS), 5.0) == pytest.approx([1 / 17] * 17)

    @given(st.lists(st.tuples(st.integers(0, 2**32), st.floats(0, 1000)), min_size=1, max_size=30),
           st.floats(0.01, 50), st.floats(0.001, 1000))
    def test_properties(self, playouts, tau, scale):
        t, scaled = AmafTable(), AmafTable()
        for seed, score in playouts:
            e = uniform_playout(Expression.empty(), random.Random(seed))
            update_amaf(t, e, score)
            update_amaf(scaled, e, score * scale)
        legal = list(ATOMS)
        p = amaf_probabilities(t, legal, tau)
        assert sum(p) == pytest.approx(1.0, abs=1e-9)
        assert all(x > 0 for x in p)
        # positive rescaling of every score leaves the distribution unchanged
        assert amaf_probabilities(scaled, legal, tau) == pytest.approx(p, rel=1e-9, abs=1e-12)
        # tau = 1 is AMAF(a) = exp(mu_a / maxi) renormalized over the legal atoms
        mus = np.array(t.deviations())
        maxi = np.abs(mus).max()
        if maxi > 1e-12:
            w = np.exp(mus / maxi)
            assert amaf_probabilities(t, legal, 1.0) == pytest.approx(list(w / w.sum()), rel=1e-9)


class TestPlayouts:
    def test_uniform_frequencies_at_max_len_one(self):
        rng = random.Random(0)
        counts = Counter(uniform_playout(Expression.empty(1), rng).tokens[0] for _ in range(10_000))
        assert set(counts) == set(LEAVES)
        for a in LEAVES:
            assert abs(counts[a] / 10_000 - 1 / 8) <= 0.02

    def test_complete_input_unchanged(self):
        e = parse_prefix("+ sc pr")
        assert uniform_playout(e, random.Random(0)) == e
        assert amaf_playout(e, random.Random(0), two_playout_table(), 5.0) == e

    def test_empty_table_matches_uniform_in_distribution(self):
        rng = random.Random(1)
        first = Counter(amaf_playout(Expression.empty(), rng, AmafTable(), 5.0).tokens[0] for _ in range(10_000))
        _, pvalue = chisquare([first[a] for a in ATOMS])
        assert pvalue > 0.01

    def test_tiny_temperature_is_uniform(self):
        rng = random.Random(2)
        table = two_playout_table()
        first = Counter(amaf_playout(Expression.empty(), rng, table, 1e-6).tokens[0] for _ in range(10_000))
        _, pvalue = chisquare([first[a] for a in ATOMS])
        assert pvalue > 0.01

    def test_amaf_prefers_better_atoms(self):
        rng = random.Random(3)
        table = two_playout_table()
        first = Counter(amaf_playout(Expression.empty(), rng, table, 5.0).tokens[0] for _ in range(10_000))
        assert first[PR] < first[SC]

    @given(st.integers(0, 2**32), st.integers(1, 20))
    def test_playouts_are_complete_and_bounded(self, seed, max_len):
        rng = random.Random(seed)
        for e in (uniform_playout(Expression.empty(max_len), rng),
                  amaf_playout(Expression.empty(max_len), rng, two_playout_table(), 5.0)):
            assert e.open_leaves == 0
            assert 1 <= len(e.tokens) <= max_len
            assert 1 + sum(a.arity - 1 for a in e.tokens) == 0


class TestDiscover:
    def test_single_expression_budget(self):
        log = discover(DiscoveryConfig(budget_exprs=1, seed=4), lambda e: 1.0)
        assert log.evaluated_count == 1
        assert log.best_expression is not None and log.best_score == 1.0

    @pytest.mark.parametrize("mode", ["uniform", "amaf"])
    def test_token_count_reaches_max_len(self, mode):
        log = discover(DiscoveryConfig(mode=mode, budget_exprs=10_000, seed=0), lambda e: len(e.tokens))
        assert log.best_score == 12

    def test_timeline_is_strictly_improving(self):
        log = discover(DiscoveryConfig(mode="amaf", budget_exprs=500, seed=1), lambda e: len(e.tokens))
        scores = [p.score for p in log.timeline]
        assert scores == sorted(set(scores))
        assert log.best_at(log.evaluated_count) == log.best_score
        assert log.best_at(0) == -math.inf

    def test_scorer_failure_scores_zero_and_continues(self):
        def flaky(e):
            if e.tokens[0].symbol == "log":
                raise RuntimeError("boom")
            return 1.0

        log = discover(DiscoveryConfig(budget_exprs=300, seed=2), flaky)
        assert log.evaluated_count == 300
        assert log.failures > 0

    def test_seeded_single_worker_is_deterministic(self):
        runs = [discover(DiscoveryConfig(mode="amaf", budget_exprs=400, seed=9), lambda e: len(e.tokens) % 7)
                for _ in range(2)]
        assert [(p.evaluated, p.score, p.expression) for p in runs[0].timeline] == \
               [(p.evaluated, p.score, p.expression) for p in runs[1].timeline]

    @pytest.mark.parametrize("shared", [True, False])
    def test_workers_share_the_budget(self, shared):
        cfg = DiscoveryConfig(mode="amaf", worker_count=4, budget_exprs=1000, seed=0, shared_table=shared)
        log = discover(cfg, lambda e: len(e.tokens))
        assert log.evaluated_count == 1000

    def test_time_budget(self):
        log = discover(DiscoveryConfig(budget_seconds=0.2, seed=0), lambda e: 0.0)
        assert log.evaluated_count > 0

    @pytest.mark.parametrize("kwargs", [
        {"mode": "bogus", "budget_exprs": 1},
        {"budget_exprs": None},
        {"budget_exprs": 0},
        {"temperature": 0.0, "budget_exprs": 1},
        {"worker_count": 0, "budget_exprs": 1},
    ])
    def test_bad_config(self, kwargs):
        with pytest.raises(ValueError):
            DiscoveryConfig(**kwargs)
