import math

import numpy as np
import pytest

from gbim.diffusion import (
    MULTI_IC,
    MULTI_LT,
    DiffusionConfig,
    OracleInfeasibleError,
    SeedSet,
    count_random_events,
    estimate_influence,
    exact_influence,
    simulate_once,
)
from gbim.netdata import ItemGraph, PreferenceMatrix, SocialGraph, ValidationError


def instance(n, user_edges, m, item_edges, p):
    social = SocialGraph(n, user_edges)
    items = ItemGraph(m, item_edges)
    prefs = PreferenceMatrix(np.asarray(p, dtype=float))
    return social, items, prefs


def rng(seed=0):
    return np.random.default_rng(seed)


class TestSeedSet:
    def test_repeated_user_rejected(self):
        with pytest.raises(ValidationError, match="repeats a user"):
            SeedSet.of([(0, 0), (0, 1)])

    def test_repeated_item_rejected(self):
        with pytest.raises(ValidationError, match="repeats an item"):
            SeedSet.of([(0, 0), (1, 0)])

    def test_budget_enforced(self):
        with pytest.raises(ValidationError):
            SeedSet([(0, 0), (1, 1)], budget=1)

    def test_canonical_key_sorted(self):
        assert SeedSet.of([(3, 1), (0, 2)]).canonical_key() == ((0, 2), (3, 1))

    def test_out_of_range_detected(self):
        s = SeedSet.of([(5, 0)])
        with pytest.raises(ValidationError):
            s.validate_against(3, 2)


class TestSimulateOnce:
    def test_empty_seed_set(self):
        social, items, prefs = instance(3, [(0, 1, 1.0)], 2, [(0, 1)],
                                        np.full((3, 2), 0.5))
        out = simulate_once(SeedSet.of([]), social, items, prefs,
                            DiffusionConfig(model=MULTI_IC), rng())
        assert out.total == 0

    @pytest.mark.parametrize("model", [MULTI_LT, MULTI_IC])
    def test_isolated_seed_stays_alone(self, model):
        # beta = 0 and no edges: the seed itself is the whole spread
        social, items, prefs = instance(3, [], 2, [(0, 1)], np.ones((3, 2)))
        cfg = DiffusionConfig(model=model, beta=0.0)
        out = simulate_once(SeedSet.of([(1, 1)]), social, items, prefs, cfg, rng())
        assert out.total == 1
        assert out.sigma.tolist() == [0, 1]

    def test_lt_path_graph_full_activation(self):
        # u0 -> u1 -> u2 with weight 1, two associated items, p = 1 everywhere,
        # beta = 1: thresholds 1 - p = 0 are met by any active in-neighbor and
        # the association fires surely, so all 3 users activate on both layers
        social, items, prefs = instance(
            3, [(0, 1, 1.0), (1, 2, 1.0)], 2, [(0, 1)], np.ones((3, 2)))
        cfg = DiffusionConfig(model=MULTI_LT, beta=1.0)
        out = simulate_once(SeedSet.of([(0, 0)]), social, items, prefs, cfg, rng())
        assert out.total == 6
        assert out.sigma.tolist() == [3, 3]

    def test_lt_threshold_zero_needs_active_in_neighbor(self):
        # u2 has no in-edges: even with p = 1 (threshold 0) it must not
        # self-activate on a layer the cascade cannot reach it through
        social, items, prefs = instance(3, [(0, 1, 1.0)], 1, [], np.ones((3, 1)))
        cfg = DiffusionConfig(model=MULTI_LT, beta=0.0)
        out = simulate_once(SeedSet.of([(0, 0)]), social, items, prefs, cfg, rng())
        assert out.total == 2  # u0 seed + u1 via the edge; u2 untouched

    def test_ic_probability_uses_target_preference(self):
        # edge probability is w * p[target, layer]: a zero target preference
        # blocks activation however much the source likes the item
        p = np.array([[1.0], [0.0]])
        social, items, prefs = instance(2, [(0, 1, 1.0)], 1, [], p)
        cfg = DiffusionConfig(model=MULTI_IC, beta=0.0)
        for s in range(20):
            out = simulate_once(SeedSet.of([(0, 0)]), social, items, prefs, cfg, rng(s))
            assert out.total == 1
        # flipped: target preference 1 makes the push certain
        prefs2 = PreferenceMatrix(np.array([[0.0], [1.0]]))
        # seed user's own preference is irrelevant to its seeding
        out = simulate_once(SeedSet.of([(0, 0)]), social, items, prefs2, cfg, rng())
        assert out.total == 2

    def test_association_cascades_along_item_graph(self):
        # chain of items 0-1-2, beta = 1, p = 1: the seed user self-activates
        # across the whole chain in the very first association phase
        social, items, prefs = instance(1, [], 3, [(0, 1), (1, 2)], np.ones((1, 3)))
        cfg = DiffusionConfig(model=MULTI_IC, beta=1.0)
        out = simulate_once(SeedSet.of([(0, 0)]), social, items, prefs, cfg, rng())
        assert out.sigma.tolist() == [1, 1, 1]

    def test_activation_monotone_and_bounded(self):
        rng_g = rng(42)
        social, items, prefs = instance(
            6,
            [(0, 1, 0.5), (1, 2, 0.5), (2, 3, 0.5), (3, 0, 0.5), (1, 4, 0.5),
             (4, 5, 0.5), (5, 0, 0.5)],
            3, [(0, 1), (1, 2)], rng_g.random((6, 3)))
        for model in (MULTI_LT, MULTI_IC):
            cfg = DiffusionConfig(model=model, beta=0.4)
            for s in range(30):
                out = simulate_once(SeedSet.of([(0, 0), (3, 2)]), social, items,
                                    prefs, cfg, rng(s))
                assert 2 <= out.total <= 6 * 3
                assert np.all(out.sigma >= 0) and np.all(out.sigma <= 6)


class TestEstimateInfluence:
    def test_lt_beta_zero_is_deterministic(self):
        social, items, prefs = instance(
            4, [(0, 1, 1.0), (1, 2, 1.0)], 2, [(0, 1)],
            np.full((4, 2), 0.9))
        cfg = DiffusionConfig(model=MULTI_LT, beta=0.0, simulations=50)
        est = estimate_influence(SeedSet.of([(0, 0)]), social, items, prefs, cfg)
        single = simulate_once(SeedSet.of([(0, 0)]), social, items, prefs, cfg, rng())
        assert est == float(single.total)

    def test_default_simulation_count(self):
        assert DiffusionConfig().simulations == 100

    def test_same_seed_reproducible(self):
        social, items, prefs = instance(
            5, [(0, 1, 0.5), (1, 2, 0.5), (0, 3, 0.5), (3, 4, 0.5)],
            2, [(0, 1)], np.full((5, 2), 0.7))
        cfg = DiffusionConfig(model=MULTI_IC, beta=0.3, simulations=40, seed=17)
        a = estimate_influence(SeedSet.of([(0, 0)]), social, items, prefs, cfg)
        b = estimate_influence(SeedSet.of([(0, 0)]), social, items, prefs, cfg)
        assert a == b
        c = estimate_influence(SeedSet.of([(0, 0)]), social, items, prefs, cfg, seed=18)
        assert c != a  # different master seed, different draw set

    def test_mc_within_three_se_of_exact(self):
        social, items, prefs = instance(
            4, [(0, 1, 1.0), (1, 2, 0.5), (1, 3, 0.5)], 2, [(0, 1)],
            np.array([[1.0, 0.5], [0.5, 0.5], [0.75, 0.25], [0.5, 0.75]]))
        seed_set = SeedSet.of([(0, 0)])
        for model in (MULTI_LT, MULTI_IC):
            cfg = DiffusionConfig(model=model, beta=0.5, simulations=20000, seed=3)
            exact = exact_influence(seed_set, social, items, prefs, cfg)
            runs = np.array([
                simulate_once(seed_set, social, items, prefs, cfg,
                              np.random.default_rng(c)).total
                for c in np.random.SeedSequence(3).spawn(cfg.simulations)])
            est = runs.mean()
            se = runs.std(ddof=1) / math.sqrt(len(runs))
            assert est == estimate_influence(seed_set, social, items, prefs, cfg)
            assert abs(est - exact) <= 3 * max(se, 1e-12)


class TestExactInfluence:
    def test_single_edge_half_probability(self):
        # one IC edge with w * p = 0.5: totals 1 or 2, equally likely
        p = np.array([[1.0], [0.5]])
        social, items, prefs = instance(2, [(0, 1, 1.0)], 1, [], p)
        cfg = DiffusionConfig(model=MULTI_IC, beta=0.0)
        val = exact_influence(SeedSet.of([(0, 0)]), social, items, prefs, cfg)
        assert val == 1.5

    def test_lt_beta_zero_equals_single_simulation(self):
        social, items, prefs = instance(
            4, [(0, 1, 0.5), (2, 1, 0.5), (1, 3, 1.0)], 2, [(0, 1)],
            np.array([[0.9, 0.1], [0.6, 0.2], [0.3, 0.8], [0.95, 0.05]]))
        cfg = DiffusionConfig(model=MULTI_LT, beta=0.0)
        for pairs in ([(0, 0)], [(0, 0), (2, 1)]):
            ss = SeedSet.of(pairs)
            exact = exact_influence(ss, social, items, prefs, cfg)
            sim = simulate_once(ss, social, items, prefs, cfg, rng())
            assert exact == float(sim.total)

    def test_two_user_two_item_hand_enumeration(self):
        # users: u0 -> u1 (w = 1); items: v0 - v1; beta = 0.5; Multi-IC
        # preferences: p[u0] = (1.0, 0.6), p[u1] = (0.5, 0.8)
        # seed {(u0, v0)}. Independent decomposition over the five coins
        # (u0's association 0.3, edge pushes 0.5 / 0.8, u1's associations
        # 0.4 / 0.25) gives:
        #   E[u0 on v0] = 1
        #   E[u0 on v1] = 0.3
        #   P(u1 on v0) = 0.5 + 0.5 * (0.3 * 0.8 * 0.25)        = 0.53
        #   P(u1 on v1) = 0.3 * 0.8 + (0.3*0.2 + 0.7) * 0.5*0.4 = 0.392
        # expected total = 2.222
        p = np.array([[1.0, 0.6], [0.5, 0.8]])
        social, items, prefs = instance(2, [(0, 1, 1.0)], 2, [(0, 1)], p)
        cfg = DiffusionConfig(model=MULTI_IC, beta=0.5)
        val = exact_influence(SeedSet.of([(0, 0)]), social, items, prefs, cfg)
        assert abs(val - 2.222) < 1e-12

    def test_monotone_in_seed_pairs(self):
        g = rng(11)
        social, items, prefs = instance(
            4, [(0, 1, 0.5), (1, 2, 0.5), (2, 0, 0.5), (0, 3, 0.5)],
            2, [(0, 1)], g.random((4, 2)))
        for model in (MULTI_LT, MULTI_IC):
            cfg = DiffusionConfig(model=model, beta=0.25)
            base = SeedSet.of([(0, 0)])
            v0 = exact_influence(base, social, items, prefs, cfg)
            for u in range(1, 4):
                v1 = exact_influence(SeedSet.of([(0, 0), (u, 1)]), social,
                                     items, prefs, cfg)
                assert v1 >= v0 - 1e-12

    def test_beta_zero_layers_decompose(self):
        # dyadic probabilities keep the enumeration arithmetic exact, so
        # the decomposition is an equality of floats, not an approximation
        p = np.array([[1.0, 0.25], [0.5, 0.75], [0.25, 0.5]])
        social, items, prefs = instance(
            3, [(0, 1, 1.0), (1, 2, 0.5), (2, 0, 0.5)], 2, [(0, 1)], p)
        cfg = DiffusionConfig(model=MULTI_IC, beta=0.0)
        both = exact_influence(SeedSet.of([(0, 0), (1, 1)]), social, items, prefs, cfg)
        only0 = exact_influence(SeedSet.of([(0, 0)]), social, items, prefs, cfg)
        only1 = exact_influence(SeedSet.of([(1, 1)]), social, items, prefs, cfg)
        assert both == only0 + only1

    def test_refuses_large_instances(self):
        g = rng(0)
        edges = [(i, j, 0.5) for i in range(6) for j in range(6) if i != j]
        social, items, prefs = instance(6, edges, 3, [(0, 1), (1, 2)],
                                        g.uniform(0.1, 0.9, (6, 3)))
        cfg = DiffusionConfig(model=MULTI_IC, beta=0.3)
        assert count_random_events(social, items, prefs, cfg) > 25
        with pytest.raises(OracleInfeasibleError):
            exact_influence(SeedSet.of([(0, 0)]), social, items, prefs, cfg)

    def test_event_count_skips_deterministic(self):
        # probability-1 pushes and probability-0 associations do not count
        p = np.array([[1.0], [1.0]])
        social, items, prefs = instance(2, [(0, 1, 1.0)], 1, [], p)
        cfg = DiffusionConfig(model=MULTI_IC, beta=0.0)
        assert count_random_events(social, items, prefs, cfg) == 0
        assert exact_influence(SeedSet.of([(0, 0)]), social, items, prefs, cfg) == 2.0
