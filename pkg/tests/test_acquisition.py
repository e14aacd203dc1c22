import logging
import math

import numpy as np
import pytest
from scipy import integrate

from gbim.acquisition import (
    CandidateBatch,
    PairPool,
    expected_improvement,
    sample_candidates,
    select_top,
)
from gbim.diffusion import SeedSet
from gbim.netdata import ValidationError


def empty_pool(alpha=0.0):
    return PairPool(pairs=(), counts=np.zeros(0, dtype=np.int64), alpha=alpha)


class TestExpectedImprovement:
    def test_at_incumbent_unit_sigma(self):
        # gamma = 0: EI = pdf(0) = 1/sqrt(2*pi)
        assert expected_improvement(3.0, 1.0, 3.0) == pytest.approx(
            1.0 / math.sqrt(2 * math.pi), abs=1e-12)
        assert expected_improvement(3.0, 1.0, 3.0) == pytest.approx(0.398942, abs=1e-6)

    def test_degenerate_sigma(self):
        assert expected_improvement(1.0, 0.0, 2.0) == 0.0
        assert expected_improvement(2.0, 0.0, 2.0) == 0.0
        assert expected_improvement(5.0, 0.0, 2.0) == 3.0

    def test_one_sigma_above_incumbent(self):
        # gamma = 1: EI = Phi(1) + pdf(1); high-precision scipy evaluation
        from scipy.stats import norm
        expected = norm.cdf(1.0) + norm.pdf(1.0)
        assert expected == pytest.approx(1.0833154705876863, abs=1e-13)
        assert expected_improvement(4.0, 1.0, 3.0) == pytest.approx(expected, abs=1e-12)

    def test_matches_numerical_integration(self):
        best = 1.5
        for mu in (-1.0, 0.5, 1.5, 2.5):
            for sigma in (0.3, 1.0, 2.7):
                def integrand(y):
                    z = (y - mu) / sigma
                    return (y - best) * math.exp(-0.5 * z * z) / (
                        sigma * math.sqrt(2 * math.pi))
                oracle, _ = integrate.quad(integrand, best, np.inf)
                assert expected_improvement(mu, sigma, best) == pytest.approx(
                    oracle, abs=1e-6)

    def test_monotone_in_mu_and_sigma(self):
        mus = np.linspace(-2, 2, 41)
        ei = expected_improvement(mus, np.ones_like(mus), 0.0)
        assert np.all(np.diff(ei) >= 0)
        assert np.all(ei > 0)  # positive whenever sigma > 0
        sigmas = np.linspace(0.01, 3, 40)
        ei_s = expected_improvement(np.full_like(sigmas, -0.5), sigmas, 0.0)
        assert np.all(np.diff(ei_s) >= 0)

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValidationError):
            expected_improvement(0.0, -1.0, 0.0)


class TestPairPool:
    def test_harvests_top_fraction(self):
        sets = [SeedSet.of([(i, 0)]) for i in range(20)]
        ys = np.arange(20, dtype=float)
        pool = PairPool.from_observations(sets, ys, alpha=0.5, top_fraction=0.05)
        # ceil(0.05 * 20) = 1: only the single best seed set contributes
        assert pool.pairs == ((19, 0),)
        assert pool.counts.tolist() == [1]

    def test_frequencies_accumulate(self):
        sets = [SeedSet.of([(0, 0), (1, 1)]), SeedSet.of([(0, 0), (2, 2)]),
                SeedSet.of([(3, 1)])]
        pool = PairPool.from_observations(sets, [9.0, 8.0, 1.0], alpha=0.5,
                                          top_fraction=0.5)
        assert dict(zip(pool.pairs, pool.counts.tolist())) == {
            (0, 0): 2, (1, 1): 1, (2, 2): 1}

    def test_sampling_proportional_to_frequency(self):
        pool = PairPool(pairs=((0, 0), (1, 1)),
                        counts=np.array([3, 1], dtype=np.int64), alpha=1.0)
        rng = np.random.default_rng(0)
        draws = [pool.sample(rng) for _ in range(4000)]
        share = sum(1 for d in draws if d == (0, 0)) / len(draws)
        assert abs(share - 0.75) < 0.03

    def test_alpha_validated(self):
        with pytest.raises(ValidationError):
            empty_pool(alpha=1.5)


class TestSampleCandidates:
    def test_all_candidates_valid_and_unseen(self):
        pool = PairPool(pairs=((0, 0), (1, 1), (2, 0)),
                        counts=np.array([2, 1, 1], dtype=np.int64), alpha=0.6)
        observed = {SeedSet.of([(0, 0), (1, 1)]).canonical_key()}
        batch = sample_candidates(pool, n=6, m=4, k=2, count=40,
                                  observed_keys=observed,
                                  rng=np.random.default_rng(1))
        keys = set()
        for cand in batch.candidates:
            users = [u for u, _ in cand.pairs]
            its = [v for _, v in cand.pairs]
            assert len(set(users)) == len(users) and len(set(its)) == len(its)
            assert cand.canonical_key() not in observed
            keys.add(cand.canonical_key())
        assert len(keys) == len(batch.candidates) == 40

    def test_pure_exploration_is_uniform(self):
        # alpha = 0, k = 1 on a 5 x 3 universe: one-candidate batches land
        # uniformly on the 15 pairs
        rng = np.random.default_rng(2)
        counts: dict[tuple, int] = {}
        trials = 3000
        for _ in range(trials):
            batch = sample_candidates(empty_pool(), 5, 3, 1, 1, set(), rng)
            counts[batch.candidates[0].pairs[0]] = counts.get(
                batch.candidates[0].pairs[0], 0) + 1
        expected = trials / 15
        chi2 = sum((c - expected) ** 2 / expected for c in counts.values())
        assert len(counts) == 15
        assert chi2 < 40  # 14 dof, far beyond the 0.001 tail

    def test_pure_exploitation_degenerates(self, caplog):
        # single-pair pool, alpha = 1, k = 1: only one unobserved candidate
        pool = PairPool(pairs=((2, 1),), counts=np.array([5], dtype=np.int64),
                        alpha=1.0)
        with caplog.at_level(logging.WARNING, logger="gbim.acquisition"):
            batch = sample_candidates(pool, 4, 3, 1, 10, set(),
                                      np.random.default_rng(3),
                                      retries_per_candidate=3)
        assert batch.candidates[0].pairs == ((2, 1),)
        assert len(batch) < 10
        assert any("exhausted" in r.message for r in caplog.records)

    def test_infeasible_budget_rejected(self):
        with pytest.raises(ValidationError):
            sample_candidates(empty_pool(), 3, 3, 4, 1, set(),
                              np.random.default_rng(0))


class TestSelectTop:
    def test_top_one_percent_of_2000(self):
        rng = np.random.default_rng(4)
        cands = tuple(SeedSet.of([(i % 50, i // 50)]) for i in range(2000))
        batch = CandidateBatch(cands).with_values(rng.random(2000))
        top = select_top(batch, 0.01)
        assert len(top) == 20
        chosen = {c.canonical_key() for c in top}
        cutoff = np.sort(batch.values)[-20]
        for i, cand in enumerate(cands):
            if batch.values[i] > cutoff:
                assert cand.canonical_key() in chosen

    def test_ties_break_lexicographically(self):
        cands = (SeedSet.of([(2, 0)]), SeedSet.of([(0, 1)]), SeedSet.of([(0, 0)]))
        batch = CandidateBatch(cands).with_values(np.ones(3))
        top = select_top(batch, 0.5)  # ceil(1.5) = 2
        assert [c.pairs for c in top] == [((0, 0),), ((0, 1),)]

    def test_single_candidate_any_fraction(self):
        batch = CandidateBatch((SeedSet.of([(1, 1)]),)).with_values([0.0])
        assert select_top(batch, 0.01)[0].pairs == ((1, 1),)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValidationError):
            select_top(CandidateBatch(()), 0.5)
