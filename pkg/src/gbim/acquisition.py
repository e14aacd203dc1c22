"""Expected-improvement scoring and explore-exploit candidate generation.

Candidates are produced pair by pair: with probability alpha a pair is
drawn from the exploit pool (pairs harvested from the top 5 percent of
observed seed sets, frequency-proportional), otherwise uniformly from all
(user, item) pairs. Draws that would reuse a user or item are rejected
and redrawn; whole candidates that collide with already-observed seed
sets are discarded and resampled under a bounded retry budget, after
which a partial batch is returned with a warning.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .diffusion import SeedSet
from .netdata import ValidationError

logger = logging.getLogger(__name__)

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def expected_improvement(mu, sigma, best):
    """EI of a Normal(mu, sigma^2) belief against the incumbent `best`.

    sigma * (gamma * C(gamma) + N(gamma)) with gamma = (mu - best) / sigma,
    C and N the standard normal CDF and pdf. Total function: sigma = 0
    degenerates to max(0, mu - best). Scalars in, scalar out; arrays
    broadcast.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < 0):
        raise ValidationError("sigma must be nonnegative")
    scalar = mu.ndim == 0 and sigma.ndim == 0
    mu, sigma = np.atleast_1d(mu), np.atleast_1d(sigma)
    mu, sigma = np.broadcast_arrays(mu, sigma)
    out = np.maximum(mu - best, 0.0)
    positive = sigma > 0
    if np.any(positive):
        gamma = (mu[positive] - best) / sigma[positive]
        pdf = np.exp(-0.5 * gamma * gamma) * _INV_SQRT_2PI
        out = out.copy()
        out[positive] = sigma[positive] * (gamma * ndtr(gamma) + pdf)
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class PairPool:
    """Frequency table of pairs seen in the top observed seed sets."""

    pairs: tuple[tuple[int, int], ...]
    counts: np.ndarray
    alpha: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha {self.alpha} outside [0, 1]")
        if len(self.pairs) and self.counts.min() < 1:
            raise ValidationError("pool frequencies must be >= 1")
        cum = np.cumsum(self.counts, dtype=np.float64)
        object.__setattr__(self, "_cum", cum)

    @classmethod
    def from_observations(cls, seed_sets, targets, alpha: float,
                          top_fraction: float = 0.05) -> "PairPool":
        """Harvest pairs from the ceil(top_fraction * N) highest-influence
        observations; ties broken by canonical pair order for determinism."""
        targets = np.asarray(targets, dtype=np.float64)
        order = sorted(range(len(seed_sets)),
                       key=lambda i: (-targets[i], seed_sets[i].canonical_key()))
        keep = order[:max(1, math.ceil(top_fraction * len(seed_sets)))] if seed_sets else []
        freq: dict[tuple[int, int], int] = {}
        for i in keep:
            for pair in seed_sets[i].pairs:
                freq[pair] = freq.get(pair, 0) + 1
        pairs = tuple(sorted(freq))
        return cls(pairs=pairs,
                   counts=np.array([freq[p] for p in pairs], dtype=np.int64),
                   alpha=alpha)

    def __len__(self) -> int:
        return len(self.pairs)

    def sample(self, rng: np.random.Generator) -> tuple[int, int]:
        cum = self._cum
        idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        return self.pairs[min(idx, len(self.pairs) - 1)]


@dataclass(frozen=True)
class CandidateBatch:
    """Unobserved candidate seed sets, optionally carrying acquisition values."""

    candidates: tuple[SeedSet, ...]
    values: np.ndarray | None = None

    def with_values(self, values) -> "CandidateBatch":
        values = np.asarray(values, dtype=np.float64)
        if len(values) != len(self.candidates):
            raise ValidationError("one acquisition value per candidate required")
        return CandidateBatch(self.candidates, values)

    def __len__(self) -> int:
        return len(self.candidates)


_PAIR_RETRIES = 200


def _draw_pair(pool: PairPool, n: int, m: int, used_users: set, used_items: set,
               rng: np.random.Generator) -> tuple[int, int]:
    for _ in range(_PAIR_RETRIES):
        if len(pool) and pool.alpha > 0 and rng.random() < pool.alpha:
            u, v = pool.sample(rng)
        else:
            u = int(rng.integers(n))
            v = int(rng.integers(m))
        if u not in used_users and v not in used_items:
            return u, v
    # uniqueness rejection stalled (tiny universe or saturated pool):
    # fall back to an explicit uniform draw over the remaining valid pairs
    free_u = [u for u in range(n) if u not in used_users]
    free_v = [v for v in range(m) if v not in used_items]
    return free_u[int(rng.integers(len(free_u)))], free_v[int(rng.integers(len(free_v)))]


def sample_candidates(pool: PairPool, n: int, m: int, k: int, count: int,
                      observed_keys: set, rng: np.random.Generator,
                      retries_per_candidate: int = 20) -> CandidateBatch:
    """Draw `count` distinct, never-observed, constraint-valid seed sets."""
    if count < 1:
        raise ValidationError("candidate count must be >= 1")
    if k < 1 or k > min(n, m):
        raise ValidationError(f"budget {k} infeasible for {n} users x {m} items")
    candidates: list[SeedSet] = []
    seen: set = set()
    attempts_left = count * retries_per_candidate
    while len(candidates) < count and attempts_left > 0:
        attempts_left -= 1
        used_users: set[int] = set()
        used_items: set[int] = set()
        pairs = []
        for _ in range(k):
            u, v = _draw_pair(pool, n, m, used_users, used_items, rng)
            used_users.add(u)
            used_items.add(v)
            pairs.append((u, v))
        candidate = SeedSet(tuple(pairs), budget=k)
        key = candidate.canonical_key()
        if key in observed_keys or key in seen:
            continue
        seen.add(key)
        candidates.append(candidate)
    if len(candidates) < count:
        logger.warning("candidate sampling exhausted retries: %d of %d produced",
                       len(candidates), count)
    return CandidateBatch(tuple(candidates))


def select_top(batch: CandidateBatch, fraction: float) -> list[SeedSet]:
    """ceil(fraction * |batch|) candidates with the highest acquisition
    values; ties broken by lexicographic pair order."""
    if not 0.0 < fraction <= 1.0:
        raise ValidationError(f"fraction {fraction} outside (0, 1]")
    if not len(batch):
        raise ValidationError("cannot select from an empty batch")
    if batch.values is None:
        raise ValidationError("batch has no acquisition values")
    take = math.ceil(fraction * len(batch))
    order = sorted(range(len(batch)),
                   key=lambda i: (-batch.values[i], batch.candidates[i].canonical_key()))
    return [batch.candidates[i] for i in order[:take]]
