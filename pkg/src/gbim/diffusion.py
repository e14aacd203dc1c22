"""Multiplex diffusion: per-item propagation layers coupled by an association step.

The model runs in discrete steps over an n-user, m-layer state. Step 0
activates each seeded (user, item) pair on that item's layer. Every later
step first runs the association mechanism for users newly activated since
the previous step: an activated user self-activates, with probability
beta * preference, on layers of items adjacent (in the item graph) to the
item that activated them, cascading along the item graph for that user.
One round of intra-layer diffusion follows on every layer, either
threshold-based (Multi-LT, threshold 1 - preference) or push-based
(Multi-IC, edge probability weight * target preference). The run stops
when a full step activates nobody.

Users activated by association take part in the same step's diffusion
round. Multi-LT thresholds are the deterministic values 1 - p, so with
beta = 0 the whole model is deterministic. Threshold-0 users (p = 1) still
need at least one active in-neighbor; nodes never self-activate on layers
the cascade has not reached.

`exact_influence` is a brute-force oracle for tiny instances: it
enumerates every outcome of every Bernoulli event the cascade can consult
and averages the resulting totals, weighted by probability. It is written
against its own naive cascade (sets, per-round weight sums) precisely so
it does not share code with the fast simulator it is used to check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .netdata import ItemGraph, PreferenceMatrix, SocialGraph, ValidationError

MULTI_LT = "multi-lt"
MULTI_IC = "multi-ic"

ORACLE_EVENT_LIMIT = 25


class OracleInfeasibleError(RuntimeError):
    """Instance has too many random events for exhaustive enumeration."""


@dataclass(frozen=True)
class SeedSet:
    """Budgeted set of (user, item) pairs; users and items each used at most once."""

    pairs: tuple[tuple[int, int], ...]
    budget: int

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple((int(u), int(v)) for u, v in self.pairs))
        if self.budget < 0:
            raise ValidationError(f"negative budget {self.budget}")
        if len(self.pairs) > self.budget:
            raise ValidationError(f"{len(self.pairs)} pairs exceed budget {self.budget}")
        users = [u for u, _ in self.pairs]
        items = [v for _, v in self.pairs]
        if len(set(users)) != len(users):
            raise ValidationError("seed set repeats a user")
        if len(set(items)) != len(items):
            raise ValidationError("seed set repeats an item")
        if any(u < 0 for u in users) or any(v < 0 for v in items):
            raise ValidationError("negative id in seed set")

    @classmethod
    def of(cls, pairs, budget: int | None = None) -> "SeedSet":
        pairs = tuple(pairs)
        return cls(pairs, len(pairs) if budget is None else budget)

    def canonical_key(self) -> tuple[tuple[int, int], ...]:
        return tuple(sorted(self.pairs))

    def validate_against(self, n: int, m: int) -> None:
        for u, v in self.pairs:
            if u >= n or v >= m:
                raise ValidationError(
                    f"seed pair ({u}, {v}) out of range for {n} users x {m} items")

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class DiffusionConfig:
    model: str = MULTI_IC
    beta: float = 0.3
    simulations: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.model not in (MULTI_LT, MULTI_IC):
            raise ValidationError(f"unknown diffusion model {self.model!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValidationError(f"beta {self.beta} outside [0, 1]")
        if self.simulations < 1:
            raise ValidationError("need at least one simulation")


@dataclass(frozen=True)
class DiffusionOutcome:
    """Per-layer activation counts and their sum."""

    sigma: np.ndarray
    total: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total", int(self.sigma.sum()))


def _check_instance(seed_set: SeedSet, social: SocialGraph, items: ItemGraph,
                    prefs: PreferenceMatrix) -> None:
    prefs.check_dims(social, items)
    seed_set.validate_against(social.n, items.m)


def simulate_once(seed_set: SeedSet, social: SocialGraph, items: ItemGraph,
                  prefs: PreferenceMatrix, config: DiffusionConfig,
                  rng: np.random.Generator) -> DiffusionOutcome:
    """One stochastic run; pure given the rng stream."""
    _check_instance(seed_set, social, items, prefs)
    n, m = social.n, items.m
    p = prefs.values
    beta = config.beta
    is_lt = config.model == MULTI_LT

    active = np.zeros((n, m), dtype=bool)
    sigma = np.zeros(m, dtype=np.int64)
    assoc_frontier: list[tuple[int, int]] = []   # awaiting their association run
    push_frontier: list[tuple[int, int]] = []    # Multi-IC: awaiting their push round
    inflow = np.zeros((n, m)) if is_lt else None
    dirty: dict[int, set[int]] = {}              # layer -> users with fresh inflow

    def activate(u: int, k: int) -> None:
        active[u, k] = True
        sigma[k] += 1
        assoc_frontier.append((u, k))
        push_frontier.append((u, k))
        if is_lt:
            touched = dirty.setdefault(k, set())
            for v, w in social.out_neighbors(u):
                inflow[v, k] += w
                touched.add(v)

    for u, v in seed_set.pairs:
        activate(u, v)

    while True:
        new_this_step = 0

        # association phase: activate() appends onto the queue being scanned,
        # so a user's cascade along the item graph runs to completion in-phase
        if beta > 0.0:
            queue = assoc_frontier
            i = 0
            while i < len(queue):
                u, j = queue[i]
                i += 1
                for k2 in items.neighbors(j):
                    if not active[u, k2]:
                        pr = beta * p[u, k2]
                        if pr > 0.0 and rng.random() < pr:
                            activate(u, k2)
                            new_this_step += 1
        assoc_frontier = []

        # diffusion phase
        if is_lt:
            # synchronous round: collect against the pre-round inflow, then
            # activate (scatters from this round only count next round)
            round_new = []
            for k in sorted(dirty):
                touched = dirty[k]
                for i_user in sorted(touched):
                    if not active[i_user, k] and inflow[i_user, k] >= 1.0 - p[i_user, k]:
                        round_new.append((i_user, k))
                touched.clear()
            for i_user, k in round_new:
                activate(i_user, k)
            new_this_step += len(round_new)
        else:
            pushers = push_frontier
            push_frontier = []
            for u, k in pushers:
                for v, w in social.out_neighbors(u):
                    if not active[v, k]:
                        pr = w * p[v, k]
                        if pr > 0.0 and rng.random() < pr:
                            activate(v, k)
                            new_this_step += 1

        if new_this_step == 0:
            break
    return DiffusionOutcome(sigma)


def estimate_influence(seed_set: SeedSet, social: SocialGraph, items: ItemGraph,
                       prefs: PreferenceMatrix, config: DiffusionConfig,
                       seed: int | None = None) -> float:
    """Mean total influence over config.simulations independent runs.

    Each run gets its own stream spawned from the master seed, so the
    result is bit-reproducible and independent of evaluation order.
    """
    _check_instance(seed_set, social, items, prefs)
    master = config.seed if seed is None else seed
    if config.model == MULTI_LT and config.beta == 0.0:
        # fully deterministic model: one run is the exact mean
        rng = np.random.default_rng(np.random.SeedSequence(master))
        return float(simulate_once(seed_set, social, items, prefs, config, rng).total)
    children = np.random.SeedSequence(master).spawn(config.simulations)
    total = 0
    for child in children:
        rng = np.random.default_rng(child)
        total += simulate_once(seed_set, social, items, prefs, config, rng).total
    return total / config.simulations


# ---------------------------------------------------------------------------
# exact oracle
# ---------------------------------------------------------------------------


def count_random_events(social: SocialGraph, items: ItemGraph,
                        prefs: PreferenceMatrix, config: DiffusionConfig) -> int:
    """Bernoulli events with probability strictly inside (0, 1): IC edge
    trials per layer plus association trials per (user, item pair). Events
    with probability 0 or 1 never branch. Seed-set independent."""
    p = prefs.values
    count = 0
    if config.model == MULTI_IC:
        for t, w in zip(social.targets.tolist(), social.weights.tolist()):
            for k in range(items.m):
                if 0.0 < w * p[t, k] < 1.0:
                    count += 1
    if config.beta > 0.0:
        for u in range(social.n):
            for a, b in items.edges:
                for dst in (b, a):
                    if 0.0 < config.beta * p[u, dst] < 1.0:
                        count += 1
    return count


class _Branch(Exception):
    def __init__(self, key, prob):
        self.key = key
        self.prob = prob


def _oracle_cascade(seed_pairs, social: SocialGraph, items: ItemGraph,
                    p: np.ndarray, config: DiffusionConfig, decide) -> int:
    """Deterministic cascade given a coin oracle; naive set-based restatement
    of the model, deliberately sharing nothing with simulate_once."""
    active = set(seed_pairs)
    assoc_pending = list(seed_pairs)
    push_pending = list(seed_pairs)
    while True:
        changed = 0
        queue = assoc_pending
        assoc_pending = []
        i = 0
        while i < len(queue):
            u, j = queue[i]
            i += 1
            for k2 in items.neighbors(j):
                if (u, k2) not in active:
                    pr = config.beta * p[u, k2]
                    if pr > 0.0 and decide(("as", u, j, k2), pr):
                        active.add((u, k2))
                        queue.append((u, k2))
                        push_pending.append((u, k2))
                        changed += 1
        if config.model == MULTI_LT:
            newly = []
            for k in range(items.m):
                for i_user in range(social.n):
                    if (i_user, k) in active:
                        continue
                    s = sum(w for src, w in social.in_neighbors(i_user)
                            if (src, k) in active)
                    if s > 0.0 and s >= 1.0 - p[i_user, k]:
                        newly.append((i_user, k))
            for pair in newly:
                active.add(pair)
                assoc_pending.append(pair)
            changed += len(newly)
        else:
            pushers = push_pending
            push_pending = []
            for u, k in pushers:
                for v, w in social.out_neighbors(u):
                    if (v, k) not in active:
                        pr = w * p[v, k]
                        if pr > 0.0 and decide(("ic", u, v, k), pr):
                            active.add((v, k))
                            assoc_pending.append((v, k))
                            push_pending.append((v, k))
                            changed += 1
        if changed == 0:
            return len(active)


def exact_influence(seed_set: SeedSet, social: SocialGraph, items: ItemGraph,
                    prefs: PreferenceMatrix, config: DiffusionConfig) -> float:
    """Exact expected total influence by exhaustive outcome enumeration.

    Walks the decision tree of coins the cascade actually consults,
    replaying the cascade for each prefix of decided outcomes; refuses
    instances with more than ORACLE_EVENT_LIMIT nondeterministic events.
    """
    _check_instance(seed_set, social, items, prefs)
    n_events = count_random_events(social, items, prefs, config)
    if n_events > ORACLE_EVENT_LIMIT:
        raise OracleInfeasibleError(
            f"{n_events} random events exceed the enumeration limit "
            f"of {ORACLE_EVENT_LIMIT}")
    p = prefs.values
    decisions: dict[tuple, bool] = {}

    def run() -> int:
        def decide(key, pr):
            if pr >= 1.0:
                return True
            if key in decisions:
                return decisions[key]
            raise _Branch(key, pr)
        return _oracle_cascade(seed_set.pairs, social, items, p, config, decide)

    acc = 0.0
    weight_check = 0.0

    def expand(weight: float) -> None:
        nonlocal acc, weight_check
        try:
            total = run()
        except _Branch as b:
            decisions[b.key] = True
            expand(weight * b.prob)
            decisions[b.key] = False
            expand(weight * (1.0 - b.prob))
            del decisions[b.key]
            return
        acc += weight * total
        weight_check += weight

    expand(1.0)
    assert abs(weight_check - 1.0) < 1e-9, "outcome probabilities must sum to 1"
    return acc
