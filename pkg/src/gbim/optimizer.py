"""Bayesian-optimization outer loop for multiplex influence maximization.

A random initial design is evaluated with the Monte-Carlo diffusion model,
then each round (1) fits the surrogate to all observations, (2) samples an
unobserved candidate batch, scores it with expected improvement over the
BLR predictive, and keeps the top fraction, (3) evaluates the kept
candidates with the true model and grows the dataset. The answer is the
best observation seen anywhere.

Everything is driven by one master seed through a spawn tree, so a run is
bit-reproducible: same config, same history.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .acquisition import PairPool, expected_improvement, sample_candidates, select_top
from .blr import fit_blr
from .diffusion import DiffusionConfig, SeedSet, estimate_influence
from .netdata import ItemGraph, PreferenceMatrix, SocialGraph, ValidationError
from .surrogate import InfluenceSurrogate, TrainConfig, degree_features, train_surrogate

logger = logging.getLogger(__name__)

NOISE_VARIANCE_FLOOR = 1e-6


@dataclass(frozen=True)
class GbimConfig:
    k: int = 5
    initial_design: int = 1000
    rounds: int = 30
    patience: int = 10
    batch_size: int = 2000
    fraction: float = 0.01
    alpha: float = 0.75
    top_pool_fraction: float = 0.05
    sigma_w2: float = 1.0
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    round_epochs: int | None = None     # None: reuse train.epochs every round
    retrain_from_scratch: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("seed budget k must be >= 1")
        if self.initial_design < 1 or self.batch_size < 1:
            raise ValidationError("design and batch sizes must be positive")
        if self.rounds < 0 or self.patience < 1:
            raise ValidationError("rounds must be >= 0 and patience >= 1")
        if not 0.0 < self.fraction <= 1.0:
            raise ValidationError(f"fraction {self.fraction} outside (0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha {self.alpha} outside [0, 1]")
        if self.sigma_w2 <= 0:
            raise ValidationError("sigma_w2 must be positive")


class ObservationSet:
    """Deduplicated (seed set, influence) pairs with running best."""

    def __init__(self):
        self._sets: list[SeedSet] = []
        self._targets: list[float] = []
        self._keys: dict[tuple, int] = {}
        self._best_idx: int | None = None

    def add(self, seed_set: SeedSet, y: float) -> bool:
        """False if the seed set was already observed (nothing stored)."""
        key = seed_set.canonical_key()
        if key in self._keys:
            return False
        self._keys[key] = len(self._sets)
        self._sets.append(seed_set)
        self._targets.append(float(y))
        if self._best_idx is None or y > self._targets[self._best_idx]:
            self._best_idx = len(self._sets) - 1
        return True

    def __len__(self) -> int:
        return len(self._sets)

    def __contains__(self, seed_set: SeedSet) -> bool:
        return seed_set.canonical_key() in self._keys

    @property
    def seed_sets(self) -> list[SeedSet]:
        return list(self._sets)

    @property
    def targets(self) -> np.ndarray:
        return np.array(self._targets, dtype=np.float64)

    @property
    def keys(self) -> set:
        return set(self._keys)

    @property
    def best(self) -> tuple[SeedSet, float]:
        if self._best_idx is None:
            raise ValidationError("empty observation set has no best")
        return self._sets[self._best_idx], self._targets[self._best_idx]


@dataclass(frozen=True)
class RoundRecord:
    round: int
    loss: float
    best_so_far: float
    evals: int
    cumulative_evals: int
    ei_max: float
    ei_mean: float
    duration_s: float


@dataclass(frozen=True)
class GbimResult:
    best_seed_set: SeedSet
    best_influence: float
    history: tuple[RoundRecord, ...]
    total_evaluations: int
    observations: int


def random_seed_set(n: int, m: int, k: int, rng: np.random.Generator) -> SeedSet:
    """Uniform valid seed set: k distinct users matched to k distinct items."""
    users = rng.choice(n, size=k, replace=False)
    items = rng.choice(m, size=k, replace=False)
    return SeedSet(tuple(zip(users.tolist(), items.tolist())), budget=k)


def initial_design(config: GbimConfig, social: SocialGraph, items: ItemGraph,
                   prefs: PreferenceMatrix) -> ObservationSet:
    """Uniformly random deduplicated design, each point evaluated by the
    Monte-Carlo diffusion model."""
    n, m = social.n, items.m
    if config.k > min(n, m):
        raise ValidationError(f"budget {config.k} infeasible for {n} users x {m} items")
    root = np.random.SeedSequence(config.seed)
    design_ss, eval_ss = root.spawn(2)
    rng = np.random.default_rng(design_ss)
    eval_seeds = np.random.default_rng(eval_ss)
    obs = ObservationSet()
    attempts = 0
    max_attempts = 200 * config.initial_design
    while len(obs) < config.initial_design:
        attempts += 1
        if attempts > max_attempts:
            raise ValidationError(
                f"could not find {config.initial_design} distinct seed sets "
                f"(universe too small?)")
        candidate = random_seed_set(n, m, config.k, rng)
        if candidate in obs:
            continue
        y = estimate_influence(candidate, social, items, prefs, config.diffusion,
                               seed=int(eval_seeds.integers(2**63)))
        obs.add(candidate, y)
    return obs


def run(config: GbimConfig, social: SocialGraph, items: ItemGraph,
        prefs: PreferenceMatrix) -> GbimResult:
    """Full optimization loop; returns the argmax over all observations
    plus a per-round audit trail."""
    n, m = social.n, items.m
    obs = initial_design(config, social, items, prefs)
    initial_count = len(obs)

    root = np.random.SeedSequence(config.seed)
    _, _, model_ss, loop_ss = root.spawn(4)  # first two consumed by the design
    model_seed = int(np.random.default_rng(model_ss).integers(2**31))
    loop_rng = np.random.default_rng(loop_ss)
    train_cfg = replace(config.train, seed=model_seed)
    structure = degree_features(social)
    model = InfluenceSurrogate(n, m, train_cfg, structure)

    history: list[RoundRecord] = []
    cumulative = initial_count
    stall_rounds = 0
    for round_no in range(1, config.rounds + 1):
        start = time.perf_counter()
        prev_best = obs.best[1]
        if config.retrain_from_scratch and round_no > 1:
            model = InfluenceSurrogate(n, m, train_cfg, structure)
        epochs = config.train.epochs if round_no == 1 else \
            (config.round_epochs if config.round_epochs is not None
             else config.train.epochs)
        seed_sets = obs.seed_sets
        targets = obs.targets
        stats = train_surrogate(model, seed_sets, targets, epochs=epochs,
                                shuffle_seed=int(loop_rng.integers(2**31)))

        # bases change whenever the network does: recompute for everything;
        # columns are standardized (train statistics) so the weight prior
        # acts uniformly across features
        bases = model.bases(seed_sets)
        basis_mean = bases.mean(axis=0)
        basis_scale = np.maximum(bases.std(axis=0), 1e-8)
        residuals = targets - model.predict(seed_sets)
        noise_var = max(float(np.var(residuals)), NOISE_VARIANCE_FLOOR)
        y_mean = float(targets.mean())
        posterior = fit_blr((bases - basis_mean) / basis_scale,
                            targets - y_mean, config.sigma_w2, noise_var)

        pool = PairPool.from_observations(seed_sets, targets, alpha=config.alpha,
                                          top_fraction=config.top_pool_fraction)
        batch = sample_candidates(pool, n, m, config.k, config.batch_size,
                                  obs.keys, loop_rng)
        if not len(batch):
            logger.warning("round %d: no unobserved candidates left, stopping", round_no)
            break
        candidate_bases = (model.bases(batch.candidates) - basis_mean) / basis_scale
        mu, var = posterior.predict_batch(candidate_bases)
        ei = expected_improvement(mu, np.sqrt(var), obs.best[1] - y_mean)
        batch = batch.with_values(ei)

        evals = 0
        for candidate in select_top(batch, config.fraction):
            if candidate in obs:        # safety net; budget not spent
                continue
            y = estimate_influence(candidate, social, items, prefs, config.diffusion,
                                   seed=int(loop_rng.integers(2**63)))
            obs.add(candidate, y)
            evals += 1
        cumulative += evals
        history.append(RoundRecord(
            round=round_no,
            loss=stats["final_mae"],
            best_so_far=obs.best[1],
            evals=evals,
            cumulative_evals=cumulative,
            ei_max=float(ei.max()),
            ei_mean=float(ei.mean()),
            duration_s=time.perf_counter() - start,
        ))
        if obs.best[1] > prev_best:
            stall_rounds = 0
        else:
            stall_rounds += 1
            if stall_rounds >= config.patience:
                logger.info("round %d: no improvement for %d rounds, stopping",
                            round_no, stall_rounds)
                break

    best_set, best_y = obs.best
    return GbimResult(best_seed_set=best_set, best_influence=best_y,
                      history=tuple(history), total_evaluations=cumulative,
                      observations=len(obs))
