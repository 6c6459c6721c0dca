"""Genetic search for strong lottery tickets: bit masks over frozen random weights.

One generation grows the population with crossover offspring, single-bit
mutants and fresh migrants, then cuts it back to ``pop_size`` by lexical order
(performance first, sparsity second). Every random draw that shapes the
trajectory comes from one coordinator stream, so a run is reproducible for
any number of evaluation workers.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import net
from .datasets import Dataset, SplitDataset, round_half_up
from .errors import ConfigError, ShapeError

log = logging.getLogger(__name__)

ACCURACY = "accuracy"
LOSS = "cross_entropy"
OBJECTIVES = (ACCURACY, LOSS)

GA_STREAM = 0x6A
CANDIDATE_CHUNK = 64
HISTORY_FIELDS = ("generation", "best_perf", "best_sparsity", "pop_max_sparsity", "ever_best_sparsity")


@dataclass
class AdaptiveBoundConfig:
    initial_bound: float = 0.85
    decay_lambda: float = 0.05
    attempts_per_step: int = 1000
    min_bound: float | None = None  # None -> 1 / class_count

    def __post_init__(self):
        if self.decay_lambda <= 0:
            raise ConfigError("decay_lambda must be positive")
        if self.attempts_per_step < 1:
            raise ConfigError("attempts_per_step must be >= 1")


@dataclass
class GaConfig:
    pop_size: int = 100
    rec_rate: float = 0.3
    par_rate: float = 0.3
    mut_rate: float = 0.1
    mig_rate: float = 0.1
    objective: str = ACCURACY
    init_density: float = 0.5
    min_generations: int = 100
    stagnation_window: int = 50
    max_generations: int | None = None
    adaptive_bound: AdaptiveBoundConfig | None = None
    loss_tie_tol: float = 1e-6
    master_seed: int = 0
    crossover: str = "uniform"

    def __post_init__(self):
        if isinstance(self.adaptive_bound, dict):
            self.adaptive_bound = AdaptiveBoundConfig(**self.adaptive_bound)
        if self.pop_size < 1:
            raise ConfigError("pop_size must be >= 1")
        for name in ("rec_rate", "par_rate", "mut_rate", "mig_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if not 0.0 < self.init_density <= 1.0:
            raise ConfigError(f"init_density must lie in (0, 1], got {self.init_density}")
        if self.crossover not in ("uniform", "single_point"):
            raise ConfigError(f"unknown crossover {self.crossover!r}")
        if self.loss_tie_tol < 0:
            raise ConfigError("loss_tie_tol must be >= 0")
        if self.adaptive_bound is not None and self.max_generations is None:
            self.max_generations = 200

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "GaConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown GA config fields: {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True, eq=False)
class Individual:
    mask: np.ndarray
    performance: float
    sparsity: float
    accuracy: float

    def __post_init__(self):
        self.mask.flags.writeable = False


@dataclass
class Population:
    members: list[Individual]
    generation: int
    best_ever: Individual


@dataclass
class RunResult:
    best_mask: np.ndarray
    best_train_metrics: net.EvalMetrics
    best_test_metrics: net.EvalMetrics
    generations_run: int
    history: list[dict] = field(default_factory=list)
    final_bound: float | None = None

    def to_json(self) -> dict:
        return {
            "algorithm": "ga",
            "generations_run": self.generations_run,
            "train": self.best_train_metrics.to_json(),
            "test": self.best_test_metrics.to_json(),
            "final_bound": self.final_bound,
            "mask": net.mask_to_json(self.best_mask),
        }

    def history_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=HISTORY_FIELDS, lineterminator="\n")
        writer.writeheader()
        for rec in self.history:
            writer.writerow({k: repr(rec[k]) if isinstance(rec[k], float) else rec[k] for k in HISTORY_FIELDS})
        return buf.getvalue()


# -- fitness -------------------------------------------------------------------


class FitnessContext:
    """Scores masks over fixed parameters on the training set."""

    def __init__(self, params: net.ParamVector, train: Dataset, objective: str = ACCURACY, workers: int = 1):
        if objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {objective!r}")
        if train.dim != params.arch.in_width:
            raise ShapeError(f"dataset has {train.dim} features, network expects {params.arch.in_width}")
        self.params = params
        self.train = train
        self.objective = objective
        self.workers = max(1, int(workers))

    @property
    def n_bits(self) -> int:
        return self.params.arch.weight_count

    @property
    def class_count(self) -> int:
        return self.params.arch.out_width

    def evaluate(self, mask: np.ndarray) -> Individual:
        logits = net.forward(self.params, self.train.features, mask)
        acc = net.accuracy_from_logits(logits, self.train.labels)
        if self.objective == ACCURACY:
            perf = acc
        else:
            perf = net.cross_entropy_from_logits(logits, self.train.labels)
        return Individual(mask, perf, net.sparsity(mask), acc)

    def evaluate_many(self, masks: Sequence[np.ndarray]) -> list[Individual]:
        if self.workers == 1 or len(masks) < 2:
            return [self.evaluate(m) for m in masks]
        with ThreadPoolExecutor(self.workers) as pool:
            return list(pool.map(self.evaluate, masks))


def evaluate_fitness(mask: np.ndarray, ctx: FitnessContext) -> tuple[float, float]:
    ind = ctx.evaluate(net.check_mask(mask, ctx.params.arch))
    return ind.performance, ind.sparsity


# -- ordering --------------------------------------------------------------------


def lexical_key(ind: Individual, objective: str = ACCURACY, loss_tie_tol: float = 1e-6) -> tuple:
    """Sort key: smaller is better.

    Losses are grouped into buckets of width ``loss_tie_tol`` so that the tie
    relation stays transitive and the order total.
    """
    if objective == ACCURACY:
        return (-ind.performance, -ind.sparsity)
    if loss_tie_tol > 0:
        return (math.floor(ind.performance / loss_tie_tol), -ind.sparsity)
    return (ind.performance, -ind.sparsity)


def lexical_less(a: Individual, b: Individual, objective: str = ACCURACY, loss_tie_tol: float = 1e-6) -> bool:
    return lexical_key(a, objective, loss_tie_tol) < lexical_key(b, objective, loss_tie_tol)


def lexical_sort(members: Sequence[Individual], objective: str, loss_tie_tol: float) -> list[Individual]:
    # sorted() is stable: equal keys keep insertion order
    return sorted(members, key=lambda ind: lexical_key(ind, objective, loss_tie_tol))


def perf_better(a: float, b: float, objective: str) -> bool:
    return a > b if objective == ACCURACY else a < b


# -- operators -------------------------------------------------------------------


def generate_individual(n_bits: int, density: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 < density <= 1.0:
        raise ConfigError(f"density must lie in (0, 1], got {density}")
    return rng.random(n_bits) < density


class AdaptiveBound:
    """Acceptance threshold on training accuracy that decays exponentially.

    After every ``attempts_per_step`` consecutive rejections the decay step
    advances; the value is ``max(min_bound, b0 * exp(-lambda * step))``.
    """

    def __init__(self, cfg: AdaptiveBoundConfig, class_count: int):
        self.cfg = cfg
        self.min_bound = 1.0 / class_count if cfg.min_bound is None else cfg.min_bound
        self.step = 0
        self.rejections = 0

    @property
    def value(self) -> float:
        return max(self.min_bound, self.cfg.initial_bound * math.exp(-self.cfg.decay_lambda * self.step))

    def admits(self, ind: Individual) -> bool:
        ok = ind.accuracy >= self.value
        if ok:
            self.rejections = 0
        else:
            self.rejections += 1
            if self.rejections >= self.cfg.attempts_per_step:
                self.step += 1
                self.rejections = 0
        return ok


def generate_members(count: int, ctx: FitnessContext, cfg: GaConfig, rng: np.random.Generator,
                     bound: AdaptiveBound | None = None) -> list[Individual]:
    """The generation operator: fresh random masks, filtered by the bound if one is active."""
    if count <= 0:
        return []
    if bound is None:
        return ctx.evaluate_many([generate_individual(ctx.n_bits, cfg.init_density, rng) for _ in range(count)])
    accepted: list[Individual] = []
    while len(accepted) < count:
        batch = [generate_individual(ctx.n_bits, cfg.init_density, rng) for _ in range(CANDIDATE_CHUNK)]
        for ind in ctx.evaluate_many(batch):
            if bound.admits(ind):
                accepted.append(ind)
                if len(accepted) == count:
                    break
    return accepted


def generate_initial_population(cfg: GaConfig, ctx: FitnessContext, rng: np.random.Generator,
                                bound: AdaptiveBound | None = None) -> Population:
    members = lexical_sort(generate_members(cfg.pop_size, ctx, cfg, rng, bound), cfg.objective, cfg.loss_tie_tol)
    return Population(members, 0, members[0])


def select_parents(members: Sequence[Individual], cfg: GaConfig,
                   rng: np.random.Generator) -> list[tuple[Individual, Individual]]:
    """Each member becomes a first parent with probability ``rec_rate``; its
    partner is drawn uniformly from the top ``round(N * par_rate)``."""
    if not members:
        return []
    top = min(len(members), max(1, round_half_up(cfg.pop_size * cfg.par_rate)))
    pairs = []
    for ind in members:
        if rng.random() < cfg.rec_rate:
            pairs.append((ind, members[int(rng.integers(top))]))
    return pairs


def crossover(a: np.ndarray, b: np.ndarray, rng: np.random.Generator, mode: str = "uniform") -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"parents differ in length: {a.shape} vs {b.shape}")
    if mode == "uniform":
        return np.where(rng.random(a.size) < 0.5, a, b)
    if mode == "single_point":
        if a.size < 2:
            return a.copy()
        cut = int(rng.integers(1, a.size))
        return np.concatenate([a[:cut], b[cut:]])
    raise ConfigError(f"unknown crossover {mode!r}")


def mutate(mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Copy of ``mask`` with one uniformly chosen bit flipped."""
    child = np.array(mask, dtype=bool, copy=True)
    i = int(rng.integers(child.size))
    child[i] = not child[i]
    return child


def migrate(cfg: GaConfig, ctx: FitnessContext, rng: np.random.Generator,
            bound: AdaptiveBound | None = None) -> list[Individual]:
    return generate_members(round_half_up(cfg.pop_size * cfg.mig_rate), ctx, cfg, rng, bound)


def select_survivors(interim: Sequence[Individual], n: int, objective: str = ACCURACY,
                     loss_tie_tol: float = 1e-6) -> list[Individual]:
    return lexical_sort(interim, objective, loss_tie_tol)[:n]


def step_generation(pop: Population, cfg: GaConfig, ctx: FitnessContext, rng: np.random.Generator,
                    bound: AdaptiveBound | None = None) -> Population:
    members = pop.members
    offspring = [crossover(a.mask, b.mask, rng, cfg.crossover) for a, b in select_parents(members, cfg, rng)]
    mutants = [mutate(ind.mask, rng) for ind in members if rng.random() < cfg.mut_rate]
    new = ctx.evaluate_many(offspring + mutants)
    new += migrate(cfg, ctx, rng, bound)
    survivors = select_survivors(list(members) + new, cfg.pop_size, cfg.objective, cfg.loss_tie_tol)
    best = pop.best_ever
    if lexical_less(survivors[0], best, cfg.objective, cfg.loss_tie_tol):
        best = survivors[0]
    return Population(survivors, pop.generation + 1, best)


def evolve(cfg: GaConfig, params: net.ParamVector, data: SplitDataset, workers: int = 1,
           on_generation: Callable[[Population], None] | None = None) -> RunResult:
    rng = np.random.default_rng([cfg.master_seed, GA_STREAM])
    ctx = FitnessContext(params, data.train, cfg.objective, workers)
    bound = AdaptiveBound(cfg.adaptive_bound, ctx.class_count) if cfg.adaptive_bound else None

    pop = generate_initial_population(cfg, ctx, rng, bound)
    pick = max if cfg.objective == ACCURACY else min
    best_perf = pick(ind.performance for ind in pop.members)
    last_improvement = 0
    ever_sparsity = 0.0
    history = []

    while True:
        pop = step_generation(pop, cfg, ctx, rng, bound)
        g = pop.generation
        gen_best = pick(ind.performance for ind in pop.members)
        if perf_better(gen_best, best_perf, cfg.objective):
            best_perf = gen_best
            last_improvement = g
        pop_max_sparsity = max(ind.sparsity for ind in pop.members)
        ever_sparsity = max(ever_sparsity, pop_max_sparsity)
        history.append({
            "generation": g,
            "best_perf": pop.members[0].performance,
            "best_sparsity": pop.members[0].sparsity,
            "pop_max_sparsity": pop_max_sparsity,
            "ever_best_sparsity": ever_sparsity,
        })
        if on_generation is not None:
            on_generation(pop)
        if g % 25 == 0:
            log.debug("generation %d best %.6f sparsity %.4f", g, pop.members[0].performance, pop.members[0].sparsity)
        if g >= cfg.min_generations and g - last_improvement >= cfg.stagnation_window:
            break
        if cfg.max_generations is not None and g >= cfg.max_generations:
            break

    best = np.array(pop.best_ever.mask)
    return RunResult(
        best_mask=best,
        best_train_metrics=net.evaluate(params, data.train, best),
        best_test_metrics=net.evaluate(params, data.test, best),
        generations_run=len(history),
        history=history,
        final_bound=None if bound is None else bound.value,
    )


def post_evolutionary_prune(mask: np.ndarray, params: net.ParamVector, train: Dataset,
                            max_passes: int | None = None) -> np.ndarray:
    """Greedily zero every active bit whose removal does not lower training accuracy.

    Bits are visited in index order; a removal is kept when the accuracy after
    it is at least the running accuracy, which rises whenever a removal helps.
    Passes repeat until one removes nothing, or ``max_passes`` is reached
    (``max_passes=1`` is a single sweep).
    """
    mask = np.array(net.check_mask(mask, params.arch), dtype=bool, copy=True)
    x, y = train.features, train.labels
    acc = net.accuracy_from_logits(net.forward(params, x, mask), y)
    passes = 0
    while True:
        changed = False
        for i in np.flatnonzero(mask):
            mask[i] = False
            trial = net.accuracy_from_logits(net.forward(params, x, mask), y)
            if trial >= acc:
                acc = trial
                changed = True
            else:
                mask[i] = True
        passes += 1
        if not changed or (max_passes is not None and passes >= max_passes):
            return mask
