"""Grammar-constrained genetic programming over unit-typed expressions.

Fitness is the split criterion of the node being induced, so one call to
:func:`evolve` builds one splitting feature.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .criteria import SplitTask
from .errors import Degenerate, Infeasible, InvalidParams
from .expr import (
    FeatureExpr,
    UnitClass,
    apply_unit,
    canonicalize,
    replace_at,
    structural_key,
)
from .grammar import Grammar, sample_expr

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GpConfig:
    population_size: int = 500
    generations: int = 70
    generations_down: int = 6
    population_size_down: int | None = None
    crossover_prob: float = 0.9
    mutation_prob: float = 0.1
    tournament_size: int = 3
    elitism: int = 1
    max_depth: int = 6
    retry_cap: int = 20
    seed: int | None = None

    def __post_init__(self):
        if self.population_size < 2:
            raise InvalidParams("population_size must be >= 2")
        if self.generations < 1 or self.generations_down < 1:
            raise InvalidParams("generations must be >= 1")
        if not (0 <= self.crossover_prob <= 1 and 0 <= self.mutation_prob <= 1):
            raise InvalidParams("probabilities must lie in [0, 1]")
        if self.tournament_size < 1:
            raise InvalidParams("tournament_size must be >= 1")
        if not 0 <= self.elitism <= self.population_size:
            raise InvalidParams("elitism must be in [0, population_size]")
        if self.retry_cap < 1:
            raise InvalidParams("retry_cap must be >= 1")

    def down(self) -> "GpConfig":
        """The reduced "GP down" setting used inside ensembles."""
        return replace(
            self,
            generations=self.generations_down,
            population_size=self.population_size_down or self.population_size,
        )


@dataclass
class Individual:
    expr: FeatureExpr
    fitness: float | None = None


class _Annotations:
    """Per-schema cache of (path, subtree, unit) listings."""

    def __init__(self, schema: Mapping[str, UnitClass], max_power: int):
        self.schema = schema
        self.max_power = max_power
        self._cache: dict[FeatureExpr, list] = {}

    def __call__(self, expr: FeatureExpr):
        out = self._cache.get(expr)
        if out is None:
            out = []
            self._walk(expr, (), out)
            if len(self._cache) > 50_000:
                self._cache.clear()
            self._cache[expr] = out
        return out

    def _walk(self, expr, path, out):
        slot = len(out)
        out.append(None)
        units = tuple(self._walk(c, path + (i,), out) for i, c in enumerate(expr.children()))
        unit = self.schema[expr.name] if not units else apply_unit(expr.op, units, self.max_power)
        out[slot] = (path, expr, unit)
        return unit


def init_population(grammar: Grammar, schema: Mapping[str, UnitClass], config: GpConfig,
                    rng: np.random.Generator) -> list[Individual]:
    """Ramped initialization: target depths cycle through 2..max_depth."""
    if not schema:
        raise Infeasible("empty schema")
    depths = list(range(2, grammar.max_depth + 1)) or [1]
    return [Individual(sample_expr(grammar, schema, rng, max_depth=depths[i % len(depths)]))
            for i in range(config.population_size)]


def crossover_unit_safe(a: FeatureExpr, b: FeatureExpr, schema: Mapping[str, UnitClass], rng: np.random.Generator,
                        retry_cap: int = 20, max_depth: int = 6, annotate=None) -> tuple[FeatureExpr, FeatureExpr]:
    """Swap a random subtree of ``a`` with a same-unit subtree of ``b``.

    Both children stay well-typed and within ``max_depth``; after
    ``retry_cap`` unsuccessful draws the parents are returned unchanged.
    """
    annotate = annotate or _Annotations(schema, 4)
    nodes_a, nodes_b = annotate(a), annotate(b)
    for _ in range(retry_cap):
        path_a, sub_a, unit = nodes_a[rng.integers(len(nodes_a))]
        matches = [
            (path_b, sub_b)
            for path_b, sub_b, unit_b in nodes_b
            if unit_b == unit
            and len(path_a) + sub_b.depth <= max_depth
            and len(path_b) + sub_a.depth <= max_depth
        ]
        if matches:
            path_b, sub_b = matches[rng.integers(len(matches))]
            return replace_at(a, path_a, sub_b), replace_at(b, path_b, sub_a)
    return a, b


def mutate(ind: Individual, grammar: Grammar, schema: Mapping[str, UnitClass], rng: np.random.Generator,
           annotate=None) -> Individual:
    """Replace a uniformly chosen subtree by a fresh sample of the same unit."""
    annotate = annotate or _Annotations(schema, grammar.max_power)
    nodes = annotate(ind.expr)
    path, _, unit = nodes[rng.integers(len(nodes))]
    fresh = sample_expr(grammar, schema, rng, required_unit=unit, max_depth=grammar.max_depth - len(path))
    return Individual(replace_at(ind.expr, path, fresh))


@dataclass
class _Scored:
    fitness: float
    size: int
    key: tuple

    def rank(self):
        return (-self.fitness, self.size, self.key)


@dataclass
class EvolveTrace:
    best_fitness: list[float] = field(default_factory=list)
    evaluations: int = 0


def evolve(grammar: Grammar, schema: Mapping[str, UnitClass], task: SplitTask, config: GpConfig,
           rng: np.random.Generator, jobs: int = 1, trace: EvolveTrace | None = None) -> FeatureExpr:
    """Evolve one splitting feature for the node described by ``task``.

    Returns the best expression ever seen; ties go to fewer nodes, then to the
    canonical structural order. Raises :class:`Degenerate` when nothing
    achieves a positive score.
    """
    annotate = _Annotations(schema, grammar.max_power)
    cache: dict[FeatureExpr, _Scored] = {}
    trace = trace if trace is not None else EvolveTrace()
    pool = ThreadPoolExecutor(max_workers=jobs) if jobs > 1 else None

    def score_all(pop: list[Individual]) -> list[_Scored]:
        canon = [canonicalize(ind.expr) for ind in pop]
        todo = list(dict.fromkeys(c for c in canon if c not in cache))
        results = list(pool.map(task.fitness, todo)) if pool else [task.fitness(c) for c in todo]
        for c, f in zip(todo, results):
            cache[c] = _Scored(f, c.size, structural_key(c))
        trace.evaluations += len(todo)
        out = []
        for ind, c in zip(pop, canon):
            s = cache[c]
            ind.fitness = s.fitness
            # parsimony looks at the individual's own size, canonical order breaks the rest
            out.append(_Scored(s.fitness, ind.expr.size, s.key))
        return out

    def tournament(scored):
        idx = rng.integers(len(scored), size=config.tournament_size)
        return int(min(idx, key=lambda i: (scored[i].rank(), i)))

    try:
        pop = init_population(grammar, schema, config, rng)
        scored = score_all(pop)
        best_i = min(range(len(pop)), key=lambda i: scored[i].rank())
        best, best_rank = pop[best_i].expr, scored[best_i].rank()
        trace.best_fitness.append(-best_rank[0])
        for gen in range(config.generations):
            order = sorted(range(len(pop)), key=lambda i: (scored[i].rank(), i))
            nxt = [Individual(pop[i].expr, pop[i].fitness) for i in order[: config.elitism]]
            while len(nxt) < config.population_size:
                a = pop[tournament(scored)]
                r = rng.random()
                if r < config.crossover_prob:
                    b = pop[tournament(scored)]
                    c1, c2 = crossover_unit_safe(a.expr, b.expr, schema, rng, config.retry_cap,
                                                 grammar.max_depth, annotate)
                    nxt.append(Individual(c1))
                    if len(nxt) < config.population_size:
                        nxt.append(Individual(c2))
                elif r < config.crossover_prob + config.mutation_prob:
                    nxt.append(mutate(a, grammar, schema, rng, annotate))
                else:
                    nxt.append(Individual(a.expr, a.fitness))
            pop = nxt
            scored = score_all(pop)
            gen_i = min(range(len(pop)), key=lambda i: scored[i].rank())
            if scored[gen_i].rank() < best_rank:
                best, best_rank = pop[gen_i].expr, scored[gen_i].rank()
            trace.best_fitness.append(-best_rank[0])
            log.debug("generation %d best fitness %.6g (%s)", gen + 1, -best_rank[0], best)
    finally:
        if pool:
            pool.shutdown()
    if not -best_rank[0] > 0:
        raise Degenerate("no individual achieved a positive split score")
    return best
