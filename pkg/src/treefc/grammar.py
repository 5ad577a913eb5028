"""Operator grammar, transition matrix and the typed random expression sampler."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import Infeasible, InvalidParams
from .expr import (
    ALL_OPS,
    DIV_EPSILON,
    MAX_POWER,
    FeatureExpr,
    Op,
    Terminal,
    UnitClass,
    apply_unit,
    make,
)

TERMINAL = "TERMINAL"
ROOT = "ROOT"
PARENTS = (ROOT,) + tuple(op.name for op in ALL_OPS)
CATEGORIES = tuple(op.name for op in ALL_OPS) + (TERMINAL,)


def uniform_matrix() -> tuple[tuple[float, ...], ...]:
    return tuple(tuple(1.0 for _ in CATEGORIES) for _ in PARENTS)


@dataclass(frozen=True)
class Grammar:
    """Typed operator grammar.

    ``transition[i][j]`` is the sampling weight of child category
    ``CATEGORIES[j]`` below parent context ``PARENTS[i]``.
    """

    max_depth: int = 6
    transition: tuple[tuple[float, ...], ...] = field(default_factory=uniform_matrix)
    epsilon: float = DIV_EPSILON
    max_power: int = MAX_POWER

    def __post_init__(self):
        if self.max_depth < 1:
            raise InvalidParams("max_depth must be >= 1")
        t = tuple(tuple(float(w) for w in row) for row in self.transition)
        if len(t) != len(PARENTS) or any(len(row) != len(CATEGORIES) for row in t):
            raise InvalidParams(f"transition matrix must be {len(PARENTS)}x{len(CATEGORIES)}")
        for name, row in zip(PARENTS, t):
            if any(w < 0 or not np.isfinite(w) for w in row):
                raise InvalidParams(f"negative or non-finite weight in row {name}")
            if row[-1] <= 0:
                raise InvalidParams(f"TERMINAL weight must be > 0 in row {name}")
        object.__setattr__(self, "transition", t)

    def weights(self, parent: str) -> np.ndarray:
        return np.asarray(self.transition[PARENTS.index(parent)])


def load_transition_matrix(path: str | Path) -> tuple[tuple[float, ...], ...]:
    """Read a delimited weights file: header row of child categories, then one
    ``PARENT,w1,w2,...`` row per parent context. Missing rows default to uniform."""
    rows = {p: [1.0] * len(CATEGORIES) for p in PARENTS}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip().upper() for h in next(reader)]
        cats = header[1:] if header and header[0] in ("", "PARENT") else header
        for c in cats:
            if c not in CATEGORIES:
                raise InvalidParams(f"unknown child category {c!r}")
        for line in reader:
            if not line or not line[0].strip():
                continue
            parent = line[0].strip().upper()
            if parent not in PARENTS:
                raise InvalidParams(f"unknown parent context {parent!r}")
            for c, w in zip(cats, line[1:]):
                rows[parent][CATEGORIES.index(c)] = float(w)
    return tuple(tuple(rows[p]) for p in PARENTS)


def write_transition_matrix(matrix, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["PARENT", *CATEGORIES])
        for p, row in zip(PARENTS, matrix):
            w.writerow([p, *(repr(float(x)) for x in row)])


class UnitTable:
    """Achievable-units table for one (grammar, schema) pair.

    ``units[d]`` holds every unit produced by some expression of depth <= d;
    ``combos[d][op][unit]`` lists the operand unit tuples, drawn from
    ``units[d - 1]``, that make ``op`` produce ``unit``.
    """

    def __init__(self, grammar: Grammar, schema: tuple[tuple[str, UnitClass], ...]):
        if not schema:
            raise Infeasible("empty schema")
        self.grammar = grammar
        self.columns_by_unit: dict[UnitClass, list[str]] = {}
        for name, unit in schema:
            self.columns_by_unit.setdefault(unit, []).append(name)
        self.units = [frozenset(), frozenset(self.columns_by_unit)]
        self.combos: list[dict] = [{}, {}]
        for d in range(2, grammar.max_depth + 1):
            prev = sorted(self.units[d - 1])
            table: dict[Op, dict[UnitClass, list[tuple[UnitClass, ...]]]] = {}
            for op in ALL_OPS:
                by_unit: dict[UnitClass, list] = {}
                for operands in itertools.product(prev, repeat=op.arity):
                    out = apply_unit(op, operands, grammar.max_power)
                    if out is not None:
                        by_unit.setdefault(out, []).append(operands)
                table[op] = by_unit
            self.combos.append(table)
            reachable = set(self.units[d - 1])
            for by_unit in table.values():
                reachable.update(by_unit)
            self.units.append(frozenset(reachable))

    def feasible(self, unit: UnitClass | None, depth: int) -> bool:
        if unit is None:
            return True
        return unit in self.units[min(depth, self.grammar.max_depth)]


@lru_cache(maxsize=64)
def _table(grammar: Grammar, schema_items: tuple) -> UnitTable:
    return UnitTable(grammar, schema_items)


def unit_table(grammar: Grammar, schema: Mapping[str, UnitClass]) -> UnitTable:
    return _table(grammar, tuple(schema.items()))


def sample_expr(
    grammar: Grammar,
    schema: Mapping[str, UnitClass],
    rng: np.random.Generator,
    required_unit: UnitClass | None = None,
    max_depth: int | None = None,
) -> FeatureExpr:
    """Draw a well-typed expression of depth <= ``max_depth`` (default: the grammar's).

    Child categories are drawn proportionally to the transition weights of the
    parent context, restricted to categories that can still produce the needed
    unit within the remaining depth, so sampling never backtracks.
    """
    table = unit_table(grammar, schema)
    depth = grammar.max_depth if max_depth is None else min(max_depth, grammar.max_depth)
    if depth < 1 or not table.feasible(required_unit, depth):
        raise Infeasible(f"no expression of unit {required_unit} within depth {depth}")
    return _sample(table, rng, ROOT, required_unit, depth)


def _options(table: UnitTable, unit, depth):
    """Feasible categories and, per operator, the admissible operand-unit tuples."""
    cats: dict[str, list] = {}
    terminals = table.columns_by_unit if unit is None else {unit: table.columns_by_unit.get(unit, [])}
    if any(terminals.values()):
        cats[TERMINAL] = []
    if depth >= 2:
        for op, by_unit in table.combos[depth].items():
            combos = [c for u, cs in by_unit.items() for c in cs] if unit is None else by_unit.get(unit, [])
            if combos:
                cats[op.name] = combos
    return cats


def _sample(table: UnitTable, rng, parent, unit, depth):
    cats = _options(table, unit, depth)
    names = list(cats)
    w = table.grammar.weights(parent)[[CATEGORIES.index(c) for c in names]]
    if w.sum() <= 0:
        # every feasible category has zero weight in this row: fall back to uniform
        w = np.ones(len(names))
    choice = names[rng.choice(len(names), p=w / w.sum())]
    if choice == TERMINAL:
        if unit is None:
            pool = [c for cols in table.columns_by_unit.values() for c in cols]
        else:
            pool = table.columns_by_unit[unit]
        return Terminal(pool[rng.integers(len(pool))])
    combos = cats[choice]
    operands = combos[rng.integers(len(combos))]
    op = Op[choice]
    return make(op, *(_sample(table, rng, choice, u, depth - 1) for u in operands))
