"""Exact model counting.

Two independent routes: vectorised enumeration (split into two halves of
the variables, clause-satisfaction bitsets joined pairwise) and a DPLL
counter with unit propagation. Counts are Python ints, so they never
overflow.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .cnf import CnfFormula

ENUM_VAR_CAP = 32


class CountTimeout(RuntimeError):
    pass


class VariableCapExceeded(ValueError):
    pass


@dataclass(frozen=True)
class CountResult:
    model_count: int

    @property
    def log_count(self) -> float | None:
        """Natural log of the count; ``None`` when the formula is unsatisfiable."""
        if self.model_count <= 0:
            return None
        return math.log(self.model_count)

    @property
    def satisfiable(self) -> bool:
        return self.model_count > 0


def _clause_bits(f: CnfFormula, variables: range) -> np.ndarray:
    """Bitset rows: bit c of row a is set iff assignment a (over ``variables``)
    satisfies clause c through one of those variables."""
    k = len(variables)
    words = max(1, (f.num_clauses + 63) // 64)
    idx = np.arange(1 << k, dtype=np.int64)
    bits = np.zeros((1 << k, words), dtype=np.uint64)
    pos = {v: j for j, v in enumerate(variables)}
    for c, clause in enumerate(f.clauses):
        sat = np.zeros(1 << k, dtype=bool)
        for lit in clause:
            j = pos.get(lit.variable)
            if j is None:
                continue
            bit = ((idx >> j) & 1).astype(bool)
            sat |= bit if lit.positive else ~bit
        bits[sat, c // 64] |= np.uint64(1) << np.uint64(c % 64)
    return bits


def count_models(f: CnfFormula, max_vars: int = ENUM_VAR_CAP) -> CountResult:
    """Count satisfying assignments by exhaustive enumeration."""
    if f.num_vars > max_vars:
        raise VariableCapExceeded(
            f"enumeration supports at most {max_vars} variables, formula has {f.num_vars}"
        )
    if f.has_empty_clause:
        return CountResult(0)
    if f.num_clauses == 0:
        return CountResult(1 << f.num_vars)
    n = f.num_vars
    k = n // 2
    low = _clause_bits(f, range(1, k + 1))
    high = _clause_bits(f, range(k + 1, n + 1))
    full = np.zeros(low.shape[1], dtype=np.uint64)
    for c in range(f.num_clauses):
        full[c // 64] |= np.uint64(1) << np.uint64(c % 64)
    need = full & ~high
    needs, mult = np.unique(need, axis=0, return_counts=True)
    low_rows, low_mult = np.unique(low, axis=0, return_counts=True)
    total = 0
    for row, times in zip(needs, mult):
        ok = np.all((low_rows & row) == row, axis=1)
        total += int(times) * int(low_mult[ok].sum())
    return CountResult(total)


def count_models_dpll(f: CnfFormula, time_budget: float | None = None) -> CountResult:
    """Count models with DPLL: unit propagation plus branching.

    Satisfied leaves contribute ``2**free``. Variable-disjoint clause groups
    are counted separately, multiplied, and cached by their clause set.
    Branching picks the variable with
    most occurrences in the shortest open clauses, lowest index on ties.
    """
    deadline = None if time_budget is None else time.monotonic() + time_budget
    clauses = [tuple(c.to_ints()) for c in f.clauses]
    return CountResult(_dpll(clauses, f.num_vars, deadline, {}))


def _assign(clauses, lit):
    """Simplify clauses under a true literal; None signals a conflict."""
    out = []
    for c in clauses:
        if lit in c:
            continue
        if -lit in c:
            c = tuple(x for x in c if x != -lit)
            if not c:
                return None
        out.append(c)
    return out


def _dpll(clauses, free: int, deadline, cache: dict) -> int:
    if deadline is not None and time.monotonic() > deadline:
        raise CountTimeout("DPLL time budget exceeded")
    if any(len(c) == 0 for c in clauses):
        return 0
    while True:
        unit = next((c[0] for c in clauses if len(c) == 1), None)
        if unit is None:
            break
        clauses = _assign(clauses, unit)
        free -= 1
        if clauses is None:
            return 0
    if not clauses:
        return 1 << free
    parts = _components(clauses)
    total = 1 << (free - sum(len(vs) for vs, _ in parts))
    for vs, part in parts:
        key = tuple(sorted(part))
        if key not in cache:
            cache[key] = _branch(part, len(vs), deadline, cache)
        total *= cache[key]
        if total == 0:
            return 0
    return total


def _components(clauses):
    """Split clauses into groups that share no variables: [(variables, clauses)]."""
    parent: dict[int, int] = {}

    def find(v):
        while parent.setdefault(v, v) != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for c in clauses:
        root = find(abs(c[0]))
        for x in c[1:]:
            other = find(abs(x))
            if other != root:
                parent[other] = root
    groups: dict[int, tuple[set, list]] = {}
    for c in clauses:
        vs, cs = groups.setdefault(find(abs(c[0])), (set(), []))
        vs.update(abs(x) for x in c)
        cs.append(c)
    return [groups[k] for k in sorted(groups)]


def _branch(clauses, free: int, deadline, cache: dict) -> int:
    shortest = min(len(c) for c in clauses)
    occ: dict[int, int] = {}
    for c in clauses:
        if len(c) == shortest:
            for x in c:
                occ[abs(x)] = occ.get(abs(x), 0) + 1
    var = min(occ, key=lambda v: (-occ[v], v))
    total = 0
    for lit in (var, -var):
        sub = _assign(clauses, lit)
        if sub is not None:
            total += _dpll(sub, free - 1, deadline, cache)
    return total


def count_shannon(f: CnfFormula) -> CountResult:
    """Plain Shannon expansion: Z(F) = Z(F|x=0) + Z(F|x=1), in variable order.

    No propagation, no components, no cache; a branch ends when a clause
    is falsified or every clause is satisfied.
    """
    clauses = [tuple(lit.to_int() for lit in c) for c in f.clauses]
    return CountResult(_shannon(clauses, 1, f.num_vars))


def _shannon(clauses, var: int, n: int) -> int:
    if not clauses:
        return 1 << (n - var + 1)
    total = 0
    for lit in (-var, var):
        rest = []
        for c in clauses:
            if lit in c:
                continue
            c = tuple(x for x in c if x != -lit)
            if not c:
                break
            rest.append(c)
        else:
            total += _shannon(rest, var + 1, n)
    return total


def count(f: CnfFormula, time_budget: float | None = None) -> CountResult:
    """Default exact counter: enumeration for small formulas, DPLL above."""
    if f.num_vars <= 22:
        return count_models(f)
    return count_models_dpll(f, time_budget)
