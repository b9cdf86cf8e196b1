"""CNF formulas, DIMACS reading/writing and assignment evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

log = logging.getLogger(__name__)


class DimacsError(ValueError):
    """Malformed DIMACS input."""


@dataclass(frozen=True, order=True)
class Literal:
    variable: int
    positive: bool = True

    def __post_init__(self):
        if self.variable < 1:
            raise ValueError(f"literal variable must be >= 1, got {self.variable}")

    @classmethod
    def from_int(cls, lit: int) -> "Literal":
        if lit == 0:
            raise ValueError("0 is not a literal")
        return cls(abs(lit), lit > 0)

    def to_int(self) -> int:
        return self.variable if self.positive else -self.variable

    @property
    def polarity(self) -> int:
        return 1 if self.positive else -1

    def __neg__(self) -> "Literal":
        return Literal(self.variable, not self.positive)


@dataclass(frozen=True)
class Clause:
    literals: tuple[Literal, ...]

    def __post_init__(self):
        seen: dict[int, bool] = {}
        for lit in self.literals:
            if lit.variable in seen:
                if seen[lit.variable] != lit.positive:
                    raise ValueError(f"tautological clause {self.to_ints()}")
                raise ValueError(f"duplicate literal {lit.to_int()} in clause {self.to_ints()}")
            seen[lit.variable] = lit.positive

    @classmethod
    def from_ints(cls, lits: Iterable[int]) -> "Clause":
        return cls(tuple(Literal.from_int(int(x)) for x in lits))

    def to_ints(self) -> list[int]:
        return [lit.to_int() for lit in self.literals]

    @property
    def variables(self) -> tuple[int, ...]:
        return tuple(lit.variable for lit in self.literals)

    def __len__(self) -> int:
        return len(self.literals)

    def __iter__(self):
        return iter(self.literals)


@dataclass(frozen=True)
class CnfFormula:
    num_vars: int
    clauses: tuple[Clause, ...] = ()

    def __post_init__(self):
        if self.num_vars < 0:
            raise ValueError("num_vars must be non-negative")
        for i, clause in enumerate(self.clauses):
            for lit in clause:
                if lit.variable > self.num_vars:
                    raise ValueError(
                        f"clause {i + 1} uses variable {lit.variable} > num_vars={self.num_vars}"
                    )

    @classmethod
    def from_lists(cls, num_vars: int, clauses: Iterable[Iterable[int]]) -> "CnfFormula":
        return cls(num_vars, tuple(Clause.from_ints(c) for c in clauses))

    def to_lists(self) -> list[list[int]]:
        return [c.to_ints() for c in self.clauses]

    @property
    def num_clauses(self) -> int:
        return len(self.clauses)

    @property
    def has_empty_clause(self) -> bool:
        return any(len(c) == 0 for c in self.clauses)

    def max_clause_length(self) -> int:
        return max((len(c) for c in self.clauses), default=0)

    def condition(self, variable: int, value: bool) -> "CnfFormula":
        """Fix one variable and return a formula over the remaining variables.

        Variables above ``variable`` are shifted down by one so the result is
        again a formula over ``1..num_vars-1``.
        """
        out = []
        for clause in self.clauses:
            keep = []
            satisfied = False
            for lit in clause:
                if lit.variable == variable:
                    if lit.positive == value:
                        satisfied = True
                        break
                    continue
                v = lit.variable - 1 if lit.variable > variable else lit.variable
                keep.append(Literal(v, lit.positive))
            if not satisfied:
                out.append(Clause(tuple(keep)))
        return CnfFormula(self.num_vars - 1, tuple(out))


def parse_dimacs(text: str) -> CnfFormula:
    """Read a DIMACS CNF string.

    Duplicate literals inside a clause are dropped with a warning. Empty
    clauses are kept (the formula is then unsatisfiable) and logged.
    Tautological clauses raise :class:`DimacsError`.
    """
    header: tuple[int, int] | None = None
    clauses: list[Clause] = []
    current: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("c") or line.startswith("%"):
            continue
        if line.startswith("p"):
            if header is not None:
                raise DimacsError(f"line {lineno}: duplicate header")
            parts = line.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise DimacsError(f"line {lineno}: bad header {line!r}")
            try:
                header = (int(parts[2]), int(parts[3]))
            except ValueError as exc:
                raise DimacsError(f"line {lineno}: bad header {line!r}") from exc
            if header[0] < 0 or header[1] < 0:
                raise DimacsError(f"line {lineno}: negative counts in header")
            continue
        if header is None:
            raise DimacsError(f"line {lineno}: clause before 'p cnf' header")
        for tok in line.split():
            try:
                lit = int(tok)
            except ValueError as exc:
                raise DimacsError(f"line {lineno}: not an integer: {tok!r}") from exc
            if lit == 0:
                clauses.append(_make_clause(current, len(clauses) + 1))
                current = []
                continue
            if abs(lit) > header[0]:
                raise DimacsError(
                    f"line {lineno}: literal {lit} exceeds declared {header[0]} variables"
                )
            current.append(lit)
    if header is None:
        raise DimacsError("missing 'p cnf' header")
    if current:
        # final clause without terminating 0
        clauses.append(_make_clause(current, len(clauses) + 1))
    if len(clauses) != header[1]:
        raise DimacsError(
            f"clause count mismatch: header declares {header[1]}, found {len(clauses)}"
        )
    return CnfFormula(header[0], tuple(clauses))


def _make_clause(lits: Sequence[int], index: int) -> Clause:
    if not lits:
        log.warning("clause %d is empty; formula is unsatisfiable", index)
        return Clause(())
    uniq = list(dict.fromkeys(lits))
    if len(uniq) != len(lits):
        log.warning("clause %d: duplicate literals removed", index)
    if any(-x in uniq for x in uniq):
        raise DimacsError(f"clause {index} is tautological: {list(lits)}")
    return Clause.from_ints(uniq)


def write_dimacs(f: CnfFormula) -> str:
    lines = [f"p cnf {f.num_vars} {f.num_clauses}"]
    lines += [" ".join([*map(str, c.to_ints()), "0"]) for c in f.clauses]
    return "\n".join(lines) + "\n"


def read_dimacs(path) -> CnfFormula:
    with open(path, encoding="utf-8") as fh:
        return parse_dimacs(fh.read())


def evaluate(f: CnfFormula, assignment: Mapping[int, bool] | Sequence[bool]) -> bool:
    """True iff every clause has a true literal.

    ``assignment`` is either a mapping over exactly ``1..num_vars`` or a
    sequence of ``num_vars`` booleans (index 0 is variable 1).
    """
    if isinstance(assignment, Mapping):
        if set(assignment) != set(range(1, f.num_vars + 1)):
            raise ValueError("assignment must be total over 1..num_vars")
        values = assignment
    else:
        if len(assignment) != f.num_vars:
            raise ValueError("assignment must be total over 1..num_vars")
        values = {i + 1: bool(v) for i, v in enumerate(assignment)}
    return all(
        any(values[lit.variable] == lit.positive for lit in clause) for clause in f.clauses
    )
