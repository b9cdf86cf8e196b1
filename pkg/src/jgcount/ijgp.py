"""Iterative join-graph propagation with clause factors.

Tables are numpy arrays with one length-2 axis per variable of their
(sorted) scope; index 1 means True. The log partition function, which for
clause factors is the log model count, is read off the converged beliefs
through a join-graph free energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cnf import Clause, CnfFormula
from .joingraph import JoinGraph, build_join_graph


class InconsistentBelief(ValueError):
    """A belief puts mass on a configuration its factors forbid."""


@dataclass(frozen=True)
class IjgpConfig:
    max_iters: int = 100
    convergence_tol: float = 1e-8
    damping: float = 0.5

    def __post_init__(self):
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")
        if not 0 <= self.damping < 1:
            raise ValueError("damping must lie in [0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class FactorTable:
    scope: tuple[int, ...]
    values: np.ndarray

    @classmethod
    def from_clause(cls, clause: Clause) -> "FactorTable":
        lits = sorted(clause.literals)
        values = np.ones((2,) * len(lits))
        # the one falsifying configuration: every literal false
        values[tuple(0 if lit.positive else 1 for lit in lits)] = 0.0
        return cls(tuple(lit.variable for lit in lits), values)

    def expand(self, target: tuple[int, ...]) -> np.ndarray:
        return _expand(self.values, self.scope, target)


def _expand(values: np.ndarray, scope, target) -> np.ndarray:
    """Reshape a table over sorted ``scope`` to broadcast against sorted ``target``."""
    present = set(scope)
    return values.reshape([2 if v in present else 1 for v in target])


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


@dataclass
class MessageState:
    messages: dict[tuple[int, int], np.ndarray]
    cluster_beliefs: dict[int, np.ndarray] = field(default_factory=dict)
    variable_beliefs: dict[int, np.ndarray] = field(default_factory=dict)
    contradiction: bool = False

    def copy(self) -> "MessageState":
        return MessageState(
            {k: v.copy() for k, v in self.messages.items()},
            {k: v.copy() for k, v in self.cluster_beliefs.items()},
            {k: v.copy() for k, v in self.variable_beliefs.items()},
            self.contradiction,
        )


class _Potentials:
    """Cluster potentials (product of the clause tables housed in each cluster)."""

    def __init__(self, g: JoinGraph, f: CnfFormula | None):
        self.graph = g
        self.table: dict[int, np.ndarray] = {}
        placed: set[int] = set()
        for c in g.clusters:
            psi = np.ones((2,) * len(c.variables))
            if f is not None:
                for ci in c.factors:
                    # a clause housed twice would be counted twice
                    if ci in placed:
                        continue
                    placed.add(ci)
                    psi = psi * FactorTable.from_clause(f.clauses[ci]).expand(c.variables)
            self.table[c.id] = psi


def _directed_edges(g: JoinGraph) -> list[tuple[int, int]]:
    return sorted([(e.a, e.b) for e in g.edges] + [(e.b, e.a) for e in g.edges])


def init_messages(g: JoinGraph) -> MessageState:
    msgs = {}
    for i, j in _directed_edges(g):
        k = len(g.edge(i, j).label)
        msgs[(i, j)] = np.full((2,) * k, 1.0 / 2**k)
    return MessageState(msgs)


def _incoming_product(g, pots, msgs, i, skip=None) -> np.ndarray:
    ci = g.clusters[i]
    prod = pots.table[i]
    for k in g.neighbors(i):
        if k == skip:
            continue
        prod = prod * _expand(msgs[(k, i)], g.edge(k, i).label, ci.variables)
    return prod


def _raw_message(g, pots, msgs, i, j) -> np.ndarray:
    ci = g.clusters[i]
    label = set(g.edge(i, j).label)
    prod = _incoming_product(g, pots, msgs, i, skip=j)
    axes = tuple(a for a, v in enumerate(ci.variables) if v not in label)
    return prod.sum(axis=axes) if axes else prod


def pass_messages(
    g: JoinGraph,
    state: MessageState,
    cfg: IjgpConfig = IjgpConfig(),
    f: CnfFormula | None = None,
) -> tuple[MessageState, bool, int]:
    """Synchronous damped message passing.

    Returns the new state, whether the largest message change dropped
    below ``cfg.convergence_tol`` and the number of rounds run.
    """
    pots = _Potentials(g, f)
    state = state.copy()
    edges = _directed_edges(g)
    lam = cfg.damping
    converged = False
    iters = 0
    for iters in range(1, cfg.max_iters + 1):
        new = {}
        delta = 0.0
        for i, j in edges:
            raw = _raw_message(g, pots, state.messages, i, j)
            total = raw.sum()
            if total <= 0:
                state.contradiction = True
                raw = np.full(raw.shape, 1.0 / raw.size)
            else:
                raw = raw / total
            # hard zeros are facts, not estimates: damping must not refill them
            msg = np.where(raw > 0, lam * state.messages[(i, j)] + (1 - lam) * raw, 0.0)
            msg_total = msg.sum()
            msg = msg / msg_total if msg_total > 0 else raw
            delta = max(delta, float(np.abs(msg - state.messages[(i, j)]).max()))
            new[(i, j)] = msg
        state.messages = new
        if delta < cfg.convergence_tol:
            converged = True
            break
    for c in g.clusters:
        if _incoming_product(g, pots, state.messages, c.id).sum() <= 0:
            state.contradiction = True
    return state, converged, iters


def compute_beliefs(g: JoinGraph, state: MessageState, f: CnfFormula | None = None) -> MessageState:
    pots = _Potentials(g, f)
    state = state.copy()
    for c in g.clusters:
        b = _incoming_product(g, pots, state.messages, c.id)
        total = b.sum()
        if total <= 0:
            state.contradiction = True
            b = np.full(b.shape, 1.0 / b.size)
        else:
            b = b / total
        state.cluster_beliefs[c.id] = b
    for v in range(1, g.num_vars + 1):
        holder = next((c for c in g.clusters if v in c.variables), None)
        if holder is None:
            state.variable_beliefs[v] = np.array([0.5, 0.5])
            continue
        axis = holder.variables.index(v)
        b = state.cluster_beliefs[holder.id]
        others = tuple(a for a in range(b.ndim) if a != axis)
        state.variable_beliefs[v] = b.sum(axis=others) if others else b.copy()
    return state


def separator_belief(g: JoinGraph, state: MessageState, i: int, j: int) -> np.ndarray:
    b = state.messages[(i, j)] * state.messages[(j, i)]
    total = b.sum()
    return b / total if total > 0 else np.full(b.shape, 1.0 / b.size)


def bethe_join_free_energy(
    g: JoinGraph, state: MessageState, f: CnfFormula | None = None, counting: str = "separator"
) -> float:
    """Free energy ``U - H`` of the beliefs; ``-F`` estimates ln Z.

    ``counting="separator"`` subtracts one entropy per separator edge
    (exact on join trees). ``counting="variable"`` subtracts
    ``(d_v - 1) H(b_v)`` once per variable, ``d_v`` being the number of
    clusters that contain ``v``.
    """
    if state.contradiction:
        raise InconsistentBelief("beliefs carry a contradiction flag; Z is 0")
    if not state.cluster_beliefs:
        raise ValueError("compute_beliefs must run first")
    pots = _Potentials(g, f)
    energy = 0.0
    entropy = 0.0
    for c in g.clusters:
        b = state.cluster_beliefs[c.id]
        psi = pots.table[c.id]
        if np.any((psi == 0) & (b > 0)):
            raise InconsistentBelief(f"cluster {c.id} puts mass on a forbidden configuration")
        mask = b > 0
        energy -= float((b[mask] * np.log(psi[mask])).sum())
        entropy += _entropy(b)
    if counting == "separator":
        for e in g.edges:
            entropy -= _entropy(separator_belief(g, state, e.a, e.b))
    elif counting == "variable":
        for v in range(1, g.num_vars + 1):
            d = len(g.clusters_with(v))
            if d > 1:
                entropy -= (d - 1) * _entropy(state.variable_beliefs[v])
    else:
        raise ValueError(f"unknown counting scheme {counting!r}")
    return energy - entropy


@dataclass(frozen=True)
class IjgpResult:
    log_z: float
    converged: bool
    width: int
    iters: int

    @property
    def zero_count(self) -> bool:
        return self.log_z == -math.inf


def estimate_log_z(
    f: CnfFormula,
    i_bound: int,
    cfg: IjgpConfig = IjgpConfig(),
    counting: str = "separator",
) -> IjgpResult:
    if f.has_empty_clause:
        return IjgpResult(-math.inf, True, 0, 0)
    g = build_join_graph(f, i_bound)
    state, converged, iters = pass_messages(g, init_messages(g), cfg, f)
    state = compute_beliefs(g, state, f)
    if state.contradiction:
        return IjgpResult(-math.inf, converged, g.width, iters)
    return IjgpResult(-bethe_join_free_energy(g, state, f, counting), converged, g.width, iters)
