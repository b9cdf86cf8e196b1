"""Factor graphs, min-fill elimination orders and join-graph construction.

The join graph is built by bucket elimination along a min-fill order.
A bucket whose joint scope exceeds the i-bound is split into mini-buckets
(first fit, arrival order) which are chained by edges labelled with the
bucket variable. With no splitting the result is a join tree.
"""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass, field

from .cnf import CnfFormula


@dataclass(frozen=True)
class FactorGraph:
    num_vars: int
    num_clauses: int
    edges: tuple[tuple[int, int, int], ...]  # (variable, clause index, polarity)

    def degree(self, variable: int) -> int:
        return sum(1 for v, _, _ in self.edges if v == variable)


def build_factor_graph(f: CnfFormula) -> FactorGraph:
    edges = tuple(
        (lit.variable, ci, lit.polarity) for ci, clause in enumerate(f.clauses) for lit in clause
    )
    return FactorGraph(f.num_vars, f.num_clauses, edges)


@dataclass(frozen=True)
class Cluster:
    id: int
    variables: tuple[int, ...]
    factors: tuple[int, ...] = ()


@dataclass(frozen=True)
class SeparatorEdge:
    a: int
    b: int
    label: tuple[int, ...]

    @property
    def endpoints(self) -> tuple[int, int]:
        return (self.a, self.b)


@dataclass(frozen=True)
class JoinGraph:
    clusters: tuple[Cluster, ...]
    edges: tuple[SeparatorEdge, ...]
    num_vars: int = 0
    _adj: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        adj: dict[int, list[tuple[int, SeparatorEdge]]] = {c.id: [] for c in self.clusters}
        for e in self.edges:
            adj.setdefault(e.a, []).append((e.b, e))
            adj.setdefault(e.b, []).append((e.a, e))
        for lst in adj.values():
            lst.sort(key=lambda t: t[0])
        object.__setattr__(self, "_adj", adj)

    @property
    def width(self) -> int:
        return max((len(c.variables) for c in self.clusters), default=0) - 1

    def neighbors(self, cid: int) -> list[int]:
        return [j for j, _ in self._adj.get(cid, [])]

    def edge(self, i: int, j: int) -> SeparatorEdge:
        for k, e in self._adj[i]:
            if k == j:
                return e
        raise KeyError((i, j))

    def clusters_with(self, variable: int) -> list[int]:
        return [c.id for c in self.clusters if variable in c.variables]

    def is_tree(self) -> bool:
        """True when the graph is a forest (no cycles)."""
        parent = {c.id: c.id for c in self.clusters}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for e in self.edges:
            ra, rb = find(e.a), find(e.b)
            if ra == rb:
                return False
            parent[ra] = rb
        return True

    def to_dict(self) -> dict:
        return {
            "clusters": [
                {"id": c.id, "variables": list(c.variables), "factors": list(c.factors)}
                for c in self.clusters
            ],
            "edges": [{"endpoints": [e.a, e.b], "label": list(e.label)} for e in self.edges],
            "width": self.width,
            "acyclic": self.is_tree(),
        }


def primal_graph(f: CnfFormula) -> dict[int, set[int]]:
    adj: dict[int, set[int]] = {v: set() for v in range(1, f.num_vars + 1)}
    for clause in f.clauses:
        vs = clause.variables
        for a in vs:
            adj[a].update(b for b in vs if b != a)
    return adj


def _fill_in(adj: dict[int, set[int]], v: int) -> int:
    nb = sorted(adj[v])
    return sum(1 for i, a in enumerate(nb) for b in nb[i + 1 :] if b not in adj[a])


def elimination_width(adj: dict[int, set[int]], order) -> int:
    adj = {v: set(n) for v, n in adj.items()}
    width = 0
    for v in order:
        nb = adj.pop(v)
        width = max(width, len(nb))
        for a in nb:
            adj[a].discard(v)
            adj[a].update(nb - {a})
    return width


def min_fill_order(f: CnfFormula | dict[int, set[int]]) -> tuple[list[int], int]:
    """Greedy min-fill elimination order and its induced width.

    Accepts a formula (its primal graph is used) or an adjacency dict.
    Ties go to the lowest variable index.
    """
    adj = primal_graph(f) if isinstance(f, CnfFormula) else {v: set(n) for v, n in f.items()}
    order = []
    width = 0
    while adj:
        v = min(adj, key=lambda x: (_fill_in(adj, x), x))
        nb = adj.pop(v)
        width = max(width, len(nb))
        for a in nb:
            adj[a].discard(v)
            adj[a].update(nb - {a})
        order.append(v)
    return order, width


def build_join_graph(f: CnfFormula, i_bound: int) -> JoinGraph:
    if i_bound < 1:
        raise ValueError("i_bound must be positive")
    if f.has_empty_clause:
        raise ValueError("formula contains an empty clause")
    longest = f.max_clause_length()
    if i_bound < longest:
        raise ValueError(f"i_bound={i_bound} is smaller than the longest clause ({longest})")
    order, _ = min_fill_order(f)
    pos = {v: i for i, v in enumerate(order)}

    # bucket items: (scope, clause index or None, source cluster or None)
    buckets: dict[int, list[tuple[frozenset, int | None, int | None]]] = defaultdict(list)
    for ci, clause in enumerate(f.clauses):
        scope = frozenset(clause.variables)
        buckets[min(scope, key=pos.__getitem__)].append((scope, ci, None))

    scopes: list[set[int]] = []
    factors: list[list[int]] = []
    edges: dict[tuple[int, int], set[int]] = {}

    def link(a: int, b: int, label):
        key = (min(a, b), max(a, b))
        edges.setdefault(key, set()).update(label)

    for v in order:
        minis: list[tuple[set[int], list]] = []
        for item in buckets.pop(v, []):
            for scope, members in minis:
                if len(scope | item[0]) <= i_bound:
                    scope |= item[0]
                    members.append(item)
                    break
            else:
                minis.append((set(item[0]), [item]))
        if not minis:
            minis.append(({v}, []))
        prev = None
        for scope, members in minis:
            cid = len(scopes)
            scopes.append(scope)
            factors.append([ci for _, ci, _ in members if ci is not None])
            for mscope, _, src in members:
                if src is not None:
                    link(src, cid, mscope)
            if prev is not None:
                link(prev, cid, {v})
            prev = cid
            out = frozenset(scope - {v})
            if out:
                buckets[min(out, key=pos.__getitem__)].append((out, None, cid))

    scopes, factors, edges = _absorb_subsumed(scopes, factors, edges)
    clusters = tuple(
        Cluster(i, tuple(sorted(s)), tuple(sorted(fs))) for i, (s, fs) in enumerate(zip(scopes, factors))
    )
    sep = tuple(SeparatorEdge(a, b, tuple(sorted(lab))) for (a, b), lab in sorted(edges.items()))
    return JoinGraph(clusters, sep, f.num_vars)


def _absorb_subsumed(scopes, factors, edges):
    """Contract edges whose one endpoint's scope is contained in the other's."""
    alive = list(range(len(scopes)))
    changed = True
    while changed:
        changed = False
        for a in alive:
            nbs = sorted(
                (y if x == a else x) for (x, y) in edges if a in (x, y)
            )
            target = next((b for b in nbs if scopes[a] <= scopes[b]), None)
            if target is None:
                continue
            factors[target].extend(factors[a])
            new_edges = {}
            for (x, y), lab in edges.items():
                if a in (x, y):
                    other = y if x == a else x
                    if other == target:
                        continue
                    x, y = min(other, target), max(other, target)
                new_edges.setdefault((x, y), set()).update(lab)
            edges = new_edges
            alive.remove(a)
            changed = True
            break
    remap = {old: new for new, old in enumerate(alive)}
    out_scopes = [scopes[i] for i in alive]
    out_factors = [sorted(factors[i]) for i in alive]
    out_edges = {
        (min(remap[x], remap[y]), max(remap[x], remap[y])): lab for (x, y), lab in edges.items()
    }
    return out_scopes, out_factors, out_edges


@dataclass
class ValidationReport:
    violations: list[str]
    width: int

    @property
    def valid(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.valid


def validate_join_graph(g: JoinGraph, f: CnfFormula) -> ValidationReport:
    problems: list[str] = []
    ids = {c.id: c for c in g.clusters}
    for c in g.clusters:
        vs = set(c.variables)
        for ci in c.factors:
            if not 0 <= ci < f.num_clauses:
                problems.append(f"cluster {c.id}: unknown factor index {ci}")
            elif not set(f.clauses[ci].variables) <= vs:
                problems.append(f"cluster {c.id}: factor c{ci + 1} not within cluster scope")
    housed = {ci for c in g.clusters for ci in c.factors}
    for ci in range(f.num_clauses):
        if ci not in housed:
            problems.append(f"coverage: clause c{ci + 1} is in no cluster")
    seen_vars = {v for c in g.clusters for v in c.variables}
    for v in range(1, f.num_vars + 1):
        if v not in seen_vars:
            problems.append(f"coverage: variable x{v} is in no cluster")
    for e in g.edges:
        if e.a not in ids or e.b not in ids or e.a == e.b:
            problems.append(f"edge {e.endpoints}: bad endpoints")
            continue
        if not e.label:
            problems.append(f"edge {e.endpoints}: empty label")
        extra = set(e.label) - (set(ids[e.a].variables) & set(ids[e.b].variables))
        if extra:
            problems.append(f"edge {e.endpoints}: label variables {sorted(extra)} not shared")
    for v in sorted(seen_vars):
        holders = [c.id for c in g.clusters if v in c.variables]
        if len(holders) < 2:
            continue
        reach = {holders[0]}
        queue = deque([holders[0]])
        while queue:
            i = queue.popleft()
            for e in g.edges:
                if v in e.label and i in (e.a, e.b):
                    j = e.b if i == e.a else e.a
                    if j not in reach:
                        reach.add(j)
                        queue.append(j)
        missing = [h for h in holders if h not in reach]
        if missing:
            problems.append(f"connectivity: variable x{v} disconnected between clusters {missing}")
    return ValidationReport(problems, g.width)
