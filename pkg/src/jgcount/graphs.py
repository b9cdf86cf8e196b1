"""Index arrays describing one or many join graphs for the neural model.

A :class:`GraphBatch` is the disjoint union of several compiled instances.
Every variable occurrence inside a cluster is a *pair* ``(cluster, var)``;
pairs carry the per-cluster copies of variable features.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .cnf import CnfFormula
from .joingraph import JoinGraph, build_join_graph


@dataclass
class GraphBatch:
    num_instances: int
    num_vars: int
    num_clauses: int
    num_clusters: int
    num_pairs: int
    # variable/clause incidences
    inc_var: np.ndarray
    inc_clause: np.ndarray
    inc_pol: np.ndarray  # (E, 1) float, +1/-1
    inc_pair: np.ndarray
    clause_cluster: np.ndarray
    clause_instance: np.ndarray
    # (cluster, variable) pairs
    pair_cluster: np.ndarray
    pair_var: np.ndarray
    var_low_pair: np.ndarray
    var_degree: np.ndarray  # clusters containing each variable
    var_instance: np.ndarray
    # directed cluster edges: target aggregates from source
    e2_tgt: np.ndarray
    e2_src: np.ndarray
    # shared-variable terms of the inter-cluster update
    sh_var: np.ndarray
    sh_e2: np.ndarray
    sh_pair: np.ndarray
    cluster_instance: np.ndarray
    cluster_size: np.ndarray  # member nodes (variables + clauses)

    def clause_sizes(self) -> np.ndarray:
        return np.bincount(self.inc_clause, minlength=self.num_clauses)


_OFFSETS = {
    "inc_var": "num_vars",
    "inc_clause": "num_clauses",
    "inc_pair": "num_pairs",
    "clause_cluster": "num_clusters",
    "clause_instance": "num_instances",
    "pair_cluster": "num_clusters",
    "pair_var": "num_vars",
    "var_low_pair": "num_pairs",
    "var_instance": "num_instances",
    "e2_tgt": "num_clusters",
    "e2_src": "num_clusters",
    "sh_var": "num_vars",
    "sh_e2": "_e2",
    "sh_pair": "num_pairs",
    "cluster_instance": "num_instances",
}


def compile_instance(f: CnfFormula, g: JoinGraph | None = None, i_bound: int = 3) -> GraphBatch:
    if g is None:
        g = build_join_graph(f, max(i_bound, f.max_clause_length()))
    home = {}
    for c in g.clusters:
        for ci in c.factors:
            home.setdefault(ci, c.id)
    pair_id = {}
    pair_cluster, pair_var = [], []
    for c in g.clusters:
        for v in c.variables:
            pair_id[(c.id, v)] = len(pair_cluster)
            pair_cluster.append(c.id)
            pair_var.append(v - 1)
    inc_var, inc_clause, inc_pol, inc_pair = [], [], [], []
    for ci, clause in enumerate(f.clauses):
        for lit in clause:
            inc_var.append(lit.variable - 1)
            inc_clause.append(ci)
            inc_pol.append(float(lit.polarity))
            inc_pair.append(pair_id[(home[ci], lit.variable)])
    holders = {v: g.clusters_with(v) for v in range(1, f.num_vars + 1)}
    var_low_pair = [pair_id[(holders[v][0], v)] for v in range(1, f.num_vars + 1)]
    e2 = sorted([(e.a, e.b) for e in g.edges] + [(e.b, e.a) for e in g.edges])
    e2_index = {pair: k for k, pair in enumerate(e2)}
    sh_var, sh_e2, sh_pair = [], [], []
    for v in range(1, f.num_vars + 1):
        low = holders[v][0]
        for other in g.neighbors(low):
            if v in g.edge(low, other).label:
                sh_var.append(v - 1)
                sh_e2.append(e2_index[(low, other)])
                sh_pair.append(pair_id[(other, v)])
    size = np.array([len(c.variables) + len(c.factors) for c in g.clusters], dtype=np.int64)
    i64 = lambda x: np.asarray(x, dtype=np.int64)  # noqa: E731
    return GraphBatch(
        num_instances=1,
        num_vars=f.num_vars,
        num_clauses=f.num_clauses,
        num_clusters=len(g.clusters),
        num_pairs=len(pair_cluster),
        inc_var=i64(inc_var),
        inc_clause=i64(inc_clause),
        inc_pol=np.asarray(inc_pol, dtype=np.float64).reshape(-1, 1),
        inc_pair=i64(inc_pair),
        clause_cluster=i64([home[ci] for ci in range(f.num_clauses)]),
        clause_instance=np.zeros(f.num_clauses, dtype=np.int64),
        pair_cluster=i64(pair_cluster),
        pair_var=i64(pair_var),
        var_low_pair=i64(var_low_pair),
        var_degree=i64([len(holders[v]) for v in range(1, f.num_vars + 1)]),
        var_instance=np.zeros(f.num_vars, dtype=np.int64),
        e2_tgt=i64([t for t, _ in e2]),
        e2_src=i64([s for _, s in e2]),
        sh_var=i64(sh_var),
        sh_e2=i64(sh_e2),
        sh_pair=i64(sh_pair),
        cluster_instance=np.zeros(len(g.clusters), dtype=np.int64),
        cluster_size=size,
    )


def collate(items: list[GraphBatch]) -> GraphBatch:
    """Disjoint union of compiled instances, in order."""
    if len(items) == 1:
        return items[0]
    counts = {k: 0 for k in ("num_vars", "num_clauses", "num_clusters", "num_pairs", "num_instances", "_e2")}
    parts: dict[str, list[np.ndarray]] = {f.name: [] for f in fields(GraphBatch) if not f.name.startswith("num_")}
    for item in items:
        for name in parts:
            arr = getattr(item, name)
            key = _OFFSETS.get(name)
            parts[name].append(arr + counts[key] if key else arr)
        for key in counts:
            counts[key] += len(item.e2_tgt) if key == "_e2" else getattr(item, key)
    merged = {name: np.concatenate(arrs) for name, arrs in parts.items()}
    return GraphBatch(
        num_instances=counts["num_instances"],
        num_vars=counts["num_vars"],
        num_clauses=counts["num_clauses"],
        num_clusters=counts["num_clusters"],
        num_pairs=counts["num_pairs"],
        **merged,
    )
