"""Random 3-SAT generation and exactly-labelled datasets."""

from __future__ import annotations

import logging
import math
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cnf import CnfFormula
from .config import TrainConfig
from .io import read_jsonl, write_jsonl
from .oracle import CountTimeout, count_models_dpll

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


def random_ksat(n: int, m: int, rng: random.Random, k: int = 3) -> CnfFormula:
    """Uniform random k-SAT: k distinct variables per clause, fair-coin signs."""
    if n < k:
        raise ValueError(f"need at least {k} variables")
    clauses = []
    for _ in range(m):
        vs = rng.sample(range(1, n + 1), k)
        clauses.append([v if rng.random() < 0.5 else -v for v in vs])
    return CnfFormula.from_lists(n, clauses)


@dataclass
class DatasetRecord:
    formula: CnfFormula
    label_log_z: float
    split: str
    n: int
    m: int
    seed: int
    model_count: int = 0
    id: int = 0

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "clauses": self.formula.to_lists(),
            "num_vars": self.formula.num_vars,
            "log_z": self.label_log_z,
            "model_count": self.model_count,
            "split": self.split,
            "n": self.n,
            "m": self.m,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, row: dict) -> "DatasetRecord":
        f = CnfFormula.from_lists(row["num_vars"], row["clauses"])
        return cls(
            formula=f,
            label_log_z=float(row["log_z"]),
            split=row["split"],
            n=row.get("n", f.num_vars),
            m=row.get("m", f.num_clauses),
            seed=row.get("seed", 0),
            model_count=int(row.get("model_count", 0)),
            id=int(row.get("id", 0)),
        )


def _candidate(args):
    seed, k, n_min, n_max, r_min, r_max, budget = args
    rng = random.Random(f"{seed}:{k}")
    n = rng.randint(n_min, n_max)
    ratio = rng.uniform(r_min, r_max)
    m = max(1, round(ratio * n))
    f = random_ksat(n, m, rng)
    try:
        count = count_models_dpll(f, budget).model_count
    except CountTimeout:
        log.warning("candidate %d: exact counter timed out, discarded", k)
        return k, n, None, None
    return k, n, f.to_lists(), count


def generate_dataset(
    cfg: TrainConfig, jobs: int = 1, count_budget: float | None = 60.0
) -> list[DatasetRecord]:
    """Seeded satisfiable random 3-SAT instances labelled with ln(model count).

    Candidate ``k`` depends only on ``(seed, k)``, so the output does not
    depend on ``jobs``. Records are split 60/20/20 in generation order.
    """
    want = cfg.num_instances
    records: list[DatasetRecord] = []
    k = 0
    pool = ProcessPoolExecutor(jobs) if jobs > 1 else None
    try:
        while len(records) < want:
            chunk = max(16, 2 * (want - len(records)))
            args = [
                (cfg.seed, j, cfg.n_min, cfg.n_max, cfg.ratio_min, cfg.ratio_max, count_budget)
                for j in range(k, k + chunk)
            ]
            results = pool.map(_candidate, args, chunksize=8) if pool else map(_candidate, args)
            for _, n, clauses, count in results:
                if clauses is None or not count or len(records) >= want:
                    continue
                f = CnfFormula.from_lists(n, clauses)
                records.append(
                    DatasetRecord(f, math.log(count), "", n, f.num_clauses, cfg.seed, count, len(records))
                )
            k += chunk
    finally:
        if pool:
            pool.shutdown()
    n_train = round(0.6 * want)
    n_val = round(0.2 * want)
    for i, r in enumerate(records):
        r.split = "train" if i < n_train else "val" if i < n_train + n_val else "test"
    return records


def save_dataset(path, records: list[DatasetRecord]) -> None:
    write_jsonl(path, (r.to_json() for r in records))


def load_dataset(path) -> list[DatasetRecord]:
    return [DatasetRecord.from_json(row) for row in read_jsonl(path)]


def split(records: list[DatasetRecord], name: str) -> list[DatasetRecord]:
    if name not in SPLITS:
        raise ValueError(f"unknown split {name!r}")
    return [r for r in records if r.split == name]


def label_stats(records: list[DatasetRecord]) -> dict[str, float]:
    y = np.array([r.label_log_z for r in records])
    return {"count": len(y), "mean": float(y.mean()), "std": float(y.std())}
