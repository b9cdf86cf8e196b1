import random

import pytest
from hypothesis import strategies as st

from jgcount.cnf import CnfFormula
from jgcount.data import random_ksat

CHAIN = [[1, 2], [2, 3]]


def random_formula(rng: random.Random, n_max: int = 8, m_max: int = 10, k_max: int = 3) -> CnfFormula:
    """Random CNF with mixed clause lengths (no tautologies, no duplicates)."""
    n = rng.randint(1, n_max)
    clauses = []
    for _ in range(rng.randint(0, m_max)):
        k = rng.randint(1, min(k_max, n))
        vs = rng.sample(range(1, n + 1), k)
        clauses.append([v if rng.random() < 0.5 else -v for v in vs])
    return CnfFormula.from_lists(n, clauses)


@st.composite
def formulas(draw, n_max=8, m_max=10, k_max=3):
    n = draw(st.integers(1, n_max))
    m = draw(st.integers(0, m_max))
    clauses = []
    for _ in range(m):
        vs = draw(st.lists(st.integers(1, n), min_size=1, max_size=min(k_max, n), unique=True))
        signs = draw(st.lists(st.booleans(), min_size=len(vs), max_size=len(vs)))
        clauses.append([v if s else -v for v, s in zip(vs, signs)])
    return CnfFormula.from_lists(n, clauses)


@pytest.fixture
def chain():
    return CnfFormula.from_lists(3, CHAIN)


def seeded_3sat(seed: int, n_lo: int, n_hi: int, ratio=(3.0, 4.3)) -> CnfFormula:
    rng = random.Random(seed)
    n = rng.randint(n_lo, n_hi)
    m = max(1, round(rng.uniform(*ratio) * n))
    return random_ksat(n, m, rng)
