import itertools
import math
import random

import numpy as np
import pytest

from conftest import CHAIN, random_formula
from jgcount.cnf import CnfFormula, evaluate
from jgcount.ijgp import (
    IjgpConfig,
    InconsistentBelief,
    bethe_join_free_energy,
    compute_beliefs,
    estimate_log_z,
    init_messages,
    pass_messages,
)
from jgcount.joingraph import Cluster, JoinGraph, SeparatorEdge, build_join_graph
from jgcount.oracle import count_models


def _chain():
    f = CnfFormula.from_lists(3, CHAIN)
    return f, build_join_graph(f, 3)


def test_init_messages_uniform():
    g = JoinGraph((Cluster(0, (1, 2)), Cluster(1, (1, 2, 3))), (SeparatorEdge(0, 1, (1, 2)),), 3)
    msgs = init_messages(g).messages
    assert np.array_equal(msgs[(0, 1)], np.full((2, 2), 0.25))
    _, gc = _chain()
    assert np.array_equal(init_messages(gc).messages[(0, 1)], [0.5, 0.5])


def test_single_cluster_converges_in_one_round():
    f = CnfFormula.from_lists(2, [[1, 2]])
    g = build_join_graph(f, 3)
    _, converged, iters = pass_messages(g, init_messages(g), IjgpConfig(), f)
    assert converged and iters == 1


def test_chain_beliefs_match_enumeration():
    f, g = _chain()
    state, converged, _ = pass_messages(g, init_messages(g), IjgpConfig(max_iters=200, convergence_tol=1e-13), f)
    assert converged
    state = compute_beliefs(g, state, f)
    models = [a for a in itertools.product([False, True], repeat=3) if evaluate(f, list(a))]
    assert len(models) == 5
    assert state.variable_beliefs[2][1] == pytest.approx(4 / 5, abs=1e-9)
    for v in (1, 3):
        p = sum(a[v - 1] for a in models) / 5
        assert state.variable_beliefs[v][1] == pytest.approx(p, abs=1e-9)


def test_contradiction_flag_on_opposing_units():
    f = CnfFormula.from_lists(1, [[1], [-1]])
    g = JoinGraph((Cluster(0, (1,), (0,)), Cluster(1, (1,), (1,))), (SeparatorEdge(0, 1, (1,)),), 1)
    state, _, _ = pass_messages(g, init_messages(g), IjgpConfig(), f)
    assert state.contradiction
    with pytest.raises(InconsistentBelief):
        bethe_join_free_energy(g, compute_beliefs(g, state, f), f)


def test_zero_clause_uniform_beliefs_and_n_ln2():
    f = CnfFormula.from_lists(4, [])
    g = build_join_graph(f, 3)
    state = compute_beliefs(g, pass_messages(g, init_messages(g), IjgpConfig(), f)[0], f)
    assert np.allclose(state.variable_beliefs[1], [0.5, 0.5])
    assert -bethe_join_free_energy(g, state, f) == pytest.approx(4 * math.log(2), abs=1e-12)


def test_chain_log_z_is_ln5():
    f, _ = _chain()
    assert estimate_log_z(f, 3).log_z == pytest.approx(math.log(5), abs=1e-6)


def test_single_clause_log_z_is_ln3():
    f = CnfFormula.from_lists(2, [[1, 2]])
    assert estimate_log_z(f, 3).log_z == pytest.approx(math.log(3), abs=1e-6)


def test_unsat_pair_gives_minus_inf():
    r = estimate_log_z(CnfFormula.from_lists(1, [[1], [-1]]), 3)
    assert r.log_z == -math.inf and r.zero_count


def test_empty_clause_gives_minus_inf():
    assert estimate_log_z(CnfFormula.from_lists(2, [[1], []]), 3).zero_count


def test_forbidden_mass_names_cluster():
    f = CnfFormula.from_lists(2, [[1, 2]])
    g = build_join_graph(f, 3)
    state = compute_beliefs(g, init_messages(g), f)
    state.cluster_beliefs[0] = np.full((2, 2), 0.25)
    with pytest.raises(InconsistentBelief, match="cluster 0"):
        bethe_join_free_energy(g, state, f)


def test_free_energy_requires_beliefs():
    f, g = _chain()
    with pytest.raises(ValueError):
        bethe_join_free_energy(g, init_messages(g), f)


def test_unknown_counting_rejected():
    f, g = _chain()
    state = compute_beliefs(g, pass_messages(g, init_messages(g), IjgpConfig(), f)[0], f)
    with pytest.raises(ValueError):
        bethe_join_free_energy(g, state, f, counting="cluster")


def test_variable_counting_exact_on_chain():
    f, _ = _chain()
    assert estimate_log_z(f, 3, counting="variable").log_z == pytest.approx(math.log(5), abs=1e-6)


@pytest.mark.parametrize("kwargs", [{"convergence_tol": 0}, {"damping": 1.0}, {"damping": -0.1}, {"max_iters": 0}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        IjgpConfig(**kwargs)


def test_max_iters_flag():
    rng = random.Random(2)
    from jgcount.data import random_ksat

    f = random_ksat(15, 60, rng)
    r = estimate_log_z(f, 3, IjgpConfig(max_iters=1))
    assert r.iters == 1


def test_exact_when_i_bound_covers_all_variables():
    rng = random.Random(9)
    checked = 0
    while checked < 40:
        f = random_formula(rng, n_max=9, m_max=12)
        if f.has_empty_clause:
            continue
        z = count_models(f).model_count
        if z == 0:
            continue
        r = estimate_log_z(f, max(f.num_vars, f.max_clause_length(), 1))
        assert r.log_z == pytest.approx(math.log(z), abs=1e-6)
        checked += 1


def test_deterministic():
    rng = random.Random(4)
    from jgcount.data import random_ksat

    f = random_ksat(14, 55, rng)
    assert estimate_log_z(f, 3) == estimate_log_z(f, 3)
