import itertools
import logging

import pytest
from hypothesis import given, settings

from jgcount.cnf import Clause, CnfFormula, DimacsError, Literal, evaluate, parse_dimacs, write_dimacs

from conftest import formulas


def test_parse_single_clause():
    f = parse_dimacs("p cnf 2 1\n1 2 0")
    assert f.num_vars == 2
    assert f.to_lists() == [[1, 2]]


def test_parse_comments_and_units():
    f = parse_dimacs("c hi\np cnf 1 2\n1 0\n-1 0")
    assert f.to_lists() == [[1], [-1]]


def test_parse_clause_count_mismatch():
    with pytest.raises(DimacsError, match="count mismatch"):
        parse_dimacs("p cnf 1 2\n1 0")


@pytest.mark.parametrize(
    "text, msg",
    [
        ("1 2 0\n", "before 'p cnf' header"),
        ("", "missing"),
        ("p cnf 2 1\np cnf 2 1\n1 0", "duplicate header"),
        ("p cnf 2 1\n1 3 0", "exceeds"),
        ("p cnf 2 1\n1 x 0", "not an integer"),
        ("p cnf 2 1\n1 -1 0", "tautological"),
        ("p dnf 2 1\n1 0", "bad header"),
    ],
)
def test_parse_errors(text, msg):
    with pytest.raises(DimacsError, match=msg):
        parse_dimacs(text)


def test_parse_empty_clause_is_flagged(caplog):
    with caplog.at_level(logging.WARNING):
        f = parse_dimacs("p cnf 2 2\n1 2 0\n0\n")
    assert f.has_empty_clause
    assert "empty" in caplog.text


def test_parse_deduplicates_literals(caplog):
    with caplog.at_level(logging.WARNING):
        f = parse_dimacs("p cnf 2 1\n1 1 2 0\n")
    assert f.to_lists() == [[1, 2]]
    assert "duplicate" in caplog.text


def test_parse_multiline_clause():
    assert parse_dimacs("p cnf 3 1\n1 2\n3 0\n").to_lists() == [[1, 2, 3]]


def test_write_examples():
    assert write_dimacs(CnfFormula.from_lists(2, [[1, -2]])) == "p cnf 2 1\n1 -2 0\n"
    assert write_dimacs(CnfFormula(3)) == "p cnf 3 0\n"


@settings(max_examples=100, deadline=None)
@given(formulas())
def test_roundtrip(f):
    assert parse_dimacs(write_dimacs(f)) == f


def test_literal_and_clause_invariants():
    assert Literal.from_int(-3) == Literal(3, False)
    assert (-Literal(2)).to_int() == -2
    with pytest.raises(ValueError):
        Literal(0)
    with pytest.raises(ValueError, match="tautological"):
        Clause.from_ints([1, -1])
    with pytest.raises(ValueError, match="duplicate"):
        Clause.from_ints([2, 2])
    with pytest.raises(ValueError, match="num_vars"):
        CnfFormula.from_lists(1, [[2]])


def test_evaluate_examples():
    assert evaluate(CnfFormula.from_lists(2, [[1, 2]]), {1: False, 2: True})
    assert not evaluate(CnfFormula.from_lists(1, [[1], [-1]]), {1: True})
    assert evaluate(CnfFormula(2), [True, False])


def test_evaluate_rejects_partial_assignment():
    with pytest.raises(ValueError, match="total"):
        evaluate(CnfFormula.from_lists(2, [[1, 2]]), {1: True})
    with pytest.raises(ValueError):
        evaluate(CnfFormula.from_lists(2, [[1, 2]]), [True])


@settings(max_examples=50, deadline=None)
@given(formulas(n_max=5))
def test_evaluate_monotone_under_clause_deletion(f):
    for bits in itertools.product([False, True], repeat=f.num_vars):
        if evaluate(f, bits):
            for drop in range(f.num_clauses):
                g = CnfFormula(f.num_vars, f.clauses[:drop] + f.clauses[drop + 1 :])
                assert evaluate(g, bits)


def test_condition_shifts_variables():
    f = CnfFormula.from_lists(3, [[1, 2], [-2, 3]])
    assert f.condition(2, True).to_lists() == [[2]]
    assert f.condition(2, False).to_lists() == [[1]]
    assert f.condition(1, False).num_vars == 2
