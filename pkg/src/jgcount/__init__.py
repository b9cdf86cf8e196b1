"""Model counting for CNF formulas: exact counters, join-graph decompositions,
classical iterative join-graph propagation and an attention-based neural
estimator of ln Z."""

from .cnf import Clause, CnfFormula, DimacsError, Literal, evaluate, parse_dimacs, read_dimacs, write_dimacs
from .config import ModelConfig, TrainConfig
from .ijgp import IjgpConfig, IjgpResult, estimate_log_z
from .joingraph import JoinGraph, build_join_graph, validate_join_graph
from .oracle import CountResult, count, count_models, count_models_dpll, count_shannon

__version__ = "0.1.0"
