"""Finite-difference gradient checks for every differentiable op and the full model."""

from __future__ import annotations

import zlib
from dataclasses import replace
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cnf import CnfFormula
from .config import ModelConfig

GRADCHECK_TOL = 1e-4
GRADCHECK_EPS = 1e-5

# five variables, every variable shared by at least two clauses
FIVE_VAR_CLAUSES = [[1, -2, 3], [-1, 4, 5], [2, -3, -5], [-4, 1, 2], [3, 5, -1], [-2, -4]]


def _param(rng, *shape, low=None) -> Tensor:
    x = rng.normal(size=shape)
    if low is not None:
        x = np.abs(x) + low
    return Tensor(x, requires_grad=True)


def op_cases(seed: int = 0) -> dict[str, tuple[Callable[[], Tensor], list[Tensor]]]:
    rng = np.random.default_rng(seed)
    a, b = _param(rng, 3, 4), _param(rng, 3, 4)
    m = _param(rng, 4, 2)
    row = _param(rng, 1, 4)
    pos = _param(rng, 3, 4, low=0.5)
    # keep kinked ops away from their kink
    away = Tensor(np.sign(rng.normal(size=(3, 4))) * (np.abs(rng.normal(size=(3, 4))) + 0.1), requires_grad=True)
    seg = np.array([0, 2, 0, 1, 2])
    s5 = _param(rng, 5, 2)
    alpha = _param(rng, 6, 2)
    vals = _param(rng, 4, 6)
    lam = _param(rng, 1, 3)
    src, tgt = np.array([0, 1, 2, 3, 1, 0]), np.array([0, 0, 1, 1, 2, 2])
    funcs = {}

    def case(name, fn, params):
        # a random linear functional makes every output entry matter
        w_rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
        probe = fn()
        w = Tensor(w_rng.normal(size=probe.shape))
        funcs[name] = (lambda: ad.sum(fn() * w), params)

    case("add", lambda: a + b, [a, b])
    case("add_broadcast", lambda: a + row, [a, row])
    case("mul", lambda: a * b, [a, b])
    case("mul_broadcast", lambda: a * row, [a, row])
    case("sub", lambda: a - b, [a, b])
    case("neg", lambda: ad.neg(a), [a])
    case("scale", lambda: ad.scale(a, -2.5), [a])
    case("sigmoid", lambda: ad.sigmoid(a), [a])
    case("relu", lambda: ad.relu(away), [away])
    case("leaky_relu", lambda: ad.leaky_relu(away, 0.2), [away])
    case("tanh", lambda: ad.tanh(a), [a])
    case("exp", lambda: ad.exp(a), [a])
    case("log", lambda: ad.log(pos), [pos])
    case("sqrt", lambda: ad.sqrt(pos), [pos])
    case("matmul", lambda: a @ m, [a, m])
    case("transpose", lambda: ad.transpose(a), [a])
    case("concat_rows", lambda: ad.concat([a, row], axis=0), [a, row])
    case("concat_cols", lambda: ad.concat([a, b], axis=1), [a, b])
    case("sum_all", lambda: ad.sum(a), [a])
    case("sum_rows", lambda: ad.sum(a, axis=0), [a])
    case("sum_cols", lambda: ad.sum(a, axis=1), [a])
    case("mean", lambda: ad.mean(a), [a])
    case("softmax", lambda: ad.softmax(a), [a])
    case("take_rows", lambda: ad.take_rows(a, [2, 0, 2, 1]), [a])
    case("take_cols", lambda: ad.take_cols(a, [3, 3, 0]), [a])
    case("segment_sum", lambda: ad.segment_sum(s5, seg, 4), [s5])
    case("segment_mean", lambda: ad.segment_mean(s5, seg, 3), [s5])
    case("segment_softmax", lambda: ad.segment_softmax(s5, seg, 3), [s5])
    case("head_aggregate", lambda: ad.head_aggregate(alpha, vals, src, tgt, 3, 2, 3, lam), [alpha, vals, lam])
    case("repeat_cols", lambda: ad.repeat_cols(a, 3), [a])
    case("block_sum_cols", lambda: ad.block_sum_cols(a, 2), [a])
    return funcs


def check_ops(seed: int = 0, eps: float = GRADCHECK_EPS) -> dict[str, float]:
    return {name: ad.gradcheck(fn, params, eps) for name, (fn, params) in op_cases(seed).items()}


def check_model(d: int = 8, seed: int = 0, eps: float = GRADCHECK_EPS, cfg: ModelConfig | None = None) -> float:
    """Gradient check of the full forward pass plus loss on a 5-variable formula."""
    from .graphs import compile_instance
    from .model import AttnJGNN
    from .trainer import loss_total

    cfg = cfg or ModelConfig(d=d)
    cfg = replace(cfg, d=d)
    f = CnfFormula.from_lists(5, FIVE_VAR_CLAUSES)
    batch = compile_instance(f, i_bound=cfg.i_bound)
    model = AttnJGNN(cfg, seed=seed)
    delta = cfg.delta if cfg.constraint_aware else 0.0

    def fn():
        out = model.forward(batch, step=0)
        return loss_total(out.prediction, [2.0], out.scores, delta)[0]

    return ad.gradcheck(fn, model.parameters(), eps)


def run_suite(d: int = 8, seed: int = 0) -> dict[str, float]:
    results = check_ops(seed)
    results["model"] = check_model(d, seed)
    return results
