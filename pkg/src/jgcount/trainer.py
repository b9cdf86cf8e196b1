"""Training, evaluation and the ablation harness."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cnf import CnfFormula
from .config import ModelConfig, TrainConfig
from .data import DatasetRecord, split
from .graphs import GraphBatch, collate, compile_instance
from .io import write_csv
from .model import AttnJGNN

log = logging.getLogger(__name__)

SCORE_FLOOR = 1e-12
CALIBRATION_CHUNK = 64
RESIDUAL_HEADER = ("instance_id", "n", "m", "label", "prediction", "residual")
UTILIZATION_NOTE = (
    "head utilization = share of available heads that are scheduled and have "
    "|lambda_h| > 0.01 * max|lambda| at the end of training (mean over layers)"
)

ABLATIONS = {
    "GAT": dict(hierarchical=False, constraint_aware=False, dynamic_heads=False),
    "GAT-H": dict(hierarchical=True, constraint_aware=False, dynamic_heads=False),
    "GAT-HC": dict(hierarchical=True, constraint_aware=True, dynamic_heads=False),
    "GAT-HCD": dict(hierarchical=True, constraint_aware=True, dynamic_heads=True),
}


class TrainingAborted(RuntimeError):
    def __init__(self, msg: str, step: int, last_good: dict | None):
        super().__init__(msg)
        self.step = step
        self.last_good = last_good


def loss_total(
    preds: Tensor, labels, scores: Tensor | None = None, delta: float = 0.0
) -> tuple[Tensor, Tensor, Tensor | None]:
    """Batch RMSE plus ``-delta * sum(ln s)`` over every clause in the batch.

    Returns (total, rmse part, constraint part or None).
    """
    y = Tensor(np.asarray(labels, dtype=np.float64).reshape(-1, 1))
    if preds.shape != y.shape:
        raise ad.ShapeError(f"predictions {preds.shape} vs labels {y.shape}")
    res = preds - y
    if np.any(res.data):
        rmse_part = ad.sqrt(ad.mean(res * res))
    else:
        # sqrt is not differentiable at 0; take the zero subgradient
        rmse_part = ad.scale(ad.sum(res), 0.0)
    if scores is None or delta == 0:
        return rmse_part, rmse_part, None
    if np.any(scores.data < SCORE_FLOOR):
        log.warning("clause score below %g clamped", SCORE_FLOOR)
        lift = np.where(scores.data < SCORE_FLOOR, SCORE_FLOOR - scores.data, 0.0)
        scores = scores + Tensor(lift)
    cons = ad.scale(ad.sum(ad.log(scores)), -delta)
    return rmse_part + cons, rmse_part, cons


@dataclass
class Metrics:
    rmse: float
    residuals: list[float]
    seconds: float = 0.0
    head_utilization: float = 1.0
    baseline_rmse: float | None = None
    rows: list[tuple] = field(default_factory=list)

    def write_residuals(self, path) -> None:
        write_csv(path, RESIDUAL_HEADER, self.rows)


def rmse(pred, label) -> float:
    pred, label = np.asarray(pred, dtype=float), np.asarray(label, dtype=float)
    return float(np.sqrt(np.mean((pred - label) ** 2)))


class _Compiled:
    """Per-record compiled join graphs, built once."""

    def __init__(self, records: list[DatasetRecord], i_bound: int):
        self.records = records
        self.graphs = [compile_instance(r.formula, i_bound=i_bound) for r in records]
        self.labels = np.array([r.label_log_z for r in records])

    def batch(self, idx) -> GraphBatch:
        return collate([self.graphs[i] for i in idx])


def predict(model: AttnJGNN, records: list[DatasetRecord], step: int | None = None, chunk: int = 64,
            compiled: _Compiled | None = None, jobs: int = 1) -> np.ndarray:
    """Predictions in fixed chunks of ``chunk`` records.

    Chunking does not depend on ``jobs``, so results are identical for any
    worker count.
    """
    starts = range(0, len(records), chunk)
    if jobs > 1 and len(starts) > 1:
        work = [[(r.formula.num_vars, r.formula.to_lists()) for r in records[i : i + chunk]] for i in starts]
        with ProcessPoolExecutor(jobs, initializer=_worker_init, initargs=(model.state(), step)) as pool:
            out = list(pool.map(_worker_predict, work))
        return np.concatenate(out)
    compiled = compiled or _Compiled(records, model.cfg.i_bound)
    out = [model.predict(compiled.batch(range(i, min(i + chunk, len(records)))), step) for i in starts]
    return np.concatenate(out) if out else np.zeros(0)


_WORKER: dict = {}


def _worker_init(state: dict, step: int | None) -> None:
    _WORKER["model"] = AttnJGNN.from_state(state)
    _WORKER["step"] = step


def _worker_predict(items) -> np.ndarray:
    model = _WORKER["model"]
    graphs = [compile_instance(CnfFormula.from_lists(n, cl), i_bound=model.cfg.i_bound) for n, cl in items]
    return model.predict(collate(graphs), _WORKER["step"])


@dataclass
class TrainResult:
    model: AttnJGNN
    history: list[dict]
    best_epoch: int
    best_val_rmse: float
    seconds_to_best: float
    steps: int
    head_utilization: float


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    records: list[DatasetRecord],
    checkpoint: str | Path | None = None,
    on_epoch=None,
) -> TrainResult:
    """Mini-batch training; keeps the parameters of the best validation epoch."""
    train_recs, val_recs = split(records, "train"), split(records, "val")
    if not train_recs:
        raise ValueError("dataset has no training split")
    if not val_recs:
        val_recs = train_recs
    tr = _Compiled(train_recs, model_cfg.i_bound)
    va = _Compiled(val_recs, model_cfg.i_bound)
    model = AttnJGNN(model_cfg, seed=train_cfg.seed)
    # start the readout at the label mean
    if model_cfg.readout_scale == "vars":
        model.params["mlp.b2"].data[...] = -np.mean(tr.labels / [r.n for r in train_recs])
    else:
        model.params["mlp.b2"].data[...] = -tr.labels.mean()
    calib = [tr.batch(range(i, min(i + CALIBRATION_CHUNK, len(train_recs))))
             for i in range(0, len(train_recs), CALIBRATION_CHUNK)] if model_cfg.readout_norm else []
    if calib:
        model.calibrate(calib, 0)
    opt = ad.make_optimizer(train_cfg.optimizer, model.parameters(), train_cfg.lr)
    rng = np.random.default_rng(train_cfg.seed)
    delta = model_cfg.delta if model_cfg.constraint_aware else 0.0

    start = time.perf_counter()
    step = 0
    best = (math.inf, -1, 0.0, _snapshot(model, 0))
    history: list[dict] = []
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(len(train_recs))
        losses = []
        for b0 in range(0, len(order), train_cfg.batch_size):
            idx = order[b0 : b0 + train_cfg.batch_size]
            model.training = True
            try:
                out = model.forward(tr.batch(idx), step)
            finally:
                model.training = False
            total, part_rmse, _ = loss_total(out.prediction, tr.labels[idx], out.scores, delta)
            if not math.isfinite(total.item()):
                raise TrainingAborted(f"non-finite loss at step {step}", step, best[3])
            opt.zero_grad()
            ad.backward(total)
            try:
                opt.step()
            except FloatingPointError as exc:
                raise TrainingAborted(f"step {step}: {exc}", step, best[3]) from exc
            losses.append((total.item(), part_rmse.item()))
            step += 1
        if calib:
            model.calibrate(calib, step)
        val = rmse(predict(model, val_recs, step, compiled=va), va.labels)
        elapsed = time.perf_counter() - start
        row = {
            "epoch": epoch,
            "step": step,
            "heads": model.heads_at(step),
            "train_loss": float(np.mean([a for a, _ in losses])),
            "train_rmse": float(np.mean([b for _, b in losses])),
            "val_rmse": val,
            "seconds": elapsed,
        }
        history.append(row)
        log.info("epoch %d step %d loss %.4f train_rmse %.4f val_rmse %.4f heads %d",
                 epoch, step, row["train_loss"], row["train_rmse"], val, row["heads"])
        if on_epoch:
            on_epoch(row)
        if val < best[0]:
            best = (val, epoch, elapsed, _snapshot(model, step))
        if elapsed > train_cfg.time_budget:
            log.info("time budget reached after epoch %d", epoch)
            break
    # the best epoch's parameters go with the head count they were trained under
    _restore(model, best[3])
    result = TrainResult(model, history, best[1], best[0], best[2], step, model.head_utilization())
    if checkpoint:
        model.save(checkpoint, extra={"step": step, "best_epoch": best[1], "best_val_rmse": best[0]})
    return result


def _snapshot(model: AttnJGNN, step: int) -> dict:
    snap = {k: v.data.copy() for k, v in model.params.items()}
    snap["__norm__"] = (model.norm_mean.copy(), model.norm_var.copy())
    snap["__step__"] = step
    return snap


def _restore(model: AttnJGNN, snap: dict) -> None:
    for k, v in snap.items():
        if k == "__norm__":
            model.norm_mean, model.norm_var = v[0].copy(), v[1].copy()
        elif k == "__step__":
            model.step = v
        else:
            model.params[k].data[...] = v


def evaluate(
    model: AttnJGNN,
    records: list[DatasetRecord],
    which: str = "test",
    step: int | None = None,
    baseline_mean: float | None = None,
    jobs: int = 1,
) -> Metrics:
    """RMSE on one split, residual rows, and the constant-mean baseline.

    The baseline predicts ``baseline_mean`` (by default the training-label
    mean, falling back to the split's own mean).
    """
    recs = split(records, which)
    if step is None:
        step = model.step
    t0 = time.perf_counter()
    preds = predict(model, recs, step, jobs=jobs)
    labels = np.array([r.label_log_z for r in recs])
    seconds = time.perf_counter() - t0
    if baseline_mean is None:
        train_labels = [r.label_log_z for r in split(records, "train")]
        baseline_mean = float(np.mean(train_labels)) if train_labels else float(labels.mean())
    rows = [
        (r.id, r.n, r.m, repr(float(y)), repr(float(p)), repr(float(p - y)))
        for r, y, p in zip(recs, labels, preds)
    ]
    return Metrics(
        rmse=rmse(preds, labels),
        residuals=(preds - labels).tolist(),
        seconds=seconds,
        head_utilization=model.head_utilization(),
        baseline_rmse=rmse(np.full(len(labels), baseline_mean), labels),
        rows=rows,
    )


@dataclass
class AblationRow:
    method: str
    rmse: float
    head_utilization: float
    seconds_to_best: float
    error: str = ""


def run_ablation(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    records: list[DatasetRecord],
    methods=tuple(ABLATIONS),
    jobs: int = 1,
) -> list[AblationRow]:
    """Train the four attention variants on identical data and seed.

    A failing row is reported with NaN metrics; the others still run.
    """
    args = [(name, model_cfg, train_cfg, records) for name in methods]
    if jobs > 1:
        with ProcessPoolExecutor(min(jobs, len(args))) as pool:
            return list(pool.map(_ablation_row, args))
    return [_ablation_row(a) for a in args]


def _ablation_row(args) -> AblationRow:
    name, model_cfg, train_cfg, records = args
    cfg = replace(model_cfg, **ABLATIONS[name])
    try:
        res = train(cfg, train_cfg, records)
        metrics = evaluate(res.model, records, "test")
        return AblationRow(name, metrics.rmse, res.head_utilization, res.seconds_to_best)
    except Exception as exc:  # noqa: BLE001
        log.error("ablation %s failed: %s", name, exc)
        return AblationRow(name, math.nan, math.nan, math.nan, f"{type(exc).__name__}: {exc}")


ABLATION_HEADER = ("method", "rmse", "head_utilization_pct", "train_seconds_to_best")


def ablation_csv_rows(rows: list[AblationRow]) -> list[tuple]:
    return [(r.method, repr(r.rmse), repr(100.0 * r.head_utilization), repr(r.seconds_to_best)) for r in rows]


def format_ablation(rows: list[AblationRow]) -> str:
    lines = [
        f"# {UTILIZATION_NOTE}",
        f"{'Method':<10} {'RMSE':>8} {'Head utilization(%)':>20} {'Train time to best (s)':>24}",
    ]
    for r in rows:
        lines.append(f"{r.method:<10} {r.rmse:>8.4f} {100 * r.head_utilization:>20.1f} {r.seconds_to_best:>24.2f}"
                     + (f"  [failed: {r.error}]" if r.error else ""))
    return "\n".join(lines)
