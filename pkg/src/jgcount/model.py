"""Attention-based join-graph network that regresses ln(model count).

One message-passing round runs two layers:

* the intra-cluster layer attends between variables and clauses that share
  a cluster, producing a per-cluster copy of every variable feature;
* the inter-cluster layer attends between adjacent clusters and folds the
  copies of each shared variable back into one feature.

The readout builds a two-entry summary per cluster (a cluster-entropy
surrogate and a degree-weighted variable-entropy surrogate), pools it and
maps it through a small MLP to a free-energy estimate ``F``; the prediction
is ``-F``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig, to_dict
from .graphs import GraphBatch

CHECKPOINT_FORMAT = "jgcount-checkpoint"
CHECKPOINT_VERSION = 1
NORM_EPS = 1e-5


def dynamic_head_count(t: int, cfg: ModelConfig) -> int:
    if t < 0:
        raise ValueError("step must be non-negative")
    return min(cfg.h_max, cfg.h_init + t // cfg.t_head)


def multi_head_combine(heads: Tensor, lam: Tensor | None, n_heads: int, width: int) -> Tensor:
    """Average ``n_heads`` equal-width head blocks of ``heads`` (rows x n_heads*width).

    With ``lam`` (1 x n_heads or wider; extra columns ignored) each block is
    scaled by its head weight first.
    """
    if heads.shape[1] != n_heads * width:
        raise ad.ShapeError(f"expected {n_heads}*{width} columns, got {heads.shape[1]}")
    if lam is not None:
        weights = ad.repeat_cols(ad.take_cols(lam, np.arange(n_heads)), width)
        heads = heads * weights
    fold = np.tile(np.eye(width), (n_heads, 1)) / n_heads
    return heads @ Tensor(fold)


def clause_satisfaction_score(beliefs: Tensor, batch: GraphBatch) -> Tensor:
    """Per-clause ``sigmoid(sum (2 b - 1) * polarity)``; ``beliefs`` is (vars x 1)."""
    signed = (ad.scale(ad.take_rows(beliefs, batch.inc_var), 2.0) - 1.0) * Tensor(batch.inc_pol)
    return ad.sigmoid(ad.segment_sum(signed, batch.inc_clause, batch.num_clauses))


@dataclass
class NodeFeatures:
    h_var: Tensor
    h_clause: Tensor
    h_cluster: Tensor
    polarity: np.ndarray


@dataclass
class ForwardResult:
    prediction: Tensor  # (instances x 1)
    scores: Tensor | None  # (clauses x 1) satisfaction scores of the final round
    features: NodeFeatures
    heads: int


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    return rng.normal(0.0, math.sqrt(2.0 / (rows + cols)), size=(rows, cols))


class AttnJGNN:
    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d, dk = cfg.d, cfg.d // cfg.h_max
        p: dict[str, np.ndarray] = {}
        p["embed.var"] = rng.normal(0.0, 1.0, size=(1, d))
        p["embed.clause"] = rng.normal(0.0, 1.0, size=(1, d))
        for layer, d_in in (("gat1", d), ("gat2", d)):
            for h in range(cfg.h_max):
                p[f"{layer}.q.{h}"] = _glorot(rng, d_in, dk)
                p[f"{layer}.k.{h}"] = _glorot(rng, d_in, dk)
                p[f"{layer}.v.{h}"] = _glorot(rng, d_in, d) * 0.5
            p[f"{layer}.lambda"] = np.ones((1, cfg.h_max))
        # polarity channel of the intra-cluster maps (one extra input row)
        for h in range(cfg.h_max):
            p[f"gat1.q_pol.{h}"] = _glorot(rng, 1, dk)
            p[f"gat1.k_pol.{h}"] = _glorot(rng, 1, dk)
            p[f"gat1.v_pol.{h}"] = _glorot(rng, 1, d) * 0.5
        p["belief.w"] = _glorot(rng, d, 1)
        p["belief.b"] = np.zeros((1, 1))
        p["readout.cluster"] = _glorot(rng, d, 1)
        p["readout.var"] = _glorot(rng, d, 1)
        p["mlp.W1"] = _glorot(rng, d, 2)
        p["mlp.b1"] = np.zeros((1, d))
        p["mlp.W2"] = _glorot(rng, 1, d)
        p["mlp.b2"] = np.zeros((1, 1))
        self.params = {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}
        # readout normalisation statistics (not trained by gradient)
        self.norm_mean = np.zeros((1, 2))
        self.norm_var = np.ones((1, 2))
        self.training = False
        # global training step reached; fixes the head count used at inference
        self.step = 0

    # -------------------------------------------------------------- bookkeeping

    def parameters(self) -> list[Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def heads_at(self, step: int) -> int:
        if self.cfg.dynamic_heads:
            return dynamic_head_count(step, self.cfg)
        return self.cfg.h_init

    def head_utilization(self, threshold: float = 0.01) -> float:
        """Fraction of available heads in use, averaged over both layers.

        A head counts when it is scheduled and ``|lambda_h| > threshold *
        max|lambda|``. Available heads are ``h_max`` with the dynamic schedule
        and ``h_init`` without it.
        """
        avail = self.cfg.h_max if self.cfg.dynamic_heads else self.cfg.h_init
        active = self.heads_at(self.step)
        layers = ("gat1", "gat2") if self.cfg.hierarchical else ("gat1",)
        fracs = []
        for layer in layers:
            lam = np.abs(self.params[f"{layer}.lambda"].data[0, :active])
            top = lam.max() if active else 0.0
            used = int(np.sum(lam > threshold * top)) if top > 0 else 0
            fracs.append(used / avail)
        return float(np.mean(fracs))

    # -------------------------------------------------------------- features

    def init_features(self, batch: GraphBatch) -> NodeFeatures:
        h_var = Tensor(np.ones((batch.num_vars, 1))) @ self.params["embed.var"]
        h_clause = Tensor(np.ones((batch.num_clauses, 1))) @ self.params["embed.clause"]
        h_cluster = self._cluster_means(batch, ad.take_rows(h_var, batch.pair_var), h_clause)
        return NodeFeatures(h_var, h_clause, h_cluster, batch.inc_pol)

    @staticmethod
    def _cluster_means(batch: GraphBatch, pair_feats: Tensor, h_clause: Tensor) -> Tensor:
        rows = ad.concat([pair_feats, h_clause], axis=0)
        seg = np.concatenate([batch.pair_cluster, batch.clause_cluster])
        return ad.segment_mean(rows, seg, batch.num_clusters)

    def _stack(self, layer: str, kind: str, heads: int) -> Tensor:
        return ad.concat([self.params[f"{layer}.{kind}.{h}"] for h in range(heads)], axis=1)

    def _lam(self, layer: str) -> Tensor | None:
        return self.params[f"{layer}.lambda"] if self.cfg.dynamic_heads else None

    def _attend(
        self,
        layer: str,
        h_tgt: Tensor,
        h_src: Tensor,
        tgt: np.ndarray,
        src: np.ndarray,
        n_tgt: int,
        heads: int,
        polarity: np.ndarray | None = None,
        bias: Tensor | None = None,
    ) -> tuple[Tensor, Tensor]:
        """Scaled dot-product attention over an edge list.

        ``h_tgt``/``h_src`` are node-level; ``tgt``/``src`` index them per edge.
        Returns (combined aggregate for every target, per-edge weights).
        """
        cfg = self.cfg
        d, dk = cfg.d, cfg.d // cfg.h_max
        q = ad.take_rows(h_tgt @ self._stack(layer, "q", heads), tgt)
        k = ad.take_rows(h_src @ self._stack(layer, "k", heads), src)
        if polarity is not None:
            pol = Tensor(polarity)
            q = q + pol @ self._stack(layer, "q_pol", heads)
            k = k + pol @ self._stack(layer, "k_pol", heads)
        raw = ad.block_sum_cols(q * k, dk)
        if bias is not None:
            raw = raw + bias
        raw = ad.leaky_relu(ad.scale(raw, 1.0 / math.sqrt(d)), cfg.leaky_slope)
        alpha = ad.segment_softmax(raw, tgt, n_tgt)
        lam = self._lam(layer)
        values = h_src @ self._stack(layer, "v", heads)
        out = ad.head_aggregate(alpha, values, src, tgt, n_tgt, heads, d, lam)
        if polarity is not None:
            # polarity part of the value map: sum_e alpha * p * v_pol
            mass = ad.segment_sum(alpha * Tensor(polarity), tgt, n_tgt)
            if lam is not None:
                mass = mass * ad.take_cols(lam, np.arange(heads))
            v_pol = ad.concat([self.params[f"{layer}.v_pol.{h}"] for h in range(heads)], axis=0)
            out = out + ad.scale(mass @ v_pol, 1.0 / heads)
        return out, alpha

    def intra_cluster_attention(self, feats: NodeFeatures, batch: GraphBatch, heads: int, scores=None):
        """Weights for both directions of every incidence, each normalised per target."""
        bias = None
        if scores is not None and self.cfg.constraint_aware:
            bias = ad.scale(ad.take_rows(scores, batch.inc_clause), self.cfg.gamma)
        _, to_clause = self._attend(
            "gat1", feats.h_clause, feats.h_var, batch.inc_clause, batch.inc_var,
            batch.num_clauses, heads, batch.inc_pol, bias,
        )
        tgt, n_tgt = self._var_targets(batch)
        _, to_var = self._attend(
            "gat1", ad.take_rows(feats.h_var, batch.pair_var) if self.cfg.hierarchical else feats.h_var,
            feats.h_clause, tgt, batch.inc_clause, n_tgt, heads, batch.inc_pol, bias,
        )
        return to_clause, to_var

    def _var_targets(self, batch: GraphBatch):
        if self.cfg.hierarchical:
            return batch.inc_pair, batch.num_pairs
        return batch.inc_var, batch.num_vars

    def gat1_update(self, feats: NodeFeatures, batch: GraphBatch, heads: int, scores=None):
        """Intra-cluster round. Returns (new clause features, per-target variable features).

        Variable targets are (cluster, variable) pairs in hierarchical mode and
        plain variables otherwise.
        """
        bias = None
        if scores is not None and self.cfg.constraint_aware:
            bias = ad.scale(ad.take_rows(scores, batch.inc_clause), self.cfg.gamma)
        upd, _ = self._attend(
            "gat1", feats.h_clause, feats.h_var, batch.inc_clause, batch.inc_var,
            batch.num_clauses, heads, batch.inc_pol, bias,
        )
        h_clause = feats.h_clause + self._act(upd)
        tgt, n_tgt = self._var_targets(batch)
        base = ad.take_rows(feats.h_var, batch.pair_var) if self.cfg.hierarchical else feats.h_var
        upd, _ = self._attend(
            "gat1", base, h_clause, tgt, batch.inc_clause, n_tgt, heads, batch.inc_pol, bias,
        )
        out = base + self._act(upd)
        _check_finite(out, batch, "gat1")
        return h_clause, out

    def inter_cluster_attention(self, h_cluster: Tensor, batch: GraphBatch, heads: int):
        """Per directed edge weights; targets normalise over their neighbours."""
        return self._inter(h_cluster, batch, heads)[1]

    def _inter(self, h_cluster: Tensor, batch: GraphBatch, heads: int, pair_feats: Tensor | None = None):
        cfg = self.cfg
        d, dk = cfg.d, cfg.d // cfg.h_max
        q = ad.take_rows(h_cluster @ self._stack("gat2", "q", heads), batch.e2_tgt)
        k = ad.take_rows(h_cluster @ self._stack("gat2", "k", heads), batch.e2_src)
        raw = ad.leaky_relu(ad.scale(ad.block_sum_cols(q * k, dk), 1.0 / math.sqrt(d)), cfg.leaky_slope)
        alpha = ad.segment_softmax(raw, batch.e2_tgt, batch.num_clusters)
        if pair_feats is None:
            return None, alpha
        values = ad.take_rows(pair_feats, batch.sh_pair) @ self._stack("gat2", "v", heads)
        weights = ad.take_rows(alpha, batch.sh_e2)
        terms = np.arange(len(batch.sh_var))
        out = ad.head_aggregate(weights, values, terms, batch.sh_var, batch.num_vars, heads, d, self._lam("gat2"))
        return out, alpha

    def gat2_update(self, pair_feats: Tensor, h_clause: Tensor, batch: GraphBatch, heads: int):
        """Fold per-cluster variable copies into one feature per variable.

        Returns (variable features, cluster features recomputed as member means).
        """
        h_cluster = self._cluster_means(batch, pair_feats, h_clause)
        h_var = ad.take_rows(pair_feats, batch.var_low_pair)
        if len(batch.sh_var):
            upd, _ = self._inter(h_cluster, batch, heads, pair_feats)
            h_var = h_var + self._act(upd)
        _check_finite(h_var, batch, "gat2")
        return h_var

    def _act(self, upd: Tensor) -> Tensor:
        return ad.tanh(upd) if self.cfg.activation == "tanh" else upd

    def beliefs(self, h_var: Tensor) -> Tensor:
        return ad.sigmoid(h_var @ self.params["belief.w"] + self.params["belief.b"])

    # -------------------------------------------------------------- forward

    def forward(self, batch: GraphBatch, step: int | None = None) -> ForwardResult:
        """``step`` drives the head schedule; defaults to the trained step."""
        cfg = self.cfg
        heads = self.heads_at(self.step if step is None else step)
        feats = self.init_features(batch)
        scores = None
        for _ in range(cfg.t_mp):
            scores = clause_satisfaction_score(self.beliefs(feats.h_var), batch)
            h_clause, var_out = self.gat1_update(feats, batch, heads, scores)
            if cfg.hierarchical:
                h_var = self.gat2_update(var_out, h_clause, batch, heads)
            else:
                h_var = var_out
            feats = NodeFeatures(h_var, h_clause, None, batch.inc_pol)
        feats.h_cluster = self._cluster_means(batch, ad.take_rows(feats.h_var, batch.pair_var), feats.h_clause)
        scores = clause_satisfaction_score(self.beliefs(feats.h_var), batch)
        pred = self.readout_log_z(feats, batch)
        return ForwardResult(pred, scores, feats, heads)

    def cluster_summary(self, feats: NodeFeatures, batch: GraphBatch) -> Tensor:
        """(clusters x 2): [cluster entropy surrogate, degree-weighted variable surrogate].

        A variable in ``d_v`` clusters puts ``(d_v - 1) / d_v`` of its surrogate
        into each, so summing over clusters counts ``(d_v - 1) * H_v`` once.
        """
        ent_c = feats.h_cluster @ self.params["readout.cluster"]
        ent_v = feats.h_var @ self.params["readout.var"]
        deg = batch.var_degree[batch.pair_var].astype(np.float64)
        weight = Tensor(((deg - 1) / deg).reshape(-1, 1))
        corr = ad.segment_sum(ad.take_rows(ent_v, batch.pair_var) * weight, batch.pair_cluster, batch.num_clusters)
        return ad.concat([ent_c, corr], axis=1)

    def pooled(self, feats: NodeFeatures, batch: GraphBatch) -> Tensor:
        """Per-instance graph feature h_G (instances x 2)."""
        summary = self.cluster_summary(feats, batch)
        pooling = self.cfg.pooling
        if pooling == "mean":
            h_g = ad.segment_mean(summary, batch.cluster_instance, batch.num_instances)
        elif pooling == "size":
            inv = Tensor(1.0 / batch.cluster_size.reshape(-1, 1))
            h_g = ad.segment_sum(summary * inv, batch.cluster_instance, batch.num_instances)
        else:
            h_g = ad.segment_sum(summary, batch.cluster_instance, batch.num_instances)
        return h_g

    def _normalize(self, h_g: Tensor) -> Tensor:
        # batch statistics while training, calibrated statistics otherwise
        if self.training and h_g.shape[0] > 1:
            cen = h_g - ad.mean(h_g, axis=0)
            var = ad.mean(cen * cen, axis=0)
            return cen * ad.exp(ad.scale(ad.log(var + NORM_EPS), -0.5))
        return (h_g - Tensor(self.norm_mean)) * Tensor(1.0 / np.sqrt(self.norm_var + NORM_EPS))

    def calibrate(self, batches, step: int | None = None) -> None:
        """Set the normalisation statistics to the population values over ``batches``."""
        was, self.training = self.training, False
        try:
            h = np.vstack([self.pooled(self.forward(b, step).features, b).data for b in batches])
        finally:
            self.training = was
        self.norm_mean = h.mean(axis=0, keepdims=True)
        self.norm_var = h.var(axis=0, keepdims=True)

    def readout_log_z(self, feats: NodeFeatures, batch: GraphBatch) -> Tensor:
        h_g = self.pooled(feats, batch)
        if self.cfg.readout_norm:
            h_g = self._normalize(h_g)
        p = self.params
        hidden = ad.relu(h_g @ p["mlp.W1"].T + p["mlp.b1"])
        free_energy = hidden @ p["mlp.W2"].T + p["mlp.b2"]
        if self.cfg.readout_scale == "vars":
            # the MLP then estimates free energy per variable
            n_vars = np.bincount(batch.var_instance, minlength=batch.num_instances).astype(np.float64)
            free_energy = free_energy * Tensor(n_vars.reshape(-1, 1))
        return -free_energy

    def predict(self, batch: GraphBatch, step: int | None = None) -> np.ndarray:
        return self.forward(batch, step).prediction.data[:, 0].copy()

    # -------------------------------------------------------------- checkpoints

    def state(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": to_dict(self.cfg),
            "tensors": [
                {"name": k, "shape": list(self.params[k].shape), "data": self.params[k].data.reshape(-1).tolist()}
                for k in sorted(self.params)
            ],
            "buffers": {
                "norm_mean": self.norm_mean[0].tolist(),
                "norm_var": self.norm_var[0].tolist(),
                "step": self.step,
            },
        }

    def save(self, path, extra: dict | None = None):
        from .io import atomic_write_text

        blob = self.state()
        if extra:
            blob["meta"] = extra
        atomic_write_text(path, json.dumps(blob, sort_keys=True))

    @classmethod
    def from_state(cls, blob: dict, cfg: ModelConfig | None = None) -> "AttnJGNN":
        if blob.get("format") != CHECKPOINT_FORMAT or blob.get("version") != CHECKPOINT_VERSION:
            raise ValueError("not a compatible checkpoint")
        saved = ModelConfig(**blob["config"])
        model = cls(cfg or saved)
        names = {t["name"] for t in blob["tensors"]}
        if names != set(model.params):
            raise ValueError("checkpoint tensors do not match the model configuration")
        for t in blob["tensors"]:
            target = model.params[t["name"]]
            if tuple(t["shape"]) != target.shape:
                raise ValueError(f"shape mismatch for {t['name']}: {t['shape']} vs {list(target.shape)}")
            target.data[...] = np.asarray(t["data"], dtype=np.float64).reshape(target.shape)
        buffers = blob.get("buffers", {})
        if "norm_mean" in buffers:
            model.norm_mean = np.asarray(buffers["norm_mean"], dtype=np.float64).reshape(1, 2)
            model.norm_var = np.asarray(buffers["norm_var"], dtype=np.float64).reshape(1, 2)
        model.step = int(buffers.get("step", 0))
        return model

    @classmethod
    def load(cls, path, cfg: ModelConfig | None = None) -> "AttnJGNN":
        with open(path, encoding="utf-8") as fh:
            return cls.from_state(json.load(fh), cfg)


def _check_finite(t: Tensor, batch: GraphBatch, where: str):
    bad = ~np.all(np.isfinite(t.data), axis=1)
    if bad.any():
        row = int(np.argmax(bad))
        if t.shape[0] == batch.num_pairs:
            raise FloatingPointError(f"{where}: non-finite feature in cluster {int(batch.pair_cluster[row])}")
        raise FloatingPointError(f"{where}: non-finite feature at row {row}")
