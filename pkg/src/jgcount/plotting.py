"""Report figures, rendered off-screen to PNG files."""

from __future__ import annotations

import math
import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    fig.savefig(tmp, format="png", dpi=120, metadata={"Software": None})
    plt.close(fig)
    os.replace(tmp, path)
    return path


def training_curves(history: list[dict], path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [h["epoch"] for h in history]
    ax.plot(epochs, [h["train_rmse"] for h in history], marker="o", label="train (batch mean)")
    ax.plot(epochs, [h["val_rmse"] for h in history], marker="s", label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("RMSE of ln Z")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def residual_scatter(labels, predictions, path, baseline_rmse: float | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(labels, predictions, s=8, alpha=0.6)
    lo = min(min(labels, default=0), min(predictions, default=0))
    hi = max(max(labels, default=1), max(predictions, default=1))
    ax.plot([lo, hi], [lo, hi], color="k", lw=1)
    ax.set_xlabel("exact ln Z")
    ax.set_ylabel("predicted ln Z")
    if baseline_rmse is not None:
        ax.set_title(f"constant-mean baseline RMSE {baseline_rmse:.3f}", fontsize=9)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def ablation_bars(rows, path) -> Path:
    names = [r.method for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.5))
    series = (
        ("test RMSE", [r.rmse for r in rows]),
        ("head utilization (%)", [100 * r.head_utilization for r in rows]),
        ("train time to best (s)", [r.seconds_to_best for r in rows]),
    )
    for ax, (title, values) in zip(axes, series):
        ax.bar(names, [0 if math.isnan(v) else v for v in values], color="tab:blue")
        ax.set_title(title, fontsize=10)
        ax.tick_params(axis="x", labelrotation=30)
    fig.tight_layout()
    return _save(fig, path)
