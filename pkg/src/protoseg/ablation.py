"""Three-arm ablation: full model, single-scale coefficients, and no GT-to-prediction term."""

from __future__ import annotations

from dataclasses import replace
from typing import Callable, Sequence

import numpy as np

from .config import RunConfig
from .data import PointCloud
from .evaluate import evaluate_dataset
from .model import ProtoSeg
from .train import Trainer


def ablation_arms(base: RunConfig) -> dict[str, RunConfig]:
    return {
        "full": base,
        "single_dilation": replace(base, model=replace(base.model, dilations=(1,))),
        "lambda_0": replace(base, lam=0.0),
    }


def run_ablation(base: RunConfig, train: Sequence[PointCloud], test: Sequence[tuple[str, PointCloud]],
                 epochs: int | None = None, on_step: Callable[[str, dict], None] | None = None) -> list[dict]:
    """Train every arm from the same seed and data; one result row per arm."""
    rows = []
    for name, cfg in ablation_arms(base).items():
        model = ProtoSeg(cfg.model, cfg.seed)
        hook = (lambda entry, n=name: on_step(n, entry)) if on_step else None
        trainer = Trainer(model, cfg, on_step=hook)
        history = trainer.fit(list(train), epochs)
        _, agg = evaluate_dataset(model, test)
        losses = [h["loss"] for h in history]
        rows.append({"arm": name, "dilations": list(cfg.model.dilations), "lambda": cfg.lam,
                     "final_loss": losses[-1], "losses_finite": bool(np.all(np.isfinite(losses))),
                     **{k: agg[k] for k in ("mPrec", "mRec", "mCov", "mWCov", "mAP50")}})
    return rows


def format_table(rows: list[dict]) -> str:
    cols = ["arm", "mPrec", "mRec", "mCov", "mWCov", "mAP50", "final_loss"]
    lines = [" | ".join(cols)]
    for r in rows:
        lines.append(" | ".join(r["arm"] if c == "arm" else f"{r[c]:.4f}" for c in cols))
    return "\n".join(lines)
