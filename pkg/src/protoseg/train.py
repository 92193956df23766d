"""End-to-end training with the reciprocal loss and Adam."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .config import RunConfig
from .data import PointCloud
from .loss import GroundTruth, LossConfig, reciprocal_loss
from .model import ProtoSeg
from .tensor import AdamState, adam_step, scale

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    pass


@dataclass
class Trainer:
    model: ProtoSeg
    cfg: RunConfig
    adam: AdamState = None  # type: ignore[assignment]
    history: list[dict] = field(default_factory=list)
    on_step: Callable[[dict], None] | None = None

    def __post_init__(self):
        if self.adam is None:
            self.adam = AdamState(lr=self.cfg.lr)
        self.loss_cfg = LossConfig(self.cfg.lam, self.cfg.use_spatial_matching, self.cfg.use_gt_to_pr)
        self._gt_cache: dict[int, GroundTruth] = {}

    def _gt(self, cloud: PointCloud) -> GroundTruth:
        key = id(cloud)
        if key not in self._gt_cache:
            if cloud.instance_labels is None:
                raise ValueError("training scenes need instance labels")
            self._gt_cache[key] = GroundTruth.from_labels(cloud.instance_labels)
        return self._gt_cache[key]

    def scene_loss(self, cloud: PointCloud):
        fwd = self.model.forward(cloud)
        return reciprocal_loss(fwd.masks, self._gt(cloud), fwd.samples.indices, self.loss_cfg)

    def step(self, batch: Sequence[PointCloud]) -> dict:
        """Accumulate the batch-mean loss gradient, then apply one Adam update."""
        params = self.model.parameters()
        totals = np.zeros(4)
        for cloud in batch:
            terms = self.scene_loss(cloud)
            value = terms.total.item()
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss at step {self.adam.step + 1}")
            scale(terms.total, 1.0 / len(batch)).backward()
            totals += (value, terms.j_pr_gt, terms.j_gt_pr, terms.skipped_samples)
        for name, p in params.items():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            elif not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient for {name} at step {self.adam.step + 1}")
        adam_step(params, self.adam)
        mean = totals / len(batch)
        entry = {"step": self.adam.step, "loss": mean[0], "j_pr_gt": mean[1], "j_gt_pr": mean[2],
                 "skipped_samples": int(totals[3])}
        self.history.append(entry)
        if self.on_step is not None:
            self.on_step(entry)
        return entry

    def epoch(self, clouds: Sequence[PointCloud], epoch_index: int) -> list[dict]:
        order = np.random.default_rng([self.cfg.seed, epoch_index]).permutation(len(clouds))
        b = self.cfg.batch
        return [self.step([clouds[i] for i in order[lo:lo + b]]) for lo in range(0, len(order), b)]

    def fit(self, clouds: Sequence[PointCloud], epochs: int | None = None, start_epoch: int = 0) -> list[dict]:
        if not clouds:
            raise ValueError("empty training set")
        epochs = self.cfg.epochs if epochs is None else epochs
        for e in range(start_epoch, start_epoch + epochs):
            entries = self.epoch(clouds, e)
            log.info("epoch %d mean loss %.4f", e, np.mean([x["loss"] for x in entries]))
        return self.history

    # -- optimiser state in checkpoints -------------------------------------------------
    def optimizer_tensors(self) -> dict[str, np.ndarray]:
        out = {"adam.step": np.array([float(self.adam.step)])}
        for name in self.adam.m:
            out[f"adam.m.{name}"] = self.adam.m[name]
            out[f"adam.v.{name}"] = self.adam.v[name]
        return out

    def restore_optimizer(self, tensors: dict[str, np.ndarray]) -> None:
        if "adam.step" not in tensors:
            return
        self.adam.step = int(tensors["adam.step"][0])
        for key, arr in tensors.items():
            if key.startswith("adam.m."):
                self.adam.m[key[len("adam.m."):]] = arr.copy()
            elif key.startswith("adam.v."):
                self.adam.v[key[len("adam.v."):]] = arr.copy()


def log_line(entry: dict) -> str:
    return json.dumps({k: (round(v, 8) if isinstance(v, float) else v) for k, v in entry.items()})
