"""The full network and its inference pipeline."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .assembly import MaskSet, assemble, attach_orphans, label_points, nms
from .backbone import Backbone, normalize_input
from .coeffnet import CoeffNet, DpiConfig
from .config import ModelConfig, RunConfig
from .data import PointCloud
from .geometry import SampleSet, fps
from .nn import named
from .protoscore import ProtoScoreNet
from .tensor import OpCounter, Tensor, count_ops, no_grad


@dataclass
class Forward:
    feats: Tensor
    samples: SampleSet
    coeffs: Tensor
    protos: Tensor
    masks: MaskSet


class ProtoSeg:
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.backbone = Backbone(cfg.in_channels, rng, cfg.point_widths, cfg.feature_dim)
        self.protoscore = ProtoScoreNet(cfg.feature_dim, cfg.n_prototypes, rng, cfg.proto_hidden)
        dpi = DpiConfig(cfg.dilations, cfg.k, cfg.branch_width, cfg.fusion_width, cfg.kernel_hidden,
                        cfg.offset_scale)
        self.coeffnet = CoeffNet(cfg.feature_dim, cfg.n_prototypes, dpi, rng)

    def parameters(self) -> dict[str, Tensor]:
        return named(self.backbone.parameters() + self.protoscore.parameters() + self.coeffnet.parameters())

    def check_input(self, cloud: PointCloud) -> None:
        cfg = self.cfg
        if cloud.n_channels != cfg.in_channels:
            raise ValueError(f"model expects {cfg.in_channels} channels, cloud has {cloud.n_channels}")
        need = max(cfg.n_samples, cfg.k_base)
        if cloud.n_points < need:
            raise ValueError(f"cloud has N={cloud.n_points} points but K={cfg.n_samples} samples and "
                             f"{cfg.k_base} neighbours are required; use a smaller K or k")

    def sample(self, feats: np.ndarray, coords: np.ndarray) -> SampleSet:
        if self.cfg.sampling == "fps_features":
            return fps(feats, self.cfg.n_samples, 0, "features")
        return fps(coords, self.cfg.n_samples, 0, "coordinates")

    def forward(self, cloud: PointCloud) -> Forward:
        self.check_input(cloud)
        feats = self.backbone(Tensor(normalize_input(cloud)))
        samples = self.sample(feats.data, cloud.xyz)
        coeffs = self.coeffnet(samples, feats, cloud.xyz)
        protos = self.protoscore(feats)
        return Forward(feats, samples, coeffs, protos, assemble(coeffs, protos, samples.indices))

    # -- persistence ---------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise checkpoint.CheckpointError(f"checkpoint lacks tensors {sorted(missing)[:3]}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise checkpoint.CheckpointError(
                    f"tensor {name!r} has shape {state[name].shape}, model expects {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)


def save_model(path: str | Path, model: ProtoSeg, run_cfg: RunConfig, extra: dict | None = None) -> None:
    tensors = {checkpoint.CONFIG_KEY: checkpoint.pack_json(run_cfg.to_dict())}
    tensors.update(model.state_dict())
    tensors.update(extra or {})
    checkpoint.save(path, tensors)


def load_model(path: str | Path) -> tuple[ProtoSeg, RunConfig, dict[str, np.ndarray]]:
    """Model, its embedded run config and any non-parameter tensors (optimizer state)."""
    tensors = checkpoint.load(path)
    if checkpoint.CONFIG_KEY not in tensors:
        raise checkpoint.CheckpointError("checkpoint carries no embedded config")
    run_cfg = RunConfig.from_dict(checkpoint.unpack_json(tensors.pop(checkpoint.CONFIG_KEY)))
    model = ProtoSeg(run_cfg.model, run_cfg.seed)
    model.load_state_dict(tensors)
    rest = {k: v for k, v in tensors.items() if k not in model.parameters()}
    return model, run_cfg, rest


# -- inference -----------------------------------------------------------------

STAGES = ("feature_ms", "sample_ms", "coeff_ms", "proto_ms", "assemble_ms", "nms_ms")


@dataclass
class Inference:
    masks: MaskSet
    coeffs: np.ndarray
    protos: np.ndarray
    samples: SampleSet
    labels: np.ndarray
    timings: dict[str, float] = field(default_factory=dict)
    op_counts: dict[str, OpCounter] = field(default_factory=dict)
    threshold: float = 0.3

    @property
    def retained_masks(self) -> np.ndarray:
        """(K', N) binary masks of the NMS survivors."""
        return self.masks.scores[self.masks.retained] > self.threshold

    @property
    def retained_confidence(self) -> np.ndarray:
        return self.masks.confidence[self.masks.retained]


def infer(model: ProtoSeg, cloud: PointCloud, attach: bool = False) -> Inference:
    """Full inference with per-stage wall times (monotonic clock) and op tallies."""
    cfg = model.cfg
    model.check_input(cloud)
    timings: dict[str, float] = {}
    counts: dict[str, OpCounter] = {}
    clock = time.perf_counter

    def stage(name, fn):
        with count_ops() as counter:
            t0 = clock()
            out = fn()
            timings[name] = (clock() - t0) * 1e3
        counts[name] = counter
        return out

    start = clock()
    with no_grad():
        feats = stage("feature_ms", lambda: model.backbone(Tensor(normalize_input(cloud))))
        samples = stage("sample_ms", lambda: model.sample(feats.data, cloud.xyz))
        coeffs = stage("coeff_ms", lambda: model.coeffnet(samples, feats, cloud.xyz))
        protos = stage("proto_ms", lambda: model.protoscore(feats))
        masks = stage("assemble_ms", lambda: assemble(coeffs, protos, samples.indices))
        stage("nms_ms", lambda: nms(masks, cfg.nms_iou, cfg.threshold))
    labels = label_points(masks, cfg.threshold)
    timings["total_ms"] = (clock() - start) * 1e3
    if attach and cloud.semantic_labels is not None:
        labels = attach_orphans(labels, cloud.xyz, cloud.semantic_labels)
    return Inference(masks, coeffs.data, protos.data, samples, labels, timings, counts, cfg.threshold)
