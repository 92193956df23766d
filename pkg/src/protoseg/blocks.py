"""Room-scale processing: whole-room inference versus sliding 1 m blocks plus BlockMerge."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import attach_orphans
from .data import PointCloud, SynthConfig, generate_scene, slice_blocks, with_room_location
from .metrics import block_merge, compact_labels
from .config import ModelConfig, RunConfig
from .model import ProtoSeg, infer
from .train import Trainer


def room_config(seed: int = 0, n_points: int = 2048, instances_range=(3, 6)) -> SynthConfig:
    """A 2 x 2 m floor plan with compact, well-separated primitives."""
    return SynthConfig(seed=seed, n_points=n_points, instances_range=instances_range, extent=(2.0, 2.0, 1.0),
                       gap=0.25)


def generate_room(cfg: SynthConfig, index: int) -> PointCloud:
    return generate_scene(cfg, index)


def training_clouds(rooms: list[PointCloud], size: float = 1.0, stride: float = 0.5,
                    min_points: int = 0, room_repeats: int = 1) -> list[PointCloud]:
    """Whole rooms and all their blocks, every cloud carrying the room-location channels.

    A room yields about nine blocks, so ``room_repeats`` lists each whole room
    several times to keep room-scale scenes from being swamped.
    """
    out = []
    for room in rooms:
        out.extend([with_room_location(room)] * room_repeats)
        _, clouds = slice_blocks(room, size, stride)
        out.extend(pad_cloud(c, min_points) for c in clouds)
    return out


def pad_cloud(cloud: PointCloud, n: int, seed: int = 0) -> PointCloud:
    """Append copies of randomly chosen points until the cloud has ``n`` points.

    The original points stay first and in order. A copy has the same input as
    its source, so the network gives it the same scores and the same label.
    """
    if cloud.n_points >= n:
        return cloud
    extra = np.random.default_rng(seed).choice(cloud.n_points, n - cloud.n_points)
    return cloud.subset(np.concatenate([np.arange(cloud.n_points), extra]))


def train_room_model(seed: int, n_rooms: int, epochs: int, room_repeats: int = 1,
                     on_step=None) -> tuple[ProtoSeg, RunConfig]:
    """Train a model with the room-location channels on whole rooms and their blocks."""
    cfg = RunConfig(model=ModelConfig(in_channels=6), seed=seed)
    rooms = [generate_room(room_config(seed), i) for i in range(n_rooms)]
    clouds = training_clouds(rooms, min_points=max(cfg.model.n_samples, cfg.model.k_base),
                             room_repeats=room_repeats)
    model = ProtoSeg(cfg.model, cfg.seed)
    Trainer(model, cfg, on_step=on_step).fit(clouds, epochs)
    return model, cfg


@dataclass
class RoomResult:
    labels: np.ndarray
    block_labels: list[np.ndarray] = field(default_factory=list)
    padded_blocks: int = 0


def infer_room(model: ProtoSeg, room: PointCloud) -> RoomResult:
    res = infer(model, with_room_location(room))
    labels = res.labels
    if room.semantic_labels is not None:
        labels = attach_orphans(labels, room.xyz, room.semantic_labels)
    return RoomResult(compact_labels(labels))


def infer_blocks(model: ProtoSeg, room: PointCloud, size: float = 1.0, stride: float = 0.5,
                 merge_t: float = 0.5) -> RoomResult:
    """Per-block inference, BlockMerge, then one orphan pass over the merged room.

    Blocks with fewer points than the model needs are padded with repeated
    points (see :func:`pad_cloud`); only the original points' labels are kept.
    """
    layout, clouds = slice_blocks(room, size, stride)
    need = max(model.cfg.n_samples, model.cfg.k_base)
    block_labels, padded = [], 0
    for cloud in clouds:
        padded += cloud.n_points < need
        block_labels.append(infer(model, pad_cloud(cloud, need)).labels[:cloud.n_points])
    merged = block_merge(block_labels, layout, room.n_points, merge_t)
    if room.semantic_labels is not None:
        merged = attach_orphans(merged, room.xyz, room.semantic_labels)
    return RoomResult(compact_labels(merged), block_labels, padded)
