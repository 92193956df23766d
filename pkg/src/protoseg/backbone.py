"""Shared per-point feature extractor (PointNet-style, without input transforms)."""

from __future__ import annotations

import numpy as np

from .data import PointCloud
from .nn import MLP, Linear
from .tensor import Tensor, concat, reduce, relu, reshape


def normalize_input(cloud: PointCloud) -> np.ndarray:
    """Shift XYZ so the cloud's bounding-box centre is the origin; other channels pass through."""
    x = cloud.data.copy()
    xyz = x[:, :3]
    x[:, :3] = xyz - 0.5 * (xyz.min(axis=0) + xyz.max(axis=0))
    return x


class Backbone:
    """Per-point MLP, global max-pool, then a fusion layer over [local, pooled]."""

    def __init__(self, in_channels: int, rng: np.random.Generator, widths=(64, 64), feature_dim: int = 64):
        self.in_channels = in_channels
        self.point = MLP("backbone.point", [in_channels, *widths], rng, final_relu=True)
        self.fuse = Linear("backbone.fuse", 2 * widths[-1], feature_dim, rng)
        self.feature_dim = feature_dim

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.in_channels:
            raise ValueError(f"backbone expects {self.in_channels} input channels, got {x.shape[1]}")
        local = self.point(x)
        pooled = reshape(reduce("max", local, axis=0), (1, local.shape[1]))
        tiled = Tensor(np.ones((x.shape[0], 1))) @ pooled
        return relu(self.fuse(concat([local, tiled], axis=1)))

    def parameters(self) -> list[Tensor]:
        return self.point.parameters() + self.fuse.parameters()


def extract_features(cloud: PointCloud, backbone: Backbone) -> Tensor:
    """N x F features for ``cloud``."""
    return backbone(Tensor(normalize_input(cloud)))
