"""Prototype branch: M raw scores per point, computed from the shared features."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import PointCloud
from .nn import MLP
from .tensor import Tensor


class ProtoScoreNet:
    def __init__(self, feature_dim: int, n_prototypes: int, rng: np.random.Generator, hidden: int = 128):
        self.feature_dim = feature_dim
        self.n_prototypes = n_prototypes
        self.mlp = MLP("protoscore", [feature_dim, hidden, n_prototypes], rng)

    def __call__(self, feats: Tensor) -> Tensor:
        if feats.shape[1] != self.feature_dim:
            raise ValueError(f"protoscore expects width {self.feature_dim}, got {feats.shape[1]}")
        # raw scores: prototypes may cancel each other once combined
        return self.mlp(feats)

    def parameters(self) -> list[Tensor]:
        return self.mlp.parameters()


def prototypes(feats: Tensor, net: ProtoScoreNet) -> Tensor:
    return net(feats)


def export_prototype_scores(protos: np.ndarray, cloud: PointCloud, ids) -> list[dict]:
    """Per-point records of the requested prototype columns, min-max scaled to [0, 1].

    A constant column maps to all zeros.
    """
    protos = np.asarray(protos)
    records = []
    for pid in ids:
        if not 0 <= pid < protos.shape[1]:
            raise IndexError(f"prototype id {pid} out of range for M={protos.shape[1]}")
        col = protos[:, pid]
        span = col.max() - col.min()
        scaled = (col - col.min()) / span if span > 0 else np.zeros_like(col)
        for (x, y, z), s in zip(cloud.xyz, scaled):
            records.append({"prototype": int(pid), "x": float(x), "y": float(y), "z": float(z), "score": float(s)})
    return records


def write_jsonl(records: list[dict], path: str | Path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
