"""Coefficient branch with the dilated point inception (DPI) module.

Every sampled point looks at its neighbourhood through one PointConv branch
per dilation factor. The branch outputs are concatenated, fused by an MLP and
squashed by tanh into one row of M coefficients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import NeighborIndex, SampleSet, dilated_select, knn
from .nn import MLP, Linear
from .tensor import Tensor, concat, gather_rows, reduce, relu, reshape, tanh


@dataclass(frozen=True)
class DpiConfig:
    dilations: tuple[int, ...] = (1, 2, 4, 8)
    k: int = 16
    branch_width: int = 32
    fusion_width: int = 128
    kernel_hidden: int = 16
    offset_scale: float = 10.0

    @property
    def k_base(self) -> int:
        return self.k * max(self.dilations)


class PointConvBranch:
    """PointConv without density re-weighting.

    A weight MLP turns each neighbour's relative offset into a per-channel
    kernel; kernel-weighted neighbour features are summed and lifted.
    """

    def __init__(self, name: str, feature_dim: int, cfg: DpiConfig, rng: np.random.Generator):
        self.kernel = MLP(f"{name}.kernel", [3, cfg.kernel_hidden, feature_dim], rng)
        # the lift sees a sum over k neighbours, so its effective fan-in is k * feature_dim
        self.lift = Linear(f"{name}.lift", feature_dim, cfg.branch_width, rng, fan_in=cfg.k * feature_dim)
        self.offset_scale = cfg.offset_scale

    def __call__(self, centers: np.ndarray, nbr_idx: np.ndarray, feats: Tensor, coords: np.ndarray) -> Tensor:
        """``centers`` (Q,) and ``nbr_idx`` (Q, k) index into ``coords``/``feats``; returns (Q, branch_width)."""
        q, k = nbr_idx.shape
        if k == 0:
            raise ValueError("pointconv branch got an empty neighbour list")
        offsets = (coords[nbr_idx] - coords[centers][:, None, :]).reshape(q * k, 3)
        weights = self.kernel(Tensor(offsets * self.offset_scale))
        gathered = gather_rows(feats, nbr_idx.reshape(-1))
        summed = reduce("sum", reshape(weights * gathered, (q, k, feats.shape[1])), axis=1)
        return relu(self.lift(summed))

    def parameters(self) -> list[Tensor]:
        return self.kernel.parameters() + self.lift.parameters()


class CoeffNet:
    def __init__(self, feature_dim: int, n_prototypes: int, cfg: DpiConfig, rng: np.random.Generator):
        d = cfg.dilations
        if not d or d[0] != 1 or any(b <= a for a, b in zip(d, d[1:])):
            raise ValueError(f"dilations must start at 1 and increase strictly, got {d}")
        self.cfg = cfg
        self.branches = {dil: PointConvBranch(f"coeffnet.dpi{dil}", feature_dim, cfg, rng) for dil in d}
        self.fusion = MLP("coeffnet.fusion", [cfg.branch_width * len(d), cfg.fusion_width, n_prototypes], rng)

    def neighbors(self, samples: SampleSet, coords: np.ndarray) -> NeighborIndex:
        # one shared query feeds every branch
        return knn(coords[samples.indices], coords, self.cfg.k_base)

    def __call__(self, samples: SampleSet, feats: Tensor, coords: np.ndarray,
                 nbrs: NeighborIndex | None = None) -> Tensor:
        if nbrs is None:
            nbrs = self.neighbors(samples, coords)
        outs = [branch(samples.indices, dilated_select(nbrs, dil, self.cfg.k).indices, feats, coords)
                for dil, branch in self.branches.items()]
        fused = outs[0] if len(outs) == 1 else concat(outs, axis=1)
        return tanh(self.fusion(fused))

    def parameters(self) -> list[Tensor]:
        params = [p for b in self.branches.values() for p in b.parameters()]
        return params + self.fusion.parameters()


def dpi_coefficients(samples: SampleSet, feats: Tensor, coords: np.ndarray, net: CoeffNet) -> Tensor:
    """K x M coefficient matrix with entries in (-1, 1)."""
    return net(samples, feats, coords)


def coefficient_histogram(coeffs: np.ndarray, retained, bins: int = 40) -> dict:
    """Histogram over the coefficient rows of NMS-retained masks only."""
    rows = np.asarray(coeffs)[list(retained)]
    counts, edges = np.histogram(rows.reshape(-1), bins=bins, range=(-1.0, 1.0))
    return {"bins": edges.tolist(), "counts": counts.tolist()}


def write_histogram(hist: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(hist))
