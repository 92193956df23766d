"""Point sampling and neighbourhood construction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .tensor import record_op

Space = Literal["coordinates", "features"]


@dataclass(frozen=True)
class SampleSet:
    indices: np.ndarray
    space: Space = "coordinates"

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class NeighborIndex:
    """Per-query neighbour lists sorted by ascending squared distance."""

    indices: np.ndarray  # (Q, k_base) int64
    sq_dists: np.ndarray  # (Q, k_base)

    @property
    def k_base(self) -> int:
        return self.indices.shape[1]


def fps(vectors: np.ndarray, k: int, start: int = 0, space: Space = "coordinates") -> SampleSet:
    """Greedy farthest point sampling.

    Each step picks the unselected point whose squared distance to the
    nearest already-selected point is largest; ties go to the lowest index.
    """
    x = np.asarray(vectors, dtype=np.float64)
    n = x.shape[0]
    if k <= 0:
        raise ValueError("fps: K must be positive")
    if k > n:
        raise ValueError(f"fps: cannot sample K={k} from N={n} points")
    if not 0 <= start < n:
        raise ValueError(f"fps: start index {start} out of range for N={n}")
    record_op("fps", n, x.shape[1], k)
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = start
    nearest = ((x - x[start]) ** 2).sum(axis=1)
    nearest[start] = -np.inf
    for i in range(1, k):
        nxt = int(np.argmax(nearest))
        chosen[i] = nxt
        # selected entries sit at -inf and stay there under minimum
        np.minimum(nearest, ((x - x[nxt]) ** 2).sum(axis=1), out=nearest)
        nearest[nxt] = -np.inf
    return SampleSet(chosen, space)


def knn(queries: np.ndarray, base: np.ndarray, k: int) -> NeighborIndex:
    """Exact k nearest neighbours by brute force; equal distances keep the lower index first."""
    q = np.asarray(queries, dtype=np.float64)
    b = np.asarray(base, dtype=np.float64)
    n = b.shape[0]
    if k > n:
        raise ValueError(f"knn: k={k} exceeds base size N={n}")
    if k <= 0:
        raise ValueError("knn: k must be positive")
    record_op("knn", q.shape[0], n, b.shape[1], k)
    d = ((q[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    order = np.argsort(d, axis=1, kind="stable")[:, :k]
    return NeighborIndex(order, np.take_along_axis(d, order, axis=1))


def dilated_select(nbrs: NeighborIndex, d: int, k: int) -> NeighborIndex:
    """Keep every ``d``-th neighbour: sorted positions d-1, 2d-1, ..., kd-1."""
    if d < 1 or k < 1:
        raise ValueError("dilated_select: dilation and k must be positive")
    if nbrs.k_base < k * d:
        raise ValueError(
            f"dilated_select: need {k * d} stored neighbours for k={k}, d={d} but only "
            f"{nbrs.k_base} available; rebuild the index with a larger k_base"
        )
    cols = np.arange(d - 1, k * d, d)
    return NeighborIndex(nbrs.indices[:, cols], nbrs.sq_dists[:, cols])
