"""Reciprocal loss and the nearest-GT baseline it replaces.

All pairwise terms are BCE between one candidate mask and one ground-truth
mask, averaged over the N points. They are computed from logits through
``softplus(z) - t * z``, which equals the BCE of ``sigmoid(z)`` without the
saturation of a probability-space clamp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import MaskSet
from .tensor import Tensor, matmul, mul, reduce, reshape, scale, softplus, sub


@dataclass
class GroundTruth:
    masks: np.ndarray  # (G, N) of 0/1
    ids: np.ndarray  # original instance label of each mask
    point_mask: np.ndarray  # (N,) mask index per point, -1 when unlabelled

    @property
    def sizes(self) -> np.ndarray:
        return self.masks.sum(axis=1)

    @property
    def n_instances(self) -> int:
        return self.masks.shape[0]

    @classmethod
    def from_labels(cls, instance_labels) -> "GroundTruth":
        lab = np.asarray(instance_labels, dtype=np.int64)
        ids = np.unique(lab[lab >= 0])
        masks = (lab[None, :] == ids[:, None]).astype(np.float64)
        point_mask = np.full(lab.shape, -1, dtype=np.int64)
        point_mask[lab >= 0] = np.searchsorted(ids, lab[lab >= 0])
        return cls(masks, ids, point_mask)


@dataclass
class LossConfig:
    lam: float = 1.0
    use_spatial_matching: bool = True
    use_gt_to_pr: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")


@dataclass
class LossTerms:
    total: Tensor
    j_pr_gt: float
    j_gt_pr: float
    skipped_samples: int


def bce_table(masks: MaskSet, gt: GroundTruth) -> Tensor:
    """(K, G) table of mean BCE between every candidate and every GT mask."""
    z = masks.raw
    n = z.shape[1]
    per_row = reshape(reduce("mean", softplus(z), axis=1), (z.shape[0], 1))
    cross = matmul(z, Tensor(gt.masks.T))
    return sub(per_row, scale(cross, 1.0 / n))


def loss_pr_to_gt_nearest(masks: MaskSet, gt: GroundTruth) -> Tensor:
    """Each candidate against whichever GT mask it currently fits best."""
    return reduce("sum", reduce("min", bce_table(masks, gt), axis=1))


def loss_pr_to_gt(masks: MaskSet, gt: GroundTruth, sample_origin=None) -> tuple[Tensor, int]:
    """Each candidate against the GT mask containing the point it was sampled at.

    Candidates whose sampled point is unlabelled are left out; their count is
    returned alongside the loss.
    """
    origin = masks.sample_origin if sample_origin is None else np.asarray(sample_origin)
    target = gt.point_mask[origin]
    valid = target >= 0
    onehot = np.zeros((masks.n_masks, gt.n_instances))
    onehot[np.flatnonzero(valid), target[valid]] = 1.0
    return reduce("sum", mul(bce_table(masks, gt), Tensor(onehot))), int((~valid).sum())


def loss_gt_to_pr(masks: MaskSet, gt: GroundTruth) -> Tensor:
    """Each GT mask against its best-fitting candidate."""
    return reduce("sum", reduce("min", bce_table(masks, gt), axis=0))


def reciprocal_loss(masks: MaskSet, gt: GroundTruth, sample_origin=None,
                    cfg: LossConfig | None = None) -> LossTerms:
    cfg = cfg or LossConfig()
    skipped = 0
    if cfg.use_spatial_matching:
        first, skipped = loss_pr_to_gt(masks, gt, sample_origin)
    else:
        first = loss_pr_to_gt_nearest(masks, gt)
    total = first
    second_value = 0.0
    if cfg.use_gt_to_pr and cfg.lam > 0:
        second = loss_gt_to_pr(masks, gt)
        second_value = second.item()
        total = total + scale(second, cfg.lam)
    return LossTerms(total, first.item(), second_value, skipped)

