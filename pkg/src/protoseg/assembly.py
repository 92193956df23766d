"""Mask assembly: coefficients x prototypes, thresholding and NMS."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import BCE_EPS, DimensionError, Tensor, matmul, record_op, transpose


@dataclass
class MaskSet:
    """Overcomplete K x N candidate masks.

    ``raw`` holds the pre-sigmoid logits (as a graph tensor while training);
    ``retained`` and ``confidence`` are filled in by :func:`nms`.
    """

    raw: Tensor
    scores: np.ndarray
    sample_origin: np.ndarray
    retained: list[int] = field(default_factory=list)
    confidence: np.ndarray | None = None

    @property
    def n_masks(self) -> int:
        return self.scores.shape[0]

    @classmethod
    def from_scores(cls, scores, sample_origin=None) -> "MaskSet":
        """Wrap probabilities; logits are recovered from the clamped probabilities."""
        p = np.clip(np.asarray(scores, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
        origin = np.arange(p.shape[0]) if sample_origin is None else np.asarray(sample_origin)
        return cls(Tensor(np.log(p) - np.log1p(-p)), np.asarray(scores, dtype=np.float64), origin)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def assemble(coeffs: Tensor, protos: Tensor, sample_origin=None) -> MaskSet:
    """raw = C @ P^T, scores = sigmoid(raw)."""
    if coeffs.shape[1] != protos.shape[1]:
        raise DimensionError(f"assemble: coefficients {coeffs.shape} and prototypes {protos.shape} disagree on M")
    raw = matmul(coeffs, transpose(protos))
    record_op("sigmoid", raw.shape)
    origin = np.arange(coeffs.shape[0]) if sample_origin is None else np.asarray(sample_origin)
    return MaskSet(raw, _sigmoid(raw.data), origin)


def binarize(scores: np.ndarray, threshold: float = 0.3) -> np.ndarray:
    """Point belongs to the mask iff its score is strictly above ``threshold``."""
    return np.asarray(scores) > threshold


def mask_confidence(scores: np.ndarray, binary: np.ndarray) -> np.ndarray:
    """Mean in-mask score per row; 0 for empty masks."""
    counts = binary.sum(axis=-1)
    total = (scores * binary).sum(axis=-1)
    return np.where(counts > 0, total / np.maximum(counts, 1), 0.0)


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    inter = a @ b.T
    union = a.sum(1)[:, None] + b.sum(1)[None, :] - inter
    return np.where(union > 0, inter / np.maximum(union, 1), 0.0)


def nms(masks: MaskSet, iou_threshold: float = 0.5, threshold: float = 0.3) -> list[int]:
    """Greedy mask NMS; fills ``masks.retained`` and ``masks.confidence``.

    Candidates are visited by descending confidence (ties: lower sample
    origin first). A kept mask removes every remaining mask whose IoU with it
    is at least ``iou_threshold``. Empty masks are never kept.
    """
    binary = binarize(masks.scores, threshold)
    conf = mask_confidence(masks.scores, binary)
    order = np.lexsort((masks.sample_origin, -conf))
    nonempty = binary.any(axis=1)
    iou = pairwise_iou(binary, binary)
    alive = nonempty.copy()
    kept: list[int] = []
    for i in order:
        if not alive[i]:
            continue
        kept.append(int(i))
        alive &= iou[i] < iou_threshold
    masks.retained = kept
    masks.confidence = conf
    return kept


def label_points(masks: MaskSet, threshold: float = 0.3) -> np.ndarray:
    """Instance id per point: the highest-scoring retained mask containing it, else -1.

    Instance ids are positions in ``masks.retained``.
    """
    n = masks.scores.shape[1]
    if not masks.retained:
        return np.full(n, -1, dtype=np.int64)
    s = masks.scores[masks.retained]
    inside = binarize(s, threshold)
    best = np.argmax(np.where(inside, s, -1.0), axis=0)
    return np.where(inside.any(axis=0), best, -1).astype(np.int64)


def _min_sq_dist(queries: np.ndarray, members: np.ndarray, chunk: int = 256) -> np.ndarray:
    out = np.empty(len(queries))
    for lo in range(0, len(queries), chunk):
        q = queries[lo:lo + chunk]
        out[lo:lo + chunk] = ((q[:, None, :] - members[None, :, :]) ** 2).sum(axis=2).min(axis=1)
    return out


def attach_orphans(labels: np.ndarray, xyz: np.ndarray, semantic: np.ndarray) -> np.ndarray:
    """Assign unlabelled points to the nearest instance of their semantic class.

    An instance's class is the majority class of its members. When no
    instance shares an orphan's class, the globally nearest instance wins;
    distance ties go to the lower instance id. With no instances at all, every
    point becomes instance 0.
    """
    labels = np.asarray(labels, dtype=np.int64).copy()
    ids = np.unique(labels[labels >= 0])
    if ids.size == 0:
        return np.zeros_like(labels)
    orphans = np.flatnonzero(labels < 0)
    if orphans.size == 0:
        return labels
    inst_class = np.array([np.bincount(semantic[labels == i]).argmax() for i in ids])
    dist = np.empty((orphans.size, ids.size))
    for col, i in enumerate(ids):
        dist[:, col] = _min_sq_dist(xyz[orphans], xyz[labels == i])
    same = inst_class[None, :] == semantic[orphans][:, None]
    restricted = np.where(same, dist, np.inf)
    has_same = same.any(axis=1)
    choice = np.where(has_same, np.argmin(restricted, axis=1), np.argmin(dist, axis=1))
    labels[orphans] = ids[choice]
    return labels
