"""Instance segmentation metrics and block merging.

Masks are boolean arrays of shape (count, N). Class-aware metrics take one
semantic class per mask.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .assembly import pairwise_iou
from .data import BlockLayout


def iou(a, b) -> float:
    """|a & b| / |a | b|; two empty masks give 0."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"iou: masks of length {a.shape} and {b.shape}")
    union = np.logical_or(a, b).sum()
    return float(np.logical_and(a, b).sum() / union) if union else 0.0


def _as_masks(m, n: int | None = None) -> np.ndarray:
    m = np.asarray(m, dtype=bool)
    if m.ndim == 1:
        m = m.reshape(0, n if n is not None else 0) if m.size == 0 else m[None, :]
    return m


def coverage_metrics(pred, gt) -> tuple[float, float]:
    """(mCov, mWCov): best IoU per GT instance, plain and size-weighted means."""
    gt = _as_masks(gt)
    pred = _as_masks(pred, gt.shape[1])
    if gt.shape[0] == 0:
        raise ValueError("coverage_metrics needs at least one GT mask")
    if pred.shape[0] == 0:
        return 0.0, 0.0
    best = pairwise_iou(gt, pred).max(axis=1)
    sizes = gt.sum(axis=1).astype(np.float64)
    return float(best.mean()), float((best * sizes).sum() / sizes.sum())


def match_greedy(pred, gt, iou_t: float = 0.5) -> list[tuple[int, int]]:
    """One-to-one matches, taken in order of descending IoU (ties: lower pred, then lower GT)."""
    gt = _as_masks(gt)
    pred = _as_masks(pred, gt.shape[1])
    if pred.shape[0] == 0 or gt.shape[0] == 0:
        return []
    m = pairwise_iou(pred, gt)
    pi, gi = np.nonzero(m >= iou_t)
    order = np.lexsort((gi, pi, -m[pi, gi]))
    used_p, used_g, pairs = set(), set(), []
    for j in order:
        p, g = int(pi[j]), int(gi[j])
        if p in used_p or g in used_g:
            continue
        used_p.add(p)
        used_g.add(g)
        pairs.append((p, g))
    return pairs


@dataclass
class ClassCounts:
    tp: int = 0
    n_pred: int = 0
    n_gt: int = 0


def prec_rec_counts(pred, gt, pred_cls=None, gt_cls=None, iou_t: float = 0.5) -> dict[int, ClassCounts]:
    gt = _as_masks(gt)
    pred = _as_masks(pred, gt.shape[1])
    pred_cls = np.zeros(len(pred), dtype=int) if pred_cls is None else np.asarray(pred_cls)
    gt_cls = np.zeros(len(gt), dtype=int) if gt_cls is None else np.asarray(gt_cls)
    out: dict[int, ClassCounts] = {}
    for c in np.union1d(pred_cls, gt_cls):
        p, g = pred[pred_cls == c], gt[gt_cls == c]
        out[int(c)] = ClassCounts(len(match_greedy(p, g, iou_t)), len(p), len(g))
    return out


def summarize_prec_rec(counts: dict[int, ClassCounts]) -> tuple[float, float]:
    """Class-averaged precision (classes with predictions) and recall (classes with GT)."""
    prec = [c.tp / c.n_pred for c in counts.values() if c.n_pred]
    rec = [c.tp / c.n_gt for c in counts.values() if c.n_gt]
    return (float(np.mean(prec)) if prec else 0.0, float(np.mean(rec)) if rec else 0.0)


def merge_counts(per_scene) -> dict[int, ClassCounts]:
    total: dict[int, ClassCounts] = defaultdict(ClassCounts)
    for counts in per_scene:
        for c, v in counts.items():
            t = total[c]
            t.tp += v.tp
            t.n_pred += v.n_pred
            t.n_gt += v.n_gt
    return dict(total)


def prec_rec(pred, gt, pred_cls=None, gt_cls=None, iou_t: float = 0.5) -> tuple[float, float]:
    """(mPrec, mRec) at IoU ``iou_t`` with one-to-one greedy matching per class."""
    return summarize_prec_rec(prec_rec_counts(pred, gt, pred_cls, gt_cls, iou_t))


@dataclass
class Detections:
    """One scene's scored predictions and its ground truth."""

    masks: np.ndarray
    scores: np.ndarray
    classes: np.ndarray
    gt_masks: np.ndarray
    gt_classes: np.ndarray


def average_precision(recall: np.ndarray, precision: np.ndarray) -> float:
    """Area under the all-point interpolated precision-recall curve."""
    r = np.concatenate([[0.0], recall, [1.0]])
    p = np.concatenate([[0.0], precision, [0.0]])
    p = np.maximum.accumulate(p[::-1])[::-1]
    steps = np.flatnonzero(r[1:] != r[:-1])
    return float(((r[steps + 1] - r[steps]) * p[steps + 1]).sum())


def map50(scenes: list[Detections], categories=None, iou_t: float = 0.5) -> float:
    """Mean over categories of AP from confidence-ranked detections.

    Each detection is matched to its highest-IoU GT of the same class in its
    scene; it is a true positive when that IoU reaches ``iou_t`` and the GT
    is still unclaimed. Categories without GT are skipped.
    """
    if categories is None:
        categories = np.unique(np.concatenate([np.asarray(s.gt_classes) for s in scenes] or [[]]))
    aps = []
    for c in categories:
        n_gt = sum(int((np.asarray(s.gt_classes) == c).sum()) for s in scenes)
        if n_gt == 0:
            continue
        dets = []
        for si, s in enumerate(scenes):
            for di in np.flatnonzero(np.asarray(s.classes) == c):
                dets.append((-float(s.scores[di]), si, int(di)))
        dets.sort()
        claimed = [set() for _ in scenes]
        tp = np.zeros(len(dets))
        for j, (_, si, di) in enumerate(dets):
            s = scenes[si]
            gmask = np.flatnonzero(np.asarray(s.gt_classes) == c)
            if gmask.size == 0:
                continue
            ious = pairwise_iou(np.asarray(s.masks[di:di + 1], bool), np.asarray(s.gt_masks[gmask], bool))[0]
            best = int(np.argmax(ious))
            if ious[best] >= iou_t and best not in claimed[si]:
                claimed[si].add(best)
                tp[j] = 1
        if not dets:
            aps.append(0.0)
            continue
        ctp = np.cumsum(tp)
        aps.append(average_precision(ctp / n_gt, ctp / np.arange(1, len(dets) + 1)))
    return float(np.mean(aps)) if aps else 0.0


# -- labelings --------------------------------------------------------------

def labels_to_masks(labels) -> tuple[np.ndarray, np.ndarray]:
    """(masks, ids) for every non-negative label."""
    labels = np.asarray(labels)
    ids = np.unique(labels[labels >= 0])
    return labels[None, :] == ids[:, None], ids


def mask_classes(masks: np.ndarray, semantic: np.ndarray) -> np.ndarray:
    """Majority semantic class of each mask's points."""
    out = np.zeros(len(masks), dtype=np.int64)
    for i, m in enumerate(masks):
        if m.any():
            out[i] = np.bincount(semantic[m]).argmax()
    return out


def same_partition(a, b) -> bool:
    """Whether two labelings induce the same partition of the points (ids are arbitrary)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        return False
    pairs = np.unique(np.stack([a, b]), axis=1)
    return len(np.unique(pairs[0])) == pairs.shape[1] == len(np.unique(pairs[1]))


def compact_labels(labels) -> np.ndarray:
    """Renumber non-negative labels to 0..G-1 in order of first appearance."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.full_like(labels, -1)
    mapping: dict[int, int] = {}
    for i, v in enumerate(labels):
        if v >= 0:
            out[i] = mapping.setdefault(int(v), len(mapping))
    return out


def block_merge(block_labels: list[np.ndarray], layout: BlockLayout, n_points: int,
                merge_t: float = 0.5) -> np.ndarray:
    """Grow a room labeling block by block.

    For a block instance, only the block's points that earlier blocks already
    labelled take part in matching. The instance joins the global instance
    holding the most of those points when the IoU between the instance and
    that global instance, both restricted to the already-labelled points, is
    at least ``merge_t``; otherwise it becomes a new global instance. Points
    seen by several blocks keep their most recent assignment.
    """
    room = np.full(n_points, -1, dtype=np.int64)
    next_id = 0
    for idx, local in zip(layout.blocks, block_labels):
        local = np.asarray(local)
        before = room[idx].copy()
        seen = before >= 0
        decisions = {}
        for inst in np.unique(local[local >= 0]):
            member = local == inst
            target = -1
            hits = before[member & seen]
            if hits.size:
                g = int(np.bincount(hits).argmax())
                a = member & seen
                b = before == g
                if (a & b).sum() / (a | b).sum() >= merge_t:
                    target = g
            if target < 0:
                target = next_id
                next_id += 1
            decisions[int(inst)] = target
        for inst, target in decisions.items():
            room[idx[local == inst]] = target
    return compact_labels(room)


# -- scene report -------------------------------------------------------------

@dataclass
class SceneReport:
    scene_id: str
    metrics: dict[str, float] = field(default_factory=dict)
    per_class: dict[int, dict[str, float]] = field(default_factory=dict)
    counts: dict[int, ClassCounts] = field(default_factory=dict)
    n_pred: int = 0
    n_gt: int = 0
    timings: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "metrics": self.metrics,
            "per_class": {str(c): v for c, v in self.per_class.items()},
            "instances": {"pred": self.n_pred, "gt": self.n_gt},
            "timings": self.timings,
        }


def scene_report(scene_id: str, pred_masks, gt_labels, semantic, timings=None,
                 iou_t: float = 0.5) -> SceneReport:
    gt_masks, _ = labels_to_masks(gt_labels)
    pred_masks = _as_masks(pred_masks, gt_masks.shape[1])
    semantic = np.asarray(semantic)
    pc, gc = mask_classes(pred_masks, semantic), mask_classes(gt_masks, semantic)
    counts = prec_rec_counts(pred_masks, gt_masks, pc, gc, iou_t)
    per_class = {}
    for c in np.unique(gc):
        cov, wcov = coverage_metrics(pred_masks[pc == c], gt_masks[gc == c])
        cc = counts[int(c)]
        per_class[int(c)] = {"mCov": cov, "mWCov": wcov,
                             "mPrec": cc.tp / cc.n_pred if cc.n_pred else 0.0,
                             "mRec": cc.tp / cc.n_gt if cc.n_gt else 0.0}
    mprec, mrec = summarize_prec_rec(counts)
    metrics = {
        "mCov": float(np.mean([v["mCov"] for v in per_class.values()])),
        "mWCov": float(np.mean([v["mWCov"] for v in per_class.values()])),
        "mPrec": mprec,
        "mRec": mrec,
    }
    return SceneReport(scene_id, metrics, per_class, counts, len(pred_masks), len(gt_masks), dict(timings or {}))
