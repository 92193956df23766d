"""Dataset-level evaluation of a trained model."""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import PointCloud
from .metrics import (Detections, SceneReport, labels_to_masks, map50, mask_classes, merge_counts,
                      scene_report, summarize_prec_rec)
from .model import Inference, ProtoSeg, infer


def evaluate_scene(model: ProtoSeg, scene_id: str, cloud: PointCloud) -> tuple[SceneReport, Detections, Inference]:
    res = infer(model, cloud)
    pred = res.retained_masks
    report = scene_report(scene_id, pred, cloud.instance_labels, cloud.semantic_labels, res.timings)
    gt_masks, _ = labels_to_masks(cloud.instance_labels)
    det = Detections(pred, res.retained_confidence, mask_classes(pred, cloud.semantic_labels),
                     gt_masks, mask_classes(gt_masks, cloud.semantic_labels))
    return report, det, res


def aggregate(reports: Sequence[SceneReport], detections: Sequence[Detections]) -> dict:
    """Dataset metrics: precision/recall from pooled per-class counts, coverage averaged over scenes."""
    mprec, mrec = summarize_prec_rec(merge_counts([r.counts for r in reports]))
    return {
        "mPrec": mprec,
        "mRec": mrec,
        "mCov": float(np.mean([r.metrics["mCov"] for r in reports])),
        "mWCov": float(np.mean([r.metrics["mWCov"] for r in reports])),
        "mAP50": map50(list(detections)),
        "scenes": len(reports),
    }


def evaluate_dataset(model: ProtoSeg, scenes: Sequence[tuple[str, PointCloud]], threads: int = 1):
    """Per-scene reports plus the aggregate; ``threads`` > 1 evaluates scenes concurrently."""
    run = lambda item: evaluate_scene(model, *item)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, scenes))
    else:
        results = [run(s) for s in scenes]
    reports = [r for r, _, _ in results]
    return reports, aggregate(reports, [d for _, d, _ in results])


def write_reports(reports: Sequence[SceneReport], summary: dict, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps({"scenes": [r.to_dict() for r in reports], "aggregate": summary},
                                                indent=2))
    metric_keys = ["mCov", "mWCov", "mPrec", "mRec"]
    timing_keys = sorted({k for r in reports for k in r.timings})
    with open(out / "scenes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scene_id", *metric_keys, "n_pred", "n_gt", *timing_keys])
        for r in reports:
            w.writerow([r.scene_id, *(r.metrics[k] for k in metric_keys), r.n_pred, r.n_gt,
                        *(r.timings.get(k, "") for k in timing_keys)])
