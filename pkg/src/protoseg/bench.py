"""Per-stage inference timing, pinned to a single thread."""

from __future__ import annotations

import statistics
from contextlib import contextmanager
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .data import PointCloud
from .model import STAGES, ProtoSeg, infer
from .tensor import OpCounter

NETWORK_STAGES = STAGES[:-1]


@contextmanager
def single_thread():
    with threadpool_limits(limits=1):
        yield


def _summary(values: Sequence[float]) -> dict:
    mean = float(np.mean(values))
    std = float(np.std(values))
    return {"mean": mean, "std": std, "median": float(statistics.median(values)),
            "cv": std / mean if mean > 0 else 0.0}


def pre_nms_counts(counts: dict[str, OpCounter]) -> dict[str, OpCounter]:
    return {k: v for k, v in counts.items() if k in NETWORK_STAGES}


def bench(model: ProtoSeg, scenes: Sequence[PointCloud], repetitions: int = 3, warmup: int = 2) -> dict:
    """Timing table with Network / NMS / Total columns over scenes x repetitions.

    Repetitions sweep the scene list round-robin so slow drift of the machine
    spreads over all scenes instead of landing on a few. ``per_scene`` holds
    the median total time of each scene; ``total_cv`` is the coefficient of
    variation of those medians across scenes.
    """
    rows = []
    totals: list[list[float]] = [[] for _ in scenes]
    op_counts: list[dict[str, OpCounter]] = [{} for _ in scenes]
    with single_thread():
        for _ in range(warmup):
            infer(model, scenes[0])
        for _ in range(repetitions):
            for i, cloud in enumerate(scenes):
                res = infer(model, cloud)
                net = sum(res.timings[s] for s in NETWORK_STAGES)
                rows.append({"network": net, "nms": res.timings["nms_ms"], "total": res.timings["total_ms"],
                             **{s: res.timings[s] for s in STAGES}})
                totals[i].append(res.timings["total_ms"])
                op_counts[i] = pre_nms_counts(res.op_counts)
    per_scene = [float(statistics.median(t)) for t in totals]
    table = {
        "Network (ms)": _summary([r["network"] for r in rows]),
        "NMS (ms)": _summary([r["nms"] for r in rows]),
        "Total (ms)": _summary([r["total"] for r in rows]),
        "stages": {s: _summary([r[s] for r in rows]) for s in STAGES},
        "per_scene_total_ms": per_scene,
        "total_cv": _summary(per_scene)["cv"],
        "scenes": len(scenes),
        "repetitions": repetitions,
    }
    by_n: dict[int, list[dict[str, OpCounter]]] = {}
    for cloud, c in zip(scenes, op_counts):
        by_n.setdefault(cloud.n_points, []).append(c)
    table["pre_nms_ops_identical"] = all(all(c == group[0] for c in group) for group in by_n.values())
    return table
