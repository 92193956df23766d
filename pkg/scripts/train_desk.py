"""Desk-scale end-to-end run: train on synthetic scenes, score a held-out set, time the pipeline.

    python scripts/train_desk.py --epochs 15 --out desk.psg
"""

from __future__ import annotations

import argparse
import json
import time

from protoseg.bench import bench
from protoseg.config import DEFAULT_SEED, RunConfig
from protoseg.data import SynthConfig, generate_scene
from protoseg.evaluate import evaluate_dataset
from protoseg.model import ProtoSeg, save_model
from protoseg.train import Trainer, log_line


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=DEFAULT_SEED)
    ap.add_argument("--train-scenes", type=int, default=200)
    ap.add_argument("--test-scenes", type=int, default=50)
    ap.add_argument("--epochs", type=int, default=15)
    ap.add_argument("--bench-scenes", type=int, default=20, help="0 skips the timing table")
    ap.add_argument("--out", default=None, help="checkpoint path")
    args = ap.parse_args()

    cfg = RunConfig(seed=args.seed, epochs=args.epochs)
    sc = SynthConfig(seed=cfg.seed, n_points=1024, instances_range=(2, 6))
    train = [generate_scene(sc, i) for i in range(args.train_scenes)]
    test = [(f"held_out_{i}", generate_scene(sc, 10000 + i)) for i in range(args.test_scenes)]
    model = ProtoSeg(cfg.model, cfg.seed)
    t0 = time.perf_counter()
    Trainer(model, cfg, on_step=lambda e: print(log_line(e), flush=True)).fit(train)
    print(json.dumps({"train_seconds": round(time.perf_counter() - t0, 1)}))
    if args.out:
        save_model(args.out, model, cfg)
    _, agg = evaluate_dataset(model, test)
    print(json.dumps({k: agg[k] for k in ("mPrec", "mRec", "mCov", "mWCov", "mAP50")}))
    if args.bench_scenes:
        # fixed N, instance counts cycling through 2..10
        scenes = [generate_scene(SynthConfig(seed=cfg.seed + 8, instances_range=(2 + i % 9,) * 2), i)
                  for i in range(args.bench_scenes)]
        table = bench(model, scenes, repetitions=5, warmup=3)
        print(json.dumps({k: table[k] for k in ("Network (ms)", "NMS (ms)", "Total (ms)", "total_cv")}))


if __name__ == "__main__":
    main()
