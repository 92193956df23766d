"""Whole-room inference versus 1 m blocks + BlockMerge on synthetic 2 x 2 m rooms.

Trains a 6-channel model (XYZ plus room location) on whole rooms and their
blocks, then counts the held-out rooms whose two labelings induce the same
partition.

    python scripts/room_blockmerge.py --train-rooms 160 --epochs 10 --room-repeats 3 --out room.psg
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from protoseg.blocks import generate_room, infer_blocks, infer_room, room_config, train_room_model
from protoseg.config import DEFAULT_SEED
from protoseg.metrics import same_partition
from protoseg.model import ProtoSeg, save_model
from protoseg.train import log_line


def compare_rooms(model: ProtoSeg, seed: int, n_rooms: int = 10, start: int = 10000) -> list[dict]:
    out = []
    for i in range(start, start + n_rooms):
        room = generate_room(room_config(seed), i)
        whole = infer_room(model, room)
        blocks = infer_blocks(model, room)
        out.append({"room": i, "same": bool(same_partition(whole.labels, blocks.labels)),
                    "whole_vs_gt": bool(same_partition(whole.labels, room.instance_labels)),
                    "blocks_vs_gt": bool(same_partition(blocks.labels, room.instance_labels)),
                    "disagree_points": int(np.sum(whole.labels != blocks.labels))})
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=DEFAULT_SEED)
    ap.add_argument("--train-rooms", type=int, default=160)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--room-repeats", type=int, default=3, help="copies of each whole room per epoch")
    ap.add_argument("--rooms", type=int, default=10)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    t0 = time.perf_counter()
    model, cfg = train_room_model(args.seed, args.train_rooms, args.epochs, args.room_repeats,
                                  on_step=lambda e: print(log_line({**e, "seconds": round(time.perf_counter() - t0, 1)}),
                                                          flush=True))
    if args.out:
        save_model(args.out, model, cfg)
    rows = compare_rooms(model, args.seed, args.rooms)
    for r in rows:
        print(json.dumps(r), flush=True)
    print(json.dumps({"agreeing_rooms": sum(r["same"] for r in rows), "rooms": len(rows)}))


if __name__ == "__main__":
    main()
