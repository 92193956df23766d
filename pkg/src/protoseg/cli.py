"""Command-line front end: synth, train, infer, eval, bench, ablate.

Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import DEFAULT_SEED, RunConfig
from .data import FormatError, PlacementError, PointCloud, SynthConfig, generate_scene, load_dataset, read_cloud, \
    write_cloud, write_dataset
from .metrics import Detections, labels_to_masks, mask_classes, scene_report
from .model import ProtoSeg, infer, load_model, save_model
from .train import NumericError, Trainer, log_line

log = logging.getLogger("protoseg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def load_config(args) -> RunConfig:
    cfg = RunConfig.from_json(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.merged({"seed": args.seed})
    return cfg


def config_overrides(args) -> dict:
    """Settings the user asked for explicitly (config file and --seed)."""
    out = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.seed is not None:
        out["seed"] = args.seed
    return out


def conflicts(requested: dict, actual: dict, prefix: str = "") -> list[str]:
    found = []
    for key, value in requested.items():
        if isinstance(value, dict) and isinstance(actual.get(key), dict):
            found += conflicts(value, actual[key], f"{prefix}{key}.")
        elif key in actual and _norm(actual[key]) != _norm(value):
            found.append(f"{prefix}{key}: checkpoint {actual[key]!r}, requested {value!r}")
    return found


def _norm(v):
    return list(v) if isinstance(v, (list, tuple)) else v


def emit(line: str, fh=None) -> None:
    print(line, flush=True)
    if fh is not None:
        fh.write(line + "\n")


# -- subcommands -------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = SynthConfig(seed=args.seed if args.seed is not None else DEFAULT_SEED, n_points=args.n_points,
                      instances_range=tuple(args.instances), extent=tuple(args.extent))
    paths = write_dataset(cfg, args.count, args.out, args.start)
    print(json.dumps({"written": len(paths), "out": str(args.out), "seed": cfg.seed}))
    return EXIT_OK


def cmd_train(args) -> int:
    start_epoch = 0
    if args.resume:
        model, cfg, rest = load_model(args.resume)
        trainer = Trainer(model, cfg)
        trainer.restore_optimizer(rest)
        start_epoch = int(rest.get("train.epoch", np.zeros(1))[0])
    else:
        cfg = load_config(args)
        model = ProtoSeg(cfg.model, cfg.seed)
        trainer = Trainer(model, cfg)
    scenes = [c for _, c in load_dataset(args.data)]
    if not scenes:
        raise FormatError(f"no .pcl scenes in {args.data}")
    epochs = args.epochs if args.epochs is not None else cfg.epochs
    log_fh = open(args.log, "a") if args.log else None
    trainer.on_step = lambda entry: emit(log_line(entry), log_fh)
    try:
        trainer.fit(scenes, epochs, start_epoch)
    finally:
        if log_fh:
            log_fh.close()
    extra = trainer.optimizer_tensors()
    extra["train.epoch"] = np.array([float(start_epoch + epochs)])
    save_model(args.out, model, cfg, extra)
    log.info("saved %s", args.out)
    return EXIT_OK


def cmd_infer(args) -> int:
    from .coeffnet import coefficient_histogram, write_histogram
    from .protoscore import export_prototype_scores, write_jsonl

    model, cfg, _ = load_model(args.checkpoint)
    cloud = read_cloud(args.input)
    res = infer(model, cloud, attach=cfg.attach_orphans or args.attach)
    write_cloud(PointCloud(cloud.data, res.labels, cloud.semantic_labels), args.output)
    if args.export_prototypes:
        write_jsonl(export_prototype_scores(res.protos, cloud, args.prototype_ids), args.export_prototypes)
    if args.export_coeff_histogram:
        write_histogram(coefficient_histogram(res.coeffs, res.masks.retained), args.export_coeff_histogram)
    print(json.dumps({"instances": len(res.masks.retained), "timings": res.timings}))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluate import aggregate, evaluate_dataset, write_reports

    scenes = load_dataset(args.data)
    if not scenes:
        raise FormatError(f"no .pcl scenes in {args.data}")
    if args.checkpoint:
        model, cfg, _ = load_model(args.checkpoint)
        clash = conflicts(config_overrides(args), cfg.to_dict())
        if clash and not args.force:
            raise UsageError("checkpoint config conflicts with requested settings (use --force): " + "; ".join(clash))
        reports, summary = evaluate_dataset(model, scenes, args.threads)
        summary["config"] = cfg.to_dict()
    else:
        reports, dets = [], []
        for stem, gt in scenes:
            pred = read_cloud(Path(args.predictions) / f"{stem}.pcl")
            if pred.instance_labels is None or pred.n_points != gt.n_points:
                raise FormatError(f"prediction for {stem} lacks labels or has a different point count")
            masks, _ = labels_to_masks(pred.instance_labels)
            reports.append(scene_report(stem, masks, gt.instance_labels, gt.semantic_labels))
            gmasks, _ = labels_to_masks(gt.instance_labels)
            dets.append(Detections(masks, np.ones(len(masks)), mask_classes(masks, gt.semantic_labels),
                                   gmasks, mask_classes(gmasks, gt.semantic_labels)))
        summary = aggregate(reports, dets)
    write_reports(reports, summary, args.out)
    print(json.dumps({k: v for k, v in summary.items() if k != "config"}))
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import bench

    if args.checkpoint:
        model, cfg, _ = load_model(args.checkpoint)
    else:
        cfg = load_config(args)
        model = ProtoSeg(cfg.model, cfg.seed)
    if args.data:
        clouds = [c for _, c in load_dataset(args.data)]
    else:
        # instance counts cycle through 2..10 at a fixed N
        clouds = [generate_scene(SynthConfig(seed=cfg.seed, instances_range=(2 + i % 9, 2 + i % 9)), i)
                  for i in range(args.scenes)]
    table = bench(model, clouds, args.repetitions, args.warmup)
    text = json.dumps(table, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .ablation import format_table, run_ablation

    cfg = load_config(args)
    sc = SynthConfig(seed=cfg.seed, instances_range=(2, 6))
    train = [generate_scene(sc, i) for i in range(args.train_scenes)]
    test = [(f"test_{i}", generate_scene(sc, 100000 + i)) for i in range(args.test_scenes)]
    rows = run_ablation(cfg, train, test, args.epochs,
                        on_step=lambda arm, e: log.info("%s %s", arm, log_line(e)))
    if not all(r["losses_finite"] for r in rows):
        raise NumericError("an ablation arm produced a non-finite loss")
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=2))
    print(format_table(rows))
    return EXIT_OK


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = Parser(prog="protoseg", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None, help=f"global seed (default {DEFAULT_SEED})")
    p.add_argument("--threads", type=int, default=1, help="scene-level worker threads")
    p.add_argument("--config", type=str, default=None, help="JSON file overriding run config defaults")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    s = sub.add_parser("synth", help="write synthetic scenes and a manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=10)
    s.add_argument("--start", type=int, default=0)
    s.add_argument("--n-points", type=int, default=1024)
    s.add_argument("--instances", type=int, nargs=2, default=(2, 10), metavar=("MIN", "MAX"))
    s.add_argument("--extent", type=float, nargs=3, default=(1.0, 1.0, 1.0))
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("train", help="train a model on a scene directory")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--resume", default=None, help="continue from this checkpoint")
    s.add_argument("--log", default=None, help="also append JSON step lines to this file")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("infer", help="label one cloud")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--attach", action="store_true", help="assign unlabelled points to nearby instances")
    s.add_argument("--export-prototypes", default=None, help="JSONL path for prototype score export")
    s.add_argument("--prototype-ids", type=int, nargs="+", default=[0, 1, 2])
    s.add_argument("--export-coeff-histogram", default=None, help="JSON path for the coefficient histogram")
    s.set_defaults(fn=cmd_infer)

    s = sub.add_parser("eval", help="score a checkpoint or a directory of predictions")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--predictions")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--force", action="store_true", help="ignore config conflicts with the checkpoint")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("bench", help="single-threaded per-stage timing table")
    s.add_argument("--checkpoint", default=None)
    s.add_argument("--data", default=None)
    s.add_argument("--scenes", type=int, default=20)
    s.add_argument("--repetitions", type=int, default=5)
    s.add_argument("--warmup", type=int, default=2)
    s.add_argument("--out", default=None)
    s.set_defaults(fn=cmd_bench)

    s = sub.add_parser("ablate", help="train the three ablation arms and compare")
    s.add_argument("--train-scenes", type=int, default=200)
    s.add_argument("--test-scenes", type=int, default=50)
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(fn=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    print(f"seed {args.seed if args.seed is not None else DEFAULT_SEED}", file=sys.stderr)
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, checkpoint.CheckpointError, PlacementError, FileNotFoundError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
