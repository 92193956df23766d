"""Acceptance gate: one test per criterion, at the stated tolerances.

The end-of-run summary (see conftest.py) prints one PASS/FAIL line each.
"""

import math
import time

import numpy as np
import pytest

from protoseg import checkpoint
from protoseg.ablation import run_ablation
from protoseg.assembly import MaskSet, assemble, binarize, nms, pairwise_iou
from protoseg.bench import bench
from protoseg.blocks import generate_room, infer_blocks, infer_room, room_config, train_room_model
from protoseg.config import DEFAULT_SEED, ModelConfig, RunConfig
from protoseg.data import FormatError, SynthConfig, decode_cloud, encode_cloud, generate_scene
from protoseg.evaluate import evaluate_dataset
from protoseg.geometry import fps
from protoseg.loss import GroundTruth, LossConfig, loss_gt_to_pr, loss_pr_to_gt, loss_pr_to_gt_nearest, \
    reciprocal_loss
from protoseg.metrics import Detections, coverage_metrics, iou, map50, match_greedy, prec_rec, same_partition
from protoseg.model import ProtoSeg, save_model
from protoseg.tensor import Tensor
from protoseg.train import Trainer

from oracles import (assemble_oracle, coverage_oracle, eq2_oracle, eq3_oracle, eq4_oracle, fps_oracle,
                     greedy_matching_oracle, nms_oracle, set_iou)
from test_networks import full_model_gradient_error
from test_tensor import OPS, WEIGHT_SHAPES, away_from_zero, check_grad


# -- 1 ------------------------------------------------------------------------

def test_criterion_1_autodiff_gradients():
    t0 = time.perf_counter()
    from protoseg import tensor as T
    for name, (fn, arity) in OPS.items():
        for seed in range(20):
            rng = np.random.default_rng(seed)
            inputs = [away_from_zero(rng, (4, 3)) for _ in range(arity)]
            w = rng.uniform(-2, 2, WEIGHT_SHAPES.get(name, (4, 3)))
            check_grad(lambda *ts: fn(*ts, Tensor(w)), inputs, 1e-4)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        t = (rng.uniform(size=(3, 4)) > 0.5).astype(float)
        check_grad(lambda z: T.bce(T.sigmoid(z), t), [rng.uniform(-2, 2, (3, 4))], 1e-4)
    assert full_model_gradient_error() <= 1e-3
    assert time.perf_counter() - t0 < 10


# -- 2 ------------------------------------------------------------------------

def test_criterion_2_fps_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    for i in range(200):
        n = int(rng.integers(1, 65))
        if i % 2:
            x = rng.integers(0, 3, size=(n, 3)).astype(float)  # many duplicates and ties
        else:
            x = rng.uniform(size=(n, 3))
        k = int(rng.integers(1, min(16, n) + 1))
        assert fps(x, k).indices.tolist() == fps_oracle(x, k)
    assert time.perf_counter() - t0 < 5


# -- 3 ------------------------------------------------------------------------

def test_criterion_3_nms_oracle_idempotence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    for i in range(500):
        k, n = int(rng.integers(1, 11)), int(rng.integers(1, 41))
        if i % 2:
            scores = rng.choice([0.125, 0.25, 0.375, 0.5, 0.75, 0.875], size=(k, n))
        else:
            scores = rng.uniform(size=(k, n))
        origin = rng.permutation(k)
        kept = nms(MaskSet.from_scores(scores, origin), 0.5, 0.3)
        assert kept == nms_oracle(scores, origin, 0.5, 0.3)
        again = nms(MaskSet.from_scores(scores[kept], origin[kept]), 0.5, 0.3)
        assert [kept[j] for j in again] == kept
        b = binarize(scores[kept], 0.3)
        ious = pairwise_iou(b, b)
        assert np.all(ious[~np.eye(len(kept), dtype=bool)] < 0.5)
    assert time.perf_counter() - t0 < 5


# -- 4 ------------------------------------------------------------------------

def test_criterion_4_assembly():
    rng = np.random.default_rng(4)
    for _ in range(100):
        k, n, m = int(rng.integers(1, 9)), int(rng.integers(1, 33)), int(rng.integers(1, 17))
        c, p = rng.uniform(-1, 1, (k, m)), rng.normal(size=(n, m))
        assert np.max(np.abs(assemble(Tensor(c), Tensor(p)).raw.data - assemble_oracle(c, p))) <= 1e-12
        c2 = rng.uniform(-1, 1, (k, m))
        a, b = rng.normal(size=2)
        lhs = assemble(Tensor(a * c + b * c2), Tensor(p)).raw.data
        rhs = a * assemble(Tensor(c), Tensor(p)).raw.data + b * assemble(Tensor(c2), Tensor(p)).raw.data
        assert np.allclose(lhs, rhs, rtol=0, atol=1e-12)


# -- 5 ------------------------------------------------------------------------

def test_criterion_5_loss():
    rng = np.random.default_rng(5)
    for _ in range(100):
        k, n = int(rng.integers(1, 9)), int(rng.integers(2, 33))
        labels = rng.integers(-1, 4, n)
        labels[rng.integers(0, n)] = int(rng.integers(0, 4))
        probs = rng.uniform(0.001, 0.999, (k, n))
        origin = rng.integers(0, n, k)
        ms, gt = MaskSet.from_scores(probs, origin), GroundTruth.from_labels(labels)
        e2, e3, e4 = eq2_oracle(probs, labels), eq3_oracle(probs, labels, origin), eq4_oracle(probs, labels)
        assert loss_pr_to_gt_nearest(ms, gt).item() == pytest.approx(e2, rel=1e-9, abs=1e-12)
        assert loss_pr_to_gt(ms, gt)[0].item() == pytest.approx(e3, rel=1e-9, abs=1e-12)
        assert loss_gt_to_pr(ms, gt).item() == pytest.approx(e4, rel=1e-9, abs=1e-12)
        lam = float(rng.uniform(0, 2))
        assert reciprocal_loss(ms, gt, cfg=LossConfig(lam=lam)).total.item() == pytest.approx(e3 + lam * e4,
                                                                                             rel=1e-9)
        # adding candidate rows can only lower the GT-to-prediction term
        more = MaskSet.from_scores(np.vstack([probs, rng.uniform(0.001, 0.999, (3, n))]))
        assert loss_gt_to_pr(more, gt).item() <= loss_gt_to_pr(ms, gt).item() + 1e-12
        # perfect predictions: each row is the GT mask of its sample, and every GT mask appears
        full = rng.integers(0, 4, n)
        pgt = GroundTruth.from_labels(full)
        pm_all = MaskSet.from_scores(np.vstack([pgt.masks[pgt.point_mask[origin]], pgt.masks]),
                                     np.concatenate([origin, [int(np.flatnonzero(full == i)[0]) for i in pgt.ids]]))
        assert reciprocal_loss(pm_all, pgt).total.item() <= 1e-5


# -- 6 ------------------------------------------------------------------------

def test_criterion_6_metrics():
    assert iou([1, 1, 0, 0], [1, 0, 0, 0]) == 0.5
    gt = np.array([[1, 1, 1, 0], [0, 0, 0, 1]], bool)
    assert coverage_metrics(gt[:1], gt) == (0.5, 0.75)
    assert prec_rec(np.array([gt[0], gt[0]]), gt[:1]) == (0.5, 1.0)
    g3 = np.zeros((3, 10), bool)
    g3[0, 0:3] = g3[1, 3:6] = g3[2, 6:9] = True
    miss = np.zeros(10, bool)
    miss[9] = True
    det = Detections(np.array([g3[0], miss, g3[1], g3[0], g3[2]]), np.array([0.9, 0.8, 0.7, 0.6, 0.5]),
                     np.zeros(5, int), g3, np.zeros(3, int))
    assert map50([det]) == pytest.approx((1 + 2 / 3 + 0.6) / 3, abs=1e-12)

    rng = np.random.default_rng(6)
    for _ in range(200):
        n = int(rng.integers(3, 13))
        g = rng.uniform(size=(int(rng.integers(1, 7)), n)) < 0.5
        g[:, 0] = True
        p = rng.uniform(size=(int(rng.integers(0, 7)), n)) < 0.5
        ps, gs = [set(np.flatnonzero(r)) for r in p], [set(np.flatnonzero(r)) for r in g]
        cov, wcov = coverage_metrics(p, g)
        ocov, owcov = coverage_oracle(ps, gs)
        assert cov == pytest.approx(ocov, abs=1e-12) and wcov == pytest.approx(owcov, abs=1e-12)
        pairs = greedy_matching_oracle(ps, gs)
        assert match_greedy(p, g) == pairs
        prec, rec = prec_rec(p, g)
        assert prec == pytest.approx(len(pairs) / len(ps) if ps else 0.0)
        assert rec == pytest.approx(len(pairs) / len(gs))
        for a in range(len(ps)):
            for b in range(len(gs)):
                assert iou(p[a], g[b]) == pytest.approx(set_iou(ps[a], gs[b]))
        # predictions identical to GT score 1.0 exactly
        labels = rng.integers(0, 4, n)
        gm = np.array([labels == i for i in np.unique(labels)])
        assert coverage_metrics(gm, gm) == (1.0, 1.0)
        assert prec_rec(gm, gm) == (1.0, 1.0)
        assert map50([Detections(gm, np.ones(len(gm)), np.zeros(len(gm), int), gm, np.zeros(len(gm), int))]) == 1.0


# -- 7 and 8 share the trained desk-scale model ----------------------------------

DESK_EPOCHS = 15


@pytest.fixture(scope="module")
def desk_model(tmp_path_factory):
    cfg = RunConfig(seed=DEFAULT_SEED, epochs=DESK_EPOCHS)
    sc = SynthConfig(seed=cfg.seed, n_points=1024, instances_range=(2, 6))
    train = [generate_scene(sc, i) for i in range(200)]
    test = [(f"held_out_{i}", generate_scene(sc, 10000 + i)) for i in range(50)]
    model = ProtoSeg(cfg.model, cfg.seed)
    t0 = time.perf_counter()
    history = Trainer(model, cfg).fit(train)
    seconds = time.perf_counter() - t0
    save_model(tmp_path_factory.mktemp("desk") / "desk.psg", model, cfg)
    return model, test, history, seconds


def test_criterion_7_desk_training(desk_model):
    model, test, history, seconds = desk_model
    assert all(math.isfinite(h["loss"]) for h in history)
    _, agg = evaluate_dataset(model, test)
    print(f"desk-scale held-out metrics {agg} after {seconds:.0f} s of training")
    assert agg["mPrec"] >= 0.80 and agg["mRec"] >= 0.80
    assert seconds < 30 * 60


def test_criterion_8_fixed_cost_timing(desk_model):
    model = desk_model[0]
    t0 = time.perf_counter()
    scenes = [generate_scene(SynthConfig(seed=DEFAULT_SEED + 8, instances_range=(2 + i % 9, 2 + i % 9)), i)
              for i in range(20)]
    assert sorted({len(np.unique(s.instance_labels)) for s in scenes}) == list(range(2, 11))
    table = bench(model, scenes, repetitions=5, warmup=3)
    print(f"total time {table['Total (ms)']}, per-scene CV {table['total_cv']:.4f}")
    assert table["pre_nms_ops_identical"]
    assert table["total_cv"] <= 0.10
    assert time.perf_counter() - t0 < 120


# -- 9 ------------------------------------------------------------------------

ROOM_TRAIN = 160
ROOM_EPOCHS = 10
ROOM_REPEATS = 3


def test_criterion_9_blockmerge_consistency():
    seed = DEFAULT_SEED
    model, _ = train_room_model(seed, ROOM_TRAIN, ROOM_EPOCHS, ROOM_REPEATS)
    agree = 0
    for i in range(10):
        room = generate_room(room_config(seed), 10000 + i)
        same = same_partition(infer_room(model, room).labels, infer_blocks(model, room).labels)
        agree += bool(same)
    print(f"block-merged and whole-room partitions agree on {agree}/10 rooms")
    assert agree >= 9


# -- 10 -----------------------------------------------------------------------

def test_criterion_10_ablation_harness():
    cfg = RunConfig(seed=DEFAULT_SEED)
    sc = SynthConfig(seed=cfg.seed, instances_range=(2, 6))
    train = [generate_scene(sc, i) for i in range(48)]
    test = [(f"t{i}", generate_scene(sc, 10000 + i)) for i in range(10)]
    rows = run_ablation(cfg, train, test, epochs=3)
    for r in rows:
        print(r)
    assert [r["arm"] for r in rows] == ["full", "single_dilation", "lambda_0"]
    assert all(r["losses_finite"] and math.isfinite(r["final_loss"]) for r in rows)


# -- 11 -----------------------------------------------------------------------

def _fuzz(encoded: bytes, decode, encode, error, rng, trials=1000):
    """Mutate ``encoded``; every result must be a format error or a complete, self-consistent decode."""
    rejected = 0
    for t in range(trials):
        if t % 2 == 0:
            buf = encoded[:int(rng.integers(0, len(encoded)))]
        else:
            arr = bytearray(encoded)
            bit = int(rng.integers(0, 8 * len(arr)))
            arr[bit // 8] ^= 1 << (bit % 8)
            buf = bytes(arr)
        try:
            obj = decode(buf)
        except error:
            rejected += 1
            continue
        assert t % 2 == 1, "a truncated file was accepted"
        assert encode(obj) == buf, "decoded object does not account for every byte"
    return rejected


def test_criterion_11_format_robustness():
    rng = np.random.default_rng(11)
    cloud = generate_scene(SynthConfig(seed=1, n_points=64, instances_range=(2, 2)), 0)
    n_cloud = _fuzz(encode_cloud(cloud), decode_cloud, encode_cloud, FormatError, rng)
    model = ProtoSeg(ModelConfig(n_prototypes=4, feature_dim=4, n_samples=4, point_widths=(4,), proto_hidden=4,
                                 dilations=(1,), k=2, kernel_hidden=2, branch_width=2, fusion_width=4), 0)
    tensors = {checkpoint.CONFIG_KEY: checkpoint.pack_json({"seed": 1}), **model.state_dict()}
    n_ckpt = _fuzz(checkpoint.encode(tensors), checkpoint.decode, checkpoint.encode, checkpoint.CheckpointError, rng)
    print(f"rejected {n_cloud}/1000 point-cloud and {n_ckpt}/1000 checkpoint mutations; "
          "the rest decode to complete files that re-encode to the mutated bytes")
    assert n_cloud >= 500 and n_ckpt >= 500  # every truncation is among the rejections
