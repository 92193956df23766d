import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from protoseg.assembly import MaskSet
from protoseg.loss import (GroundTruth, LossConfig, loss_gt_to_pr, loss_pr_to_gt, loss_pr_to_gt_nearest,
                           reciprocal_loss)
from protoseg.tensor import BCE_EPS

from oracles import bce_prob, eq2_oracle, eq3_oracle, eq4_oracle

LN2 = math.log(2)


def perfect(labels):
    gt = GroundTruth.from_labels(labels)
    return MaskSet.from_scores(gt.masks), gt


def test_ground_truth_from_labels():
    gt = GroundTruth.from_labels([2, 2, -1, 5])
    assert gt.ids.tolist() == [2, 5]
    assert gt.point_mask.tolist() == [0, 0, -1, 1]
    assert gt.masks.tolist() == [[1, 1, 0, 0], [0, 0, 0, 1]]


def test_nearest_examples():
    masks, gt = perfect([0, 0, 1])
    assert loss_pr_to_gt_nearest(MaskSet.from_scores(gt.masks[:1]), gt).item() == pytest.approx(0, abs=1e-6)
    half = MaskSet.from_scores(np.full((1, 3), 0.5))
    assert loss_pr_to_gt_nearest(half, gt).item() == pytest.approx(LN2)


def test_spatial_examples():
    gt = GroundTruth.from_labels([0, 0, 1, 1])
    good = MaskSet.from_scores(gt.masks[:1], [0])
    value, skipped = loss_pr_to_gt(good, gt)
    assert value.item() == pytest.approx(0, abs=1e-6) and skipped == 0
    wrong = MaskSet.from_scores(gt.masks[1:], [0])
    bound = -math.log(BCE_EPS)
    assert loss_pr_to_gt(wrong, gt)[0].item() == pytest.approx(bound, rel=1e-6)


def test_spatial_skips_unlabelled_samples():
    gt = GroundTruth.from_labels([0, -1, 1])
    ms = MaskSet.from_scores(np.full((2, 3), 0.5), [1, 0])
    value, skipped = loss_pr_to_gt(ms, gt)
    assert skipped == 1
    assert value.item() == pytest.approx(LN2)


def test_gt_to_pr_examples():
    masks, gt = perfect([0, 1, 1, 2])
    assert loss_gt_to_pr(masks, gt).item() == pytest.approx(0, abs=1e-5)
    gt1 = GroundTruth.from_labels([0, 0, 0])
    assert loss_gt_to_pr(MaskSet.from_scores(np.full((3, 3), 0.5)), gt1).item() == pytest.approx(LN2)


def test_lambda_zero_is_first_term():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 3, 20)
    ms = MaskSet.from_scores(rng.uniform(0.01, 0.99, (5, 20)), rng.integers(0, 20, 5))
    gt = GroundTruth.from_labels(labels)
    terms = reciprocal_loss(ms, gt, cfg=LossConfig(lam=0.0))
    assert terms.total.item() == pytest.approx(loss_pr_to_gt(ms, gt)[0].item(), rel=1e-12)
    with pytest.raises(ValueError):
        LossConfig(lam=-1)


def test_perfect_prediction_total_near_zero():
    masks, gt = perfect([0, 0, 1, 2, 2, 2])
    masks.sample_origin = np.array([0, 2, 3])
    assert reciprocal_loss(masks, gt).total.item() <= 1e-5


def random_scene(rng, k, n):
    labels = rng.integers(-1, 4, n)
    labels[rng.integers(0, n)] = 0  # at least one instance
    probs = rng.uniform(0.001, 0.999, (k, n))
    origin = rng.integers(0, n, k)
    return labels, probs, origin


@pytest.mark.parametrize("seed", range(100))
def test_terms_match_definitions(seed):
    rng = np.random.default_rng(seed)
    labels, probs, origin = random_scene(rng, int(rng.integers(1, 6)), int(rng.integers(2, 16)))
    ms = MaskSet.from_scores(probs, origin)
    gt = GroundTruth.from_labels(labels)
    e2 = loss_pr_to_gt_nearest(ms, gt).item()
    e3 = loss_pr_to_gt(ms, gt)[0].item()
    e4 = loss_gt_to_pr(ms, gt).item()
    assert e2 == pytest.approx(eq2_oracle(probs, labels), rel=1e-9, abs=1e-12)
    assert e3 == pytest.approx(eq3_oracle(probs, labels, origin), rel=1e-9, abs=1e-12)
    assert e4 == pytest.approx(eq4_oracle(probs, labels), rel=1e-9, abs=1e-12)
    lam = float(rng.uniform(0, 3))
    total = reciprocal_loss(ms, gt, cfg=LossConfig(lam=lam)).total.item()
    assert total == pytest.approx(eq3_oracle(probs, labels, origin) + lam * eq4_oracle(probs, labels), rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_loss_is_nonnegative_and_row_order_free(seed):
    rng = np.random.default_rng(seed)
    labels, probs, origin = random_scene(rng, 5, 12)
    gt = GroundTruth.from_labels(labels)
    a = reciprocal_loss(MaskSet.from_scores(probs, origin), gt).total.item()
    perm = rng.permutation(5)
    b = reciprocal_loss(MaskSet.from_scores(probs[perm], origin[perm]), gt).total.item()
    assert a >= 0
    assert a == pytest.approx(b, rel=1e-12)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gt_to_pr_non_increasing_with_more_rows(seed):
    rng = np.random.default_rng(seed)
    labels, probs, _ = random_scene(rng, 4, 10)
    gt = GroundTruth.from_labels(labels)
    before = loss_gt_to_pr(MaskSet.from_scores(probs), gt).item()
    extra = np.vstack([probs, rng.uniform(0.001, 0.999, (int(rng.integers(1, 4)), 10))])
    assert loss_gt_to_pr(MaskSet.from_scores(extra), gt).item() <= before + 1e-12


def test_clamped_probabilities_match_probability_bce():
    p = np.array([[0.0, 1.0, 0.4]])
    gt = GroundTruth.from_labels([1, 0, 0])
    val = loss_pr_to_gt_nearest(MaskSet.from_scores(p), gt).item()
    assert val == pytest.approx(min(bce_prob(p[0], m) for m in gt.masks), rel=1e-9)
