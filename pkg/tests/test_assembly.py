import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from protoseg.assembly import MaskSet, assemble, attach_orphans, binarize, label_points, nms, pairwise_iou
from protoseg.tensor import Tensor

from oracles import assemble_oracle, brute_nearest_member, nms_oracle


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def test_single_prototype_example():
    m = assemble(Tensor([[1.0]]), Tensor([[2.0], [-2.0]]))
    assert m.raw.data.tolist() == [[2.0, -2.0]]
    assert np.allclose(m.scores, [[sig(2), sig(-2)]], atol=1e-15)


def test_zero_coefficients_give_half():
    m = assemble(Tensor(np.zeros((1, 3))), Tensor(np.random.default_rng(0).normal(size=(5, 3))))
    assert np.all(m.scores == 0.5)


def test_assemble_matches_triple_loop():
    rng = np.random.default_rng(0)
    c, p = rng.uniform(-1, 1, (4, 6)), rng.normal(size=(10, 6))
    assert np.max(np.abs(assemble(Tensor(c), Tensor(p)).raw.data - assemble_oracle(c, p))) <= 1e-12


def test_assemble_linearity():
    rng = np.random.default_rng(1)
    c1, c2, p = rng.normal(size=(3, 5)), rng.normal(size=(3, 5)), rng.normal(size=(7, 5))
    a, b = 0.7, -1.3
    lhs = assemble(Tensor(a * c1 + b * c2), Tensor(p)).raw.data
    rhs = a * assemble(Tensor(c1), Tensor(p)).raw.data + b * assemble(Tensor(c2), Tensor(p)).raw.data
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_binarize_boundary():
    assert binarize(np.array([0.29, 0.30, 0.31]), 0.3).tolist() == [False, False, True]
    assert binarize(np.full(4, 0.5), 0.3).all()


def test_threshold_is_logit_cut():
    logit = math.log(0.3 / 0.7)
    assert logit == pytest.approx(-0.847, abs=1e-3)
    raw = np.linspace(-3, 3, 2001)
    raw = raw[np.abs(raw - logit) > 1e-9]
    scores = assemble(Tensor(raw[None, :]), Tensor(np.eye(raw.size))).scores
    assert np.array_equal(binarize(scores[0], 0.3), raw > logit)


def test_nms_identical_and_disjoint():
    same = MaskSet.from_scores(np.array([[0.9, 0.9, 0.1], [0.9, 0.9, 0.1]]))
    assert nms(same) == [0]
    disjoint = MaskSet.from_scores(np.array([[0.9, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.7]]))
    assert sorted(nms(disjoint)) == [0, 1, 2]


def test_nms_fixed_case_matches_oracle():
    rng = np.random.default_rng(7)
    scores = rng.uniform(size=(8, 30))
    assert nms(MaskSet.from_scores(scores)) == nms_oracle(scores, list(range(8)), 0.5, 0.3)


def test_nms_skips_empty_masks():
    ms = MaskSet.from_scores(np.array([[0.1, 0.2], [0.9, 0.1]]))
    assert nms(ms) == [1]


def _random_scores(rng, k, n):
    # few dyadic levels: ties and exact-threshold cases show up, and in-mask means are exact
    return rng.choice([0.125, 0.25, 0.375, 0.5, 0.75, 0.875], size=(k, n))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 10), st.integers(1, 40), st.integers(0, 2**31 - 1))
def test_nms_oracle_and_idempotence(k, n, seed):
    rng = np.random.default_rng(seed)
    scores = _random_scores(rng, k, n)
    origin = rng.permutation(k)
    masks = MaskSet.from_scores(scores, origin)
    kept = nms(masks, 0.5, 0.375)
    assert kept == nms_oracle(scores, origin, 0.5, 0.375)
    again = nms(MaskSet.from_scores(scores[kept], origin[kept]), 0.5, 0.375)
    assert [kept[i] for i in again] == kept
    b = binarize(scores[kept], 0.375)
    iou = pairwise_iou(b, b)
    assert np.all(iou[~np.eye(len(kept), dtype=bool)] < 0.5)


def test_label_points_prefers_highest_score():
    ms = MaskSet.from_scores(np.array([[0.9, 0.6, 0.1, 0.1], [0.1, 0.8, 0.7, 0.1]]))
    ms.retained = [0, 1]
    assert label_points(ms).tolist() == [0, 1, 1, -1]


def test_attach_tie_goes_to_lower_id():
    xyz = np.array([[0.0, 0, 0], [2.0, 0, 0], [1.0, 0, 0]])
    out = attach_orphans(np.array([1, 0, -1]), xyz, np.zeros(3, int))
    assert out.tolist() == [1, 0, 0]


def test_attach_prefers_class_over_distance():
    xyz = np.array([[0.0, 0, 0], [5.0, 0, 0], [0.1, 0, 0]])
    out = attach_orphans(np.array([0, 1, -1]), xyz, np.array([0, 1, 1]))
    assert out[2] == 1


def test_attach_without_instances():
    assert attach_orphans(np.full(3, -1), np.zeros((3, 3)), np.zeros(3, int)).tolist() == [0, 0, 0]


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2**31 - 1))
def test_attach_matches_brute_force(n, seed):
    rng = np.random.default_rng(seed)
    xyz = rng.integers(0, 4, size=(n, 3)).astype(float)
    labels = rng.integers(-1, 3, size=n)
    semantic = rng.integers(0, 3, size=n)
    assert attach_orphans(labels, xyz, semantic).tolist() == brute_nearest_member(labels, xyz, semantic).tolist()
