import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vos3d.errors import InvalidArgumentError
from vos3d.metrics import (
    BoundaryMatchConfig,
    boundary_f_measure,
    evaluate_davis,
    evaluate_saliency,
    mean_absolute_error,
    region_jaccard,
    saliency_f_measure,
)

mask8 = arrays(np.uint8, (8, 8), elements=st.integers(0, 1))


def loop_counts(pred, gt):
    tp = fp = fn = 0
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            p, g = bool(pred[i, j]), bool(gt[i, j])
            tp += p and g
            fp += p and not g
            fn += g and not p
    return tp, fp, fn


def loop_jaccard(pred, gt):
    tp, fp, fn = loop_counts(pred, gt)
    return 1.0 if tp + fp + fn == 0 else tp / (tp + fp + fn)


def loop_f(pred, gt):
    tp, fp, fn = loop_counts(pred, gt)
    if tp + fp == 0 and tp + fn == 0:
        return 1.0
    if tp + fp == 0 or tp + fn == 0:
        return 0.0
    p, r = tp / (tp + fp), tp / (tp + fn)
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def loop_mae(pred, gt):
    total = 0.0
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            total += abs(float(pred[i, j]) - float(gt[i, j]))
    return total / pred.size


def square(H=32, W=32, top=8, left=8, size=12):
    m = np.zeros((H, W), np.uint8)
    m[top : top + size, left : left + size] = 1
    return m


class TestExamples:
    def test_jaccard(self):
        top, left = np.zeros((4, 4), np.uint8), np.zeros((4, 4), np.uint8)
        top[:2], left[:, :2] = 1, 1
        assert region_jaccard(top, left) == pytest.approx(1 / 3)
        assert region_jaccard(top, top) == 1.0
        assert region_jaccard(top, 1 - top) == 0.0
        assert region_jaccard(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0

    def test_saliency_f(self):
        gt = np.zeros((4, 4), np.uint8)
        gt[:2] = 1
        assert saliency_f_measure(np.ones((4, 4)), gt) == pytest.approx(2 / 3)
        assert saliency_f_measure(gt, gt) == 1.0
        assert saliency_f_measure(1 - gt, gt) == 0.0
        assert saliency_f_measure(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0
        assert saliency_f_measure(np.zeros((2, 2)), np.ones((2, 2))) == 0.0

    def test_weighted_saliency_f(self):
        gt = np.zeros((4, 4), np.uint8)
        gt[:2] = 1
        p, r = 0.5, 1.0
        assert saliency_f_measure(np.ones((4, 4)), gt, beta2=0.3) == pytest.approx(1.3 * p * r / (0.3 * p + r))

    def test_mae(self):
        gt = np.zeros((3, 3))
        assert mean_absolute_error(gt, gt) == 0.0
        assert mean_absolute_error(np.ones((3, 3)), gt) == 1.0
        assert mean_absolute_error(np.full((3, 3), 0.25), gt) == 0.25
        with pytest.raises(InvalidArgumentError):
            mean_absolute_error(np.full((3, 3), 1.5), gt)

    @pytest.mark.parametrize("fn", [region_jaccard, boundary_f_measure, saliency_f_measure, mean_absolute_error])
    def test_shape_mismatch(self, fn):
        with pytest.raises(InvalidArgumentError):
            fn(np.zeros((3, 3)), np.zeros((3, 4)))


class TestBoundary:
    def test_identical(self):
        m = square()
        assert boundary_f_measure(m, m) == 1.0

    @pytest.mark.parametrize("shift, radius", [((0, 1), 1), ((1, 0), 1), ((-1, 0), 1), ((0, -1), 3), ((1, 1), 2)])
    def test_one_pixel_shift(self, shift, radius):
        m = square()
        moved = np.roll(m, shift, axis=(0, 1))
        assert boundary_f_measure(moved, m, BoundaryMatchConfig(radius)) == 1.0

    def test_far_apart(self):
        a, b = square(64, 64, 2, 2, 6), square(64, 64, 40, 40, 6)
        assert boundary_f_measure(a, b, BoundaryMatchConfig(3)) == 0.0

    def test_empty_conventions(self):
        z = np.zeros((8, 8))
        assert boundary_f_measure(z, z) == 1.0
        assert boundary_f_measure(z, square(8, 8, 2, 2, 3)) == 0.0

    def test_tolerance_from_diagonal(self):
        assert BoundaryMatchConfig.for_shape((480, 854)).tolerance_radius == 8
        assert BoundaryMatchConfig.for_shape((8, 8)).tolerance_radius == 1
        with pytest.raises(InvalidArgumentError):
            BoundaryMatchConfig(0)

    @settings(max_examples=40)
    @given(m=mask8)
    def test_self_match(self, m):
        assert boundary_f_measure(m, m) == 1.0


class TestOracles:
    def test_random_pairs(self, rng):
        for _ in range(1000):
            a, b = (rng.random((2, 8, 8)) < rng.random()).astype(np.uint8)
            assert abs(region_jaccard(a, b) - loop_jaccard(a, b)) <= 1e-12
            assert abs(saliency_f_measure(a, b) - loop_f(a, b)) <= 1e-12
            assert abs(mean_absolute_error(a, b) - loop_mae(a, b)) <= 1e-12
            probs = rng.random((8, 8))
            assert abs(mean_absolute_error(probs, b) - loop_mae(probs, b)) <= 1e-12

    @settings(max_examples=100)
    @given(a=mask8, b=mask8)
    def test_range_and_symmetry(self, a, b):
        for fn in (region_jaccard, boundary_f_measure, saliency_f_measure, mean_absolute_error):
            assert 0.0 <= fn(a, b) <= 1.0
        assert region_jaccard(a, b) == region_jaccard(b, a)

    @settings(max_examples=100)
    @given(pred=mask8, gt=mask8)
    def test_removing_false_positive_never_lowers_precision(self, pred, gt):
        fp = np.argwhere((pred == 1) & (gt == 0))
        if len(fp) == 0:
            return
        fixed = pred.copy()
        fixed[tuple(fp[0])] = 0

        def precision(p):
            tp, f, _ = loop_counts(p, gt)
            return 0.0 if tp + f == 0 else tp / (tp + f)

        assert precision(fixed) >= precision(pred)
        assert saliency_f_measure(fixed, gt) >= saliency_f_measure(pred, gt)


class TestDavis:
    def test_perfect(self):
        gt = {"a": np.stack([square()] * 3)}
        r = evaluate_davis(gt, gt)
        assert r.J_mean == r.F_mean == r.JF == 1.0

    def test_sequence_level_averaging(self):
        gt = np.zeros((1, 1, 10), np.uint8)
        gt[..., :5] = 1
        pred_a, pred_b = np.zeros_like(gt), np.zeros_like(gt)
        pred_a[..., :2] = 1  # J = 2/5
        pred_b[..., :4] = 1  # J = 4/5
        seqs = {"a": np.concatenate([gt] * 3), "b": gt}
        r = evaluate_davis({"a": np.concatenate([pred_a] * 3), "b": pred_b}, seqs)
        assert r.per_sequence["a"].J == pytest.approx(0.4)
        assert r.J_mean == pytest.approx(0.6)
        assert r.JF == (r.J_mean + r.F_mean) / 2

    def test_exclude_first_last(self):
        gt = np.stack([square()] * 4)
        pred = gt.copy()
        pred[0] = 0
        pred[-1] = 0
        assert evaluate_davis({"s": pred}, {"s": gt}, exclude_first_last=True).J_mean == 1.0
        assert evaluate_davis({"s": pred}, {"s": gt}).J_mean == 0.5

    def test_missing_sequence_named(self):
        with pytest.raises(InvalidArgumentError, match="b"):
            evaluate_davis({"a": np.zeros((1, 2, 2))}, {"a": np.zeros((1, 2, 2)), "b": np.zeros((1, 2, 2))})

    def test_workers_same_result(self, rng):
        gt = {f"s{i}": (rng.random((3, 16, 16)) < 0.5).astype(np.uint8) for i in range(4)}
        pred = {k: (rng.random((3, 16, 16)) < 0.5).astype(np.uint8) for k in gt}
        assert evaluate_davis(pred, gt).to_json() == evaluate_davis(pred, gt, workers=3).to_json()

    def test_report_serialization(self):
        gt = {"a": np.stack([square()] * 2)}
        r = evaluate_davis(gt, gt)
        assert json.loads(r.to_json())["JF"] == 1.0
        assert "J&F = 1.0000" in r.to_table()


class TestSaliency:
    def test_dense_matches_davis_frames(self, rng):
        gt = {"s": (rng.random((5, 8, 8)) < 0.5).astype(np.uint8)}
        pred = {"s": rng.random((5, 8, 8))}
        assert evaluate_saliency(pred, gt).per_sequence["s"].frames == evaluate_davis(
            {"s": (pred["s"] > 0.5).astype(np.uint8)}, gt).per_sequence["s"].frames == 5

    def test_sparse_frames(self, rng):
        pred = rng.random((40, 8, 8))
        gt = {0: square(8, 8, 1, 1, 4), 20: square(8, 8, 2, 2, 4)}
        r = evaluate_saliency({"s": pred}, {"s": gt})
        assert r.per_sequence["s"].frames == 2
        want = np.mean([saliency_f_measure(pred[f] > 0.5, gt[f]) for f in (0, 20)])
        assert r.F_measure == pytest.approx(want, abs=1e-15)

    def test_perfect(self):
        gt = {"s": np.stack([square()] * 3)}
        r = evaluate_saliency(gt, gt)
        assert r.F_measure == 1.0 and r.MAE == 0.0

    def test_probability_mae_flag(self):
        pred = {"s": np.full((1, 4, 4), 0.25)}
        gt = {"s": np.zeros((1, 4, 4), np.uint8)}
        assert evaluate_saliency(pred, gt).MAE == 0.0
        assert evaluate_saliency(pred, gt, mae_on_probabilities=True).MAE == 0.25

    def test_no_annotations(self):
        with pytest.raises(InvalidArgumentError):
            evaluate_saliency({"s": np.zeros((3, 2, 2))}, {"s": {}})
