"""Every metric against brute-force oracles plus its analytic endpoint cases."""

import math

import numpy as np
import pytest

from spxmix.imgcore import IGNORE_LABEL
from spxmix.metrics import (
    ScoredSamples,
    UndefinedMetricError,
    aupr,
    confusion,
    ece,
    fpr_at_95_tpr,
    format_report,
    mcp_confidence,
    miou,
    nll,
    roc_auc,
)

from oracles import (
    auc_pair_oracle,
    aupr_sweep_oracle,
    ece_bin_oracle,
    fpr95_sweep_oracle,
    miou_set_oracle,
)


def random_probmap(rng, h=4, w=5, k=3):
    return rng.dirichlet(np.ones(k), size=(h, w)).astype(np.float32)


def random_scores(rng, n=80, with_ties=True):
    scores = rng.random(n)
    if with_ties:
        # quantize half of the values so ties actually occur
        sel = rng.random(n) < 0.5
        scores[sel] = np.round(scores[sel], 1)
    is_ood = rng.random(n) < 0.4
    if not is_ood.any():
        is_ood[0] = True
    if is_ood.all():
        is_ood[0] = False
    return ScoredSamples(scores, is_ood)


class TestConfusion:
    def test_perfect_prediction_is_diagonal(self):
        rng = np.random.default_rng(0)
        gt = rng.integers(0, 3, size=(6, 6)).astype(np.uint8)
        cm = confusion(gt, gt, 3)
        assert cm.sum() == 36
        assert np.all(cm == np.diag(np.diag(cm)))

    def test_all_ignore_is_zero(self):
        gt = np.full((4, 4), IGNORE_LABEL, np.uint8)
        pred = np.zeros((4, 4), np.uint8)
        assert confusion(pred, gt, 3).sum() == 0

    def test_hand_tally(self):
        gt = np.array([[0, 0], [1, IGNORE_LABEL]], dtype=np.uint8)
        pred = np.array([[0, 1], [1, 0]], dtype=np.uint8)
        cm = confusion(pred, gt, 2)
        assert cm.tolist() == [[1, 1], [0, 1]]

    def test_merge_is_associative(self):
        rng = np.random.default_rng(1)
        gt1 = rng.integers(0, 4, size=(5, 5)).astype(np.uint8)
        gt2 = rng.integers(0, 4, size=(5, 5)).astype(np.uint8)
        pred1 = rng.integers(0, 4, size=(5, 5)).astype(np.uint8)
        pred2 = rng.integers(0, 4, size=(5, 5)).astype(np.uint8)
        merged = confusion(pred1, gt1, 4) + confusion(pred2, gt2, 4)
        stacked = confusion(np.vstack([pred1, pred2]), np.vstack([gt1, gt2]), 4)
        assert np.array_equal(merged, stacked)


class TestMiou:
    def test_perfect_is_one(self):
        rng = np.random.default_rng(2)
        gt = rng.integers(0, 3, size=(8, 8)).astype(np.uint8)
        assert miou(confusion(gt, gt, 3)) == 1.0

    def test_half_half_collapse(self):
        # two classes, ground truth split half/half, prediction all class 0:
        # IoU_0 = 0.5, IoU_1 = 0 -> mIoU = 0.25
        gt = np.array([[0] * 4 + [1] * 4], dtype=np.uint8)
        pred = np.zeros((1, 8), np.uint8)
        assert miou(confusion(pred, gt, 2)) == pytest.approx(0.25)

    def test_absent_class_excluded(self):
        gt = np.array([[0, 1]], dtype=np.uint8)
        assert miou(confusion(gt, gt, 3)) == 1.0

    def test_all_absent_is_undefined(self):
        with pytest.raises(UndefinedMetricError):
            miou(np.zeros((3, 3), dtype=np.int64))

    def test_random_instances_match_set_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            k = int(rng.integers(2, 6))
            gt = rng.integers(0, k, size=(6, 7)).astype(np.uint8)
            gt[rng.random(gt.shape) < 0.1] = IGNORE_LABEL
            pred = rng.integers(0, k, size=(6, 7)).astype(np.uint8)
            if np.all(gt == IGNORE_LABEL):
                continue
            assert miou(confusion(pred, gt, k)) == pytest.approx(
                miou_set_oracle(pred, gt, k), abs=1e-9)


class TestNll:
    def test_one_hot_correct_is_zero(self):
        probs = np.zeros((2, 2, 3), np.float32)
        probs[..., 1] = 1.0
        gt = np.ones((2, 2), np.uint8)
        assert nll(probs, gt) == pytest.approx(0.0, abs=1e-9)

    def test_uniform_k4(self):
        probs = np.full((3, 3, 4), 0.25, np.float32)
        gt = np.zeros((3, 3), np.uint8)
        assert nll(probs, gt) == pytest.approx(math.log(4), abs=1e-6)

    def test_hand_sum(self):
        probs = np.array([[[0.5, 0.5], [0.9, 0.1]]], dtype=np.float32)
        gt = np.array([[0, 1]], dtype=np.uint8)
        expected = -(math.log(0.5) + math.log(0.1)) / 2
        assert nll(probs, gt) == pytest.approx(expected, abs=1e-6)

    def test_zero_probability_clamped_and_counted(self):
        probs = np.zeros((1, 1, 2), np.float32)
        probs[..., 0] = 1.0
        gt = np.ones((1, 1), np.uint8)
        diag = {}
        value = nll(probs, gt, diagnostics=diag)
        assert value == pytest.approx(-math.log(1e-12))
        assert diag["clamped_pixels"] == 1

    def test_ignore_pixels_skipped(self):
        probs = np.array([[[1.0, 0.0], [0.5, 0.5]]], dtype=np.float32)
        gt = np.array([[0, IGNORE_LABEL]], dtype=np.uint8)
        assert nll(probs, gt) == pytest.approx(0.0, abs=1e-9)

    def test_nonnegative(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            probs = random_probmap(rng)
            gt = rng.integers(0, 3, size=(4, 5)).astype(np.uint8)
            assert nll(probs, gt) >= 0.0


class TestEce:
    def test_confident_and_correct_is_zero(self):
        probs = np.zeros((2, 2, 2), np.float32)
        probs[..., 0] = 1.0
        gt = np.zeros((2, 2), np.uint8)
        assert ece(probs, gt) == pytest.approx(0.0, abs=1e-9)

    def test_two_pixel_single_bin(self):
        # conf 0.8 correct + conf 0.6 wrong in one bin: |0.5 - 0.7| = 0.2
        probs = np.array([[[0.8, 0.2], [0.6, 0.4]]], dtype=np.float32)
        gt = np.array([[0, 1]], dtype=np.uint8)
        assert ece(probs, gt, bins=1) == pytest.approx(0.2, abs=1e-6)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(5)
        probs = random_probmap(rng, 6, 6, 4)
        gt = rng.integers(0, 4, size=(6, 6)).astype(np.uint8)
        perm = rng.permutation(36)
        probs_p = probs.reshape(36, 4)[perm].reshape(6, 6, 4)
        gt_p = gt.reshape(36)[perm].reshape(6, 6)
        assert ece(probs, gt) == pytest.approx(ece(probs_p, gt_p), abs=1e-12)

    def test_random_instances_match_bin_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            k = int(rng.integers(2, 5))
            probs = random_probmap(rng, 5, 5, k)
            gt = rng.integers(0, k, size=(5, 5)).astype(np.uint8)
            conf = probs.max(axis=-1).reshape(-1).astype(np.float64)
            correct = (probs.argmax(axis=-1) == gt).reshape(-1).astype(np.float64)
            assert ece(probs, gt) == pytest.approx(
                ece_bin_oracle(conf, correct, 15), abs=1e-9)

    def test_no_scored_pixels_undefined(self):
        probs = np.full((1, 1, 2), 0.5, np.float32)
        gt = np.full((1, 1), IGNORE_LABEL, np.uint8)
        with pytest.raises(UndefinedMetricError):
            ece(probs, gt)


class TestMcpConfidence:
    def test_one_hot_pixel(self):
        probs = np.zeros((1, 1, 4), np.float32)
        probs[0, 0, 2] = 1.0
        assert mcp_confidence(probs)[0, 0] == 1.0

    def test_uniform_pixel(self):
        probs = np.full((1, 1, 4), 0.25, np.float32)
        assert mcp_confidence(probs)[0, 0] == pytest.approx(0.25)

    def test_matches_elementwise_max(self):
        rng = np.random.default_rng(7)
        probs = random_probmap(rng, 5, 6, 5)
        expected = np.zeros((5, 6), np.float32)
        for r in range(5):
            for c in range(6):
                expected[r, c] = max(probs[r, c])
        assert np.allclose(mcp_confidence(probs), expected)


class TestRocAuc:
    def test_perfect_separation(self):
        s = ScoredSamples(np.array([0.1, 0.2, 0.8, 0.9]),
                          np.array([False, False, True, True]))
        assert roc_auc(s) == 1.0

    def test_perfect_inversion(self):
        s = ScoredSamples(np.array([0.9, 0.8, 0.2, 0.1]),
                          np.array([False, False, True, True]))
        assert roc_auc(s) == 0.0

    def test_matches_pair_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            s = random_scores(rng, n=int(rng.integers(5, 120)))
            assert roc_auc(s) == pytest.approx(
                auc_pair_oracle(s.scores, s.is_ood), abs=1e-12)

    def test_negation_antisymmetry_without_ties(self):
        rng = np.random.default_rng(9)
        scores = rng.permutation(200) / 200.0  # all distinct
        is_ood = rng.random(200) < 0.5
        is_ood[0], is_ood[1] = True, False
        fwd = roc_auc(ScoredSamples(scores, is_ood))
        rev = roc_auc(ScoredSamples(-scores, is_ood))
        assert fwd + rev == pytest.approx(1.0, abs=1e-12)

    def test_single_class_undefined(self):
        with pytest.raises(UndefinedMetricError):
            roc_auc(ScoredSamples(np.array([0.5, 0.6]), np.array([True, True])))


class TestAupr:
    def test_perfect_separation(self):
        s = ScoredSamples(np.array([0.1, 0.2, 0.8, 0.9]),
                          np.array([False, False, True, True]))
        assert aupr(s) == 1.0

    def test_constant_scores_give_prevalence(self):
        s = ScoredSamples(np.full(10, 0.3), np.array([True] * 3 + [False] * 7))
        assert aupr(s) == pytest.approx(0.3, abs=1e-12)

    def test_matches_sweep_oracle(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            s = random_scores(rng, n=int(rng.integers(5, 120)))
            assert aupr(s) == pytest.approx(
                aupr_sweep_oracle(s.scores, s.is_ood), abs=1e-12)

    def test_no_positives_undefined(self):
        with pytest.raises(UndefinedMetricError):
            aupr(ScoredSamples(np.array([0.5, 0.6]), np.array([False, False])))


class TestFpr95:
    def test_perfect_separation(self):
        scores = np.r_[np.linspace(0, 0.4, 50), np.linspace(0.6, 1.0, 50)]
        is_ood = np.r_[np.zeros(50, bool), np.ones(50, bool)]
        assert fpr_at_95_tpr(ScoredSamples(scores, is_ood)) == 0.0

    def test_identical_scores_admit_everything(self):
        s = ScoredSamples(np.full(20, 0.5), np.array([True] * 5 + [False] * 15))
        assert fpr_at_95_tpr(s) == 1.0

    def test_matches_sweep_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            s = random_scores(rng, n=int(rng.integers(5, 120)))
            assert fpr_at_95_tpr(s) == pytest.approx(
                fpr95_sweep_oracle(s.scores, s.is_ood), abs=1e-12)

    def test_single_class_undefined(self):
        with pytest.raises(UndefinedMetricError):
            fpr_at_95_tpr(ScoredSamples(np.array([0.1]), np.array([True])))


class TestRanges:
    def test_unit_interval_metrics(self):
        rng = np.random.default_rng(12)
        for _ in range(30):
            s = random_scores(rng)
            assert 0.0 <= roc_auc(s) <= 1.0
            assert 0.0 <= aupr(s) <= 1.0
            assert 0.0 <= fpr_at_95_tpr(s) <= 1.0


class TestReport:
    def test_six_decimal_json(self):
        out = format_report({"miou": 1 / 3, "auc": 0.87654321})
        assert out == '{"miou": 0.333333, "auc": 0.876543}'
