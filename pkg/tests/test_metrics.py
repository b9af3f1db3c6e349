"""Metric and loss tests, each checked against an independent scalar-loop oracle."""

import math
import warnings

import numpy as np
import pytest

from refmatte.core import FlowField, Matte
from refmatte.metrics import (
    EvalReport,
    LossWeights,
    aggregate_reports,
    background_baseline,
    coarse_loss,
    loss_attenuation,
    loss_flow_epe,
    loss_mask_ce,
    loss_reconstruction,
    mask_iou,
    multiscale_loss,
    psnr,
    refine_loss,
    scale_weights,
    ssim,
)

# ---------------------------------------------------------------------------
# scalar-loop oracles (kept deliberately naive and independent of the library)
# ---------------------------------------------------------------------------


def oracle_mse(a, b):
    total = 0.0
    n = 0
    for x, y in zip(np.ravel(a), np.ravel(b)):
        total += (float(x) - float(y)) ** 2
        n += 1
    return total / n


def oracle_epe(pred, gt, mask=None):
    h, w = pred.shape[:2]
    total, n = 0.0, 0
    for i in range(h):
        for j in range(w):
            if mask is not None and not mask[i, j]:
                continue
            dx = float(pred[i, j, 0]) - float(gt[i, j, 0])
            dy = float(pred[i, j, 1]) - float(gt[i, j, 1])
            total += math.sqrt(dx * dx + dy * dy)
            n += 1
    return total / n if n else 0.0


def oracle_ce(p, g, eps=1e-7):
    total, n = 0.0, 0
    for x, y in zip(np.ravel(p), np.ravel(g)):
        x = min(max(float(x), eps), 1.0 - eps)
        total += float(y) * math.log(x) + (1.0 - float(y)) * math.log(1.0 - x)
        n += 1
    return -total / n


def oracle_reconstruction(a, b):
    h, w = a.shape[:2]
    c = 1 if a.ndim == 2 else a.shape[2]
    a3 = a.reshape(h, w, c)
    b3 = b.reshape(h, w, c)
    total = 0.0
    for i in range(h):
        for j in range(w):
            for k in range(c):
                total += (float(a3[i, j, k]) - float(b3[i, j, k])) ** 2
    return total / (h * w)


def oracle_iou(p, g):
    inter, union = 0, 0
    for x, y in zip(np.ravel(p), np.ravel(g)):
        if x or y:
            union += 1
        if x and y:
            inter += 1
    return inter / union if union else 1.0


def _gauss_kernel11():
    k = np.array([math.exp(-((i - 5) ** 2) / (2 * 1.5 ** 2)) for i in range(11)])
    return k / k.sum()


def oracle_ssim(a, b):
    a = np.atleast_3d(np.asarray(a, dtype=np.float64))
    b = np.atleast_3d(np.asarray(b, dtype=np.float64))
    k1d = _gauss_kernel11()
    kern = np.outer(k1d, k1d)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    h, w, c = a.shape
    vals = []
    for ch in range(c):
        for i in range(h - 10):
            for j in range(w - 10):
                wa = a[i : i + 11, j : j + 11, ch]
                wb = b[i : i + 11, j : j + 11, ch]
                mx = float((kern * wa).sum())
                my = float((kern * wb).sum())
                vx = float((kern * wa * wa).sum()) - mx * mx
                vy = float((kern * wb * wb).sum()) - my * my
                cov = float((kern * wa * wb).sum()) - mx * my
                vals.append(
                    ((2 * mx * my + c1) * (2 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2))
                )
    return float(np.mean(vals))


# ---------------------------------------------------------------------------


class TestMaskCE:
    def test_half_probability_is_ln2(self):
        p = np.full((4, 4), 0.5)
        g = np.random.default_rng(0).integers(0, 2, (4, 4)).astype(float)
        assert loss_mask_ce(p, g) == pytest.approx(math.log(2), abs=1e-9)

    def test_perfect_prediction_near_zero(self):
        g = np.random.default_rng(1).integers(0, 2, (6, 6)).astype(float)
        assert loss_mask_ce(g, g) == pytest.approx(0.0, abs=1e-6)

    def test_confident_correct(self):
        p = np.full((3, 3), 0.9)
        g = np.ones((3, 3))
        assert loss_mask_ce(p, g) == pytest.approx(-math.log(0.9), abs=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(2)
        p = rng.random((16, 16))
        g = rng.integers(0, 2, (16, 16)).astype(float)
        got = loss_mask_ce(p, g)
        want = oracle_ce(p, g)
        assert abs(got - want) <= 1e-10 * max(1.0, abs(want))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            loss_mask_ce(np.zeros((2, 2)), np.zeros((3, 3)))


class TestAttenuationLoss:
    def test_identical_zero(self):
        a = np.random.default_rng(3).random((5, 5))
        assert loss_attenuation(a, a) == 0.0

    def test_constant_gap(self):
        a = np.full((4, 4), 0.6)
        b = np.full((4, 4), 0.5)
        assert loss_attenuation(a, b) == pytest.approx(0.01, abs=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(4)
        a, b = rng.random((16, 16)), rng.random((16, 16))
        got, want = loss_attenuation(a, b), oracle_mse(a, b)
        assert abs(got - want) <= 1e-10 * max(1.0, abs(want))


class TestFlowEPE:
    def test_identical_zero(self):
        f = np.random.default_rng(5).uniform(-2, 2, (4, 4, 2))
        assert loss_flow_epe(f, f) == 0.0

    def test_uniform_3_4_error_is_5(self):
        g = np.zeros((8, 8, 2))
        p = np.zeros((8, 8, 2))
        p[..., 0], p[..., 1] = 3.0, 4.0
        assert loss_flow_epe(p, g) == pytest.approx(5.0, abs=1e-9)

    def test_masked_half(self):
        g = np.zeros((2, 4, 2))
        p = np.zeros((2, 4, 2))
        p[0, :, 1] = 2.0  # top row error (0, 2)
        mask = np.zeros((2, 4), dtype=bool)
        mask[0] = True
        assert loss_flow_epe(p, g, mask=mask) == pytest.approx(2.0, abs=1e-12)
        assert loss_flow_epe(p, g) == pytest.approx(1.0, abs=1e-12)

    def test_empty_mask_warns_and_returns_zero(self):
        f = np.ones((3, 3, 2))
        with pytest.warns(UserWarning):
            assert loss_flow_epe(f, f * 2, mask=np.zeros((3, 3), bool)) == 0.0

    def test_accepts_flowfields(self):
        a = FlowField(np.ones((4, 4, 2), np.float32))
        b = FlowField.zeros(4, 4)
        assert loss_flow_epe(a, b) == pytest.approx(math.sqrt(2), abs=1e-7)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(6)
        p = rng.uniform(-4, 4, (16, 16, 2))
        g = rng.uniform(-4, 4, (16, 16, 2))
        m = rng.random((16, 16)) > 0.4
        got, want = loss_flow_epe(p, g, mask=m), oracle_epe(p, g, m)
        assert abs(got - want) <= 1e-10 * max(1.0, abs(want))


class TestReconstructionLoss:
    def test_identical_zero(self):
        a = np.random.default_rng(7).random((5, 5, 3))
        assert loss_reconstruction(a, a) == 0.0

    def test_constant_gap_three_channels(self):
        a = np.full((4, 4, 3), 0.5)
        b = np.full((4, 4, 3), 0.4)
        assert loss_reconstruction(a, b) == pytest.approx(0.03, abs=1e-12)

    def test_linearity_under_blending(self):
        # squared-difference loss against t-blended reference is quadratic in t
        rng = np.random.default_rng(8)
        a, b = rng.random((6, 6, 3)), rng.random((6, 6, 3))
        full = loss_reconstruction(a, b)
        half = loss_reconstruction(a, 0.5 * a + 0.5 * b)
        assert half == pytest.approx(0.25 * full, rel=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(9)
        a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
        got, want = loss_reconstruction(a, b), oracle_reconstruction(a, b)
        assert abs(got - want) <= 1e-10 * max(1.0, abs(want))


class TestCombinedLosses:
    def test_coarse_unit_terms(self):
        assert coarse_loss(1.0, 1.0, 1.0, 1.0) == pytest.approx(2.11, abs=1e-12)

    def test_coarse_zero(self):
        assert coarse_loss(0.0, 0.0, 0.0, 0.0) == 0.0

    def test_coarse_flow_only(self):
        assert coarse_loss(0.0, 0.0, 10.0, 0.0) == pytest.approx(0.1, abs=1e-12)

    def test_coarse_rejects_negative(self):
        with pytest.raises(ValueError):
            coarse_loss(1.0, -0.1, 0.0, 0.0)

    def test_coarse_linear_in_terms(self):
        rng = np.random.default_rng(10)
        t1 = rng.random(4)
        t2 = rng.random(4)
        s = coarse_loss(*(t1 + t2))
        assert s == pytest.approx(coarse_loss(*t1) + coarse_loss(*t2), rel=1e-12)

    def test_multiscale_unit_terms(self):
        assert multiscale_loss([1.0, 1.0, 1.0, 1.0]) == 1.875

    def test_multiscale_single_scales(self):
        assert multiscale_loss([0.0, 0.0, 0.0, 3.0]) == 3.0
        assert multiscale_loss([8.0, 0.0, 0.0, 0.0]) == 1.0

    def test_scale_weights(self):
        assert np.array_equal(scale_weights(), [0.125, 0.25, 0.5, 1.0])

    def test_refine(self):
        assert refine_loss(1.0, 1.0) == 2.0
        assert refine_loss(0.0, 0.0) == 0.0
        assert refine_loss(0.3, 0.7) == pytest.approx(1.0, abs=1e-12)

    def test_weights_must_be_positive(self):
        with pytest.raises(ValueError):
            LossWeights(coarse_flow=0.0)


class TestMaskIoU:
    def test_identical_nonempty(self):
        m = np.random.default_rng(11).random((6, 6)) > 0.5
        assert mask_iou(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4), bool)
        b = np.zeros((4, 4), bool)
        a[0], b[1] = True, True
        assert mask_iou(a, b) == 0.0

    def test_half_containment(self):
        g = np.zeros((4, 4), bool)
        g[:2] = True
        p = np.zeros((4, 4), bool)
        p[0] = True
        assert mask_iou(p, g) == 0.5

    def test_both_empty_is_one(self):
        assert mask_iou(np.zeros((3, 3), bool), np.zeros((3, 3), bool)) == 1.0

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(12)
        a = rng.random((16, 16)) > 0.6
        b = rng.random((16, 16)) > 0.6
        assert mask_iou(a, b) == pytest.approx(oracle_iou(a, b), abs=1e-12)


class TestPSNR:
    def test_mse_001_is_20db(self):
        a = np.zeros((10, 10))
        b = np.full((10, 10), 0.1)
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)

    def test_identical_capped(self):
        a = np.random.default_rng(13).random((5, 5))
        assert psnr(a, a) == 99.0

    def test_mse_1e4_is_40db(self):
        a = np.zeros((8, 8))
        b = np.full((8, 8), 0.01)
        assert psnr(a, b) == pytest.approx(40.0, abs=1e-9)

    def test_strictly_decreasing_in_mse(self):
        a = np.zeros((6, 6))
        values = [psnr(a, np.full((6, 6), d)) for d in (0.01, 0.02, 0.05, 0.1, 0.4)]
        assert all(x > y for x, y in zip(values, values[1:]))


class TestSSIM:
    def test_self_similarity_is_one(self):
        rng = np.random.default_rng(14)
        for _ in range(5):
            a = rng.random((12, 14))
            assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_constant_images_closed_form(self):
        a, b = 0.25, 0.75
        want = (2 * a * b + 0.01 ** 2) / (a * a + b * b + 0.01 ** 2)
        got = ssim(np.full((16, 16), a), np.full((16, 16), b))
        assert got == pytest.approx(want, rel=1e-12)

    def test_checkerboard_vs_inverse_near_minus_one(self):
        yy, xx = np.mgrid[0:16, 0:16]
        a = ((xx + yy) % 2).astype(float)
        b = 1.0 - a
        got = ssim(a, b)
        assert got == pytest.approx(oracle_ssim(a, b), rel=1e-10)
        assert got < -0.9

    def test_matches_scalar_oracle_random(self):
        rng = np.random.default_rng(15)
        a, b = rng.random((16, 16)), rng.random((16, 16))
        got, want = ssim(a, b), oracle_ssim(a, b)
        assert abs(got - want) <= 1e-10 * max(1.0, abs(want))

    def test_color_channels_averaged(self):
        rng = np.random.default_rng(16)
        a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
        per = np.mean([ssim(a[..., c], b[..., c]) for c in range(3)])
        assert ssim(a, b) == pytest.approx(per, rel=1e-12)

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))


class TestSymmetryAndTriangle:
    def test_symmetry(self):
        rng = np.random.default_rng(17)
        a, b = rng.random((16, 16)), rng.random((16, 16))
        fa = rng.uniform(-2, 2, (8, 8, 2))
        fb = rng.uniform(-2, 2, (8, 8, 2))
        assert loss_attenuation(a, b) == loss_attenuation(b, a)
        assert loss_flow_epe(fa, fb) == loss_flow_epe(fb, fa)
        assert ssim(a, b) == pytest.approx(ssim(b, a), rel=1e-12)

    def test_triangle_inequalities(self):
        rng = np.random.default_rng(18)
        for _ in range(20):
            fa, fb, fc = (rng.uniform(-3, 3, (6, 6, 2)) for _ in range(3))
            assert loss_flow_epe(fa, fc) <= (
                loss_flow_epe(fa, fb) + loss_flow_epe(fb, fc) + 1e-12
            )
            a, b, c = (rng.random((6, 6)) for _ in range(3))
            assert math.sqrt(oracle_mse(a, c)) <= (
                math.sqrt(loss_attenuation(a, b)) + math.sqrt(loss_attenuation(b, c)) + 1e-12
            )


def _gt_matte_with_coverage(h, w, frac):
    mask = np.zeros((h, w), np.float32)
    rows = int(round(frac * h))
    mask[:rows] = 1.0
    return Matte(mask, np.ones((h, w), np.float32), FlowField.zeros(h, w))


class TestBackgroundBaseline:
    def test_zero_gt_flow_gives_zero_epe(self):
        rng = np.random.default_rng(19)
        bg = rng.random((16, 16, 3))
        gt = _gt_matte_with_coverage(16, 16, 0.25)
        rep = background_baseline(gt, bg, bg)
        assert rep.epe_whole == 0.0

    def test_iou_equals_coverage(self):
        rng = np.random.default_rng(20)
        bg = rng.random((20, 16, 3))
        gt = _gt_matte_with_coverage(20, 16, 0.15)
        rep = background_baseline(gt, bg, bg)
        assert rep.mask_iou == pytest.approx(0.15, abs=1e-12)

    def test_input_equals_background_gives_zero_imse(self):
        rng = np.random.default_rng(21)
        bg = rng.random((16, 16, 3))
        gt = _gt_matte_with_coverage(16, 16, 0.5)
        rep = background_baseline(gt, bg, bg)
        assert rep.image_mse == 0.0
        assert rep.psnr == 99.0

    def test_epe_equals_mean_gt_flow_magnitude(self):
        h = w = 16
        off = np.zeros((h, w, 2), np.float32)
        off[:8, :, 0] = 3.0
        off[:8, :, 1] = 4.0
        gt = Matte(
            np.ones((h, w), np.float32),
            np.ones((h, w), np.float32),
            FlowField(off),
        )
        rng = np.random.default_rng(22)
        bg = rng.random((h, w, 3))
        rep = background_baseline(gt, bg, bg)
        assert rep.epe_whole == pytest.approx(2.5, abs=1e-9)
        assert rep.epe_object == pytest.approx(2.5, abs=1e-9)


class TestAggregate:
    def test_mean_of_rows(self):
        r1 = EvalReport(1.0, 2.0, 0.5, 0.1, 0.2, 30.0, 0.9)
        r2 = EvalReport(3.0, 4.0, 0.7, 0.3, 0.4, 20.0, 0.7)
        agg = aggregate_reports([r1, r2])
        assert agg.epe_whole == 2.0
        assert agg.mask_iou == pytest.approx(0.6)
        assert agg.psnr == 25.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate_reports([])
