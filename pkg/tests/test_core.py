"""Tests for the matte data model, bilinear sampling and compositing."""

import numpy as np
import pytest

from refmatte.core import (
    FlowField,
    Matte,
    bilinear_sample,
    composite_alpha,
    composite_refractive,
    warp_by_flow,
)


def uniform_flow(h, w, dx=0.0, dy=0.0, valid=None):
    off = np.zeros((h, w, 2), dtype=np.float32)
    off[..., 0] = dx
    off[..., 1] = dy
    return FlowField(off, valid)


def full_matte(h, w, mask=1.0, rho=1.0, flow=None):
    if flow is None:
        flow = FlowField.zeros(h, w)
    return Matte(np.full((h, w), mask, np.float32), np.full((h, w), rho, np.float32), flow)


GRAY_2X2 = np.array([[0.0, 1.0], [2.0, 3.0]]) / 3.0  # scaled into [0,1]


class TestBilinearSample:
    def test_integer_coordinate_returns_pixel(self):
        img = np.array([[0.0, 1.0], [2.0, 3.0]])
        assert bilinear_sample(img, 0, 0) == 0.0
        assert bilinear_sample(img, 1, 0) == 1.0
        assert bilinear_sample(img, 0, 1) == 2.0

    def test_midpoint_is_mean_of_four(self):
        img = np.array([[0.0, 1.0], [2.0, 3.0]])
        assert bilinear_sample(img, 0.5, 0.5) == pytest.approx(1.5, abs=1e-15)

    def test_linear_along_top_row(self):
        img = np.array([[0.0, 1.0], [2.0, 3.0]])
        assert bilinear_sample(img, 0.25, 0.0) == pytest.approx(0.25, abs=1e-15)

    def test_out_of_range_clamps_to_border(self):
        img = np.array([[0.0, 1.0], [2.0, 3.0]])
        assert bilinear_sample(img, -5.0, 0.0) == 0.0
        assert bilinear_sample(img, 10.0, 10.0) == 3.0

    def test_non_finite_coordinates_rejected(self):
        img = np.zeros((2, 2))
        with pytest.raises(ValueError):
            bilinear_sample(img, np.nan, 0.0)
        with pytest.raises(ValueError):
            bilinear_sample(img, 0.0, np.inf)

    def test_color_image_returns_per_channel(self):
        img = np.zeros((2, 2, 3))
        img[..., 1] = 1.0
        out = bilinear_sample(img, 0.5, 0.5)
        assert out.shape == (3,)
        assert np.allclose(out, [0.0, 1.0, 0.0])

    def test_result_within_neighbor_range(self):
        rng = np.random.default_rng(0)
        img = rng.random((8, 8))
        for _ in range(200):
            x = rng.uniform(0, 7)
            y = rng.uniform(0, 7)
            x0, y0 = int(x), int(y)
            nb = img[y0 : y0 + 2, x0 : x0 + 2]
            v = bilinear_sample(img, x, y)
            assert nb.min() - 1e-12 <= v <= nb.max() + 1e-12

    def test_continuity_within_local_range(self):
        # nearby samples differ by at most the local pixel-value range
        rng = np.random.default_rng(1)
        img = rng.random((16, 16))
        for _ in range(200):
            x, y = rng.uniform(1, 14, size=2)
            dx, dy = rng.uniform(-1, 1, size=2)
            a = bilinear_sample(img, x, y)
            b = bilinear_sample(img, x + dx, y + dy)
            x0, y0 = int(min(x, x + dx)), int(min(y, y + dy))
            local = img[max(y0, 0) : y0 + 3, max(x0, 0) : x0 + 3]
            assert abs(a - b) <= local.max() - local.min() + 1e-12


class TestFlowField:
    def test_invalid_pixels_forced_to_zero(self):
        valid = np.ones((2, 2), dtype=bool)
        valid[0, 0] = False
        off = np.full((2, 2, 2), 1.5, dtype=np.float32)
        f = FlowField(off, valid)
        assert f.offsets[0, 0, 0] == 0.0 and f.offsets[0, 0, 1] == 0.0
        assert f.offsets[1, 1, 0] == 1.5

    def test_magnitude_invariant_enforced(self):
        off = np.zeros((4, 4, 2), dtype=np.float32)
        off[..., 0] = 100.0  # |dx| > width
        with pytest.raises(ValueError):
            FlowField(off)

    def test_non_finite_valid_offsets_rejected(self):
        off = np.zeros((2, 2, 2), dtype=np.float32)
        off[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            FlowField(off)


class TestMatte:
    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            Matte(np.zeros((2, 2)), np.zeros((2, 3)), FlowField.zeros(2, 2))
        with pytest.raises(ValueError):
            Matte(np.zeros((2, 2)), np.zeros((2, 2)), FlowField.zeros(3, 2))

    def test_range_invariants(self):
        with pytest.raises(ValueError):
            Matte(np.full((2, 2), 1.5), np.zeros((2, 2)), FlowField.zeros(2, 2))
        with pytest.raises(ValueError):
            Matte(np.zeros((2, 2)), np.full((2, 2), -0.1), FlowField.zeros(2, 2))


class TestCompositeAlpha:
    def test_alpha_one_returns_foreground(self):
        rng = np.random.default_rng(2)
        fg = rng.random((4, 4, 3))
        bg = rng.random((4, 4, 3))
        assert np.array_equal(composite_alpha(fg, bg, 1.0), fg)

    def test_alpha_zero_is_clamped_sum(self):
        fg = np.full((3, 3), 0.7)
        bg = np.full((3, 3), 0.6)
        out = composite_alpha(fg, bg, 0.0)
        assert np.all(out == 1.0)

    def test_midpoint_arithmetic(self):
        fg = np.full((2, 2), 0.2)
        bg = np.full((2, 2), 0.6)
        out = composite_alpha(fg, bg, 0.5)
        assert np.allclose(out, 0.5, atol=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            composite_alpha(np.zeros((2, 2)), np.zeros((3, 3)), 0.5)


class TestCompositeRefractive:
    def test_zero_mask_returns_background_exactly(self):
        rng = np.random.default_rng(3)
        bg = rng.random((6, 7, 3))
        matte = full_matte(6, 7, mask=0.0, rho=0.3)
        out = composite_refractive(matte, bg)
        assert np.array_equal(out, bg)

    def test_identity_warp_returns_background_exactly(self):
        rng = np.random.default_rng(4)
        bg = rng.random((5, 5, 3))
        matte = full_matte(5, 5, mask=1.0, rho=1.0)
        out = composite_refractive(matte, bg)
        assert np.array_equal(out, bg)

    def test_shifted_attenuated_pixel(self):
        # m = 1, rho = 0.5, flow = (+1, 0) over row [0.2, 0.8]: x=0 gives 0.4
        bg = np.array([[0.2, 0.8]])
        matte = full_matte(1, 2, mask=1.0, rho=0.5, flow=uniform_flow(1, 2, dx=1.0))
        out = composite_refractive(matte, bg)
        assert out[0, 0] == pytest.approx(0.4, abs=1e-15)

    def test_invalid_flow_blends_zero_flow_and_reports(self):
        bg = np.array([[0.2, 0.8]])
        valid = np.array([[False, True]])
        flow = uniform_flow(1, 2, dx=1.0, valid=valid)
        matte = full_matte(1, 2, mask=1.0, rho=0.5, flow=flow)
        out, summary = composite_refractive(matte, bg, with_summary=True)
        assert out[0, 0] == pytest.approx(0.1, abs=1e-15)  # 0.5 * B(p)
        assert summary.invalid_flow_pixels == 1
        assert summary.invalid_map[0, 0] and not summary.invalid_map[0, 1]

    def test_output_in_unit_interval(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            h, w = rng.integers(4, 12, size=2)
            bg = rng.random((h, w, 3))
            mask = rng.random((h, w)).astype(np.float32)
            rho = rng.random((h, w)).astype(np.float32)
            off = rng.uniform(-3, 3, size=(h, w, 2)).astype(np.float32)
            valid = rng.random((h, w)) > 0.1
            matte = Matte(mask, rho, FlowField(off, valid))
            out = composite_refractive(matte, bg)
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_linear_in_background(self):
        rng = np.random.default_rng(6)
        h, w = 9, 8
        mask = rng.random((h, w)).astype(np.float32)
        rho = rng.random((h, w)).astype(np.float32)
        off = rng.uniform(-2, 2, size=(h, w, 2)).astype(np.float32)
        matte = Matte(mask, rho, FlowField(off))
        b1 = rng.random((h, w, 3))
        b2 = rng.random((h, w, 3))
        a = 0.37
        mixed = composite_refractive(matte, a * b1 + (1 - a) * b2)
        parts = a * composite_refractive(matte, b1) + (1 - a) * composite_refractive(matte, b2)
        assert np.allclose(mixed, parts, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            composite_refractive(full_matte(2, 2), np.zeros((3, 3)))


class TestWarp:
    def test_zero_flow_is_identity(self):
        rng = np.random.default_rng(7)
        img = rng.random((5, 6))
        assert np.array_equal(warp_by_flow(img, FlowField.zeros(5, 6)), img)

    def test_integer_shift_matches_roll_interior(self):
        rng = np.random.default_rng(8)
        img = rng.random((6, 6))
        out = warp_by_flow(img, uniform_flow(6, 6, dx=2.0))
        assert np.allclose(out[:, :4], img[:, 2:], atol=1e-15)
