"""Laplacian difficulty scoring and percentile-band masking."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from diffaudit.diffusion import ShapeMismatchError
from diffaudit.frequency import (LAPLACIAN_MEAN_ABS, EmptyMaskError,
                                 FrequencyMask, PatchGrid, ThresholdBand,
                                 apply_mask, build_mask, laplacian_response,
                                 mask_from_image, patch_scores,
                                 write_mask_image, write_score_dump)

from oracles import laplacian_oracle, mask_selection_oracle, patch_score_oracle


class TestLaplacianResponse:
    def test_constant_image_zero_response(self):
        img = np.full((16, 16, 1), 0.7)
        assert np.array_equal(laplacian_response(img), np.zeros((16, 16)))

    def test_linear_ramp_zero_interior(self):
        yy, xx = np.meshgrid(np.arange(16), np.arange(16), indexing="ij")
        img = (0.03 * xx + 0.05 * yy - 0.5)[:, :, np.newaxis]
        resp = laplacian_response(img)
        assert np.abs(resp[1:-1, 1:-1]).max() <= 1e-13

    def test_checkerboard_interior_magnitude(self):
        yy, xx = np.meshgrid(np.arange(8), np.arange(8), indexing="ij")
        img = np.where((xx + yy) % 2 == 0, 1.0, -1.0)[:, :, np.newaxis]
        resp = laplacian_response(img)
        # Four opposite-sign neighbors: |sum(neighbors) - 4 center| = 8.
        assert np.abs(np.abs(resp[1:-1, 1:-1]) - 8.0).max() == 0.0

    def test_matches_pixelwise_oracle(self, rng):
        img = rng.uniform(-1, 1, (12, 12, 1))
        resp = laplacian_response(img)
        assert np.allclose(resp, laplacian_oracle(img[:, :, 0]),
                           rtol=0, atol=1e-13)

    def test_multichannel_reduces_to_luminance(self, rng):
        img = rng.uniform(-1, 1, (8, 8, 3))
        resp = laplacian_response(img)
        assert np.allclose(resp, laplacian_oracle(img.mean(axis=2)),
                           rtol=0, atol=1e-13)


class TestPatchScores:
    def test_zero_response_zero_scores(self):
        grid = PatchGrid(8)
        assert np.array_equal(patch_scores(np.zeros((16, 16)), grid),
                              np.zeros((2, 2)))

    def test_single_pixel_squares(self):
        grid = PatchGrid(8)
        resp = np.zeros((16, 16))
        resp[3, 11] = 3.0
        scores = patch_scores(resp, grid)
        assert scores[0, 1] == 9.0
        assert scores.sum() == 9.0

    def test_matches_brute_force_oracle(self, rng):
        grid = PatchGrid(8)
        for _ in range(5):
            resp = rng.uniform(-5, 5, (24, 16))
            scores = patch_scores(resp, grid)
            assert np.allclose(scores, patch_score_oracle(resp, 8),
                               rtol=1e-9, atol=1e-12)

    def test_mean_abs_mode(self, rng):
        grid = PatchGrid(4)
        resp = rng.uniform(-2, 2, (8, 8))
        scores = patch_scores(resp, grid, mode=LAPLACIAN_MEAN_ABS)
        expected = np.abs(resp).reshape(2, 4, 2, 4).mean(axis=(1, 3))
        assert np.allclose(scores, expected, rtol=1e-12)

    def test_rejects_indivisible_dims(self):
        with pytest.raises(ValueError, match="not divisible"):
            patch_scores(np.zeros((20, 16)), PatchGrid(8))


class TestBuildMask:
    def test_full_band_selects_everything(self, rng):
        scores = rng.uniform(0, 10, (5, 5))
        mask = build_mask(scores, ThresholdBand(0.0, 100.0), patch_size=8)
        assert mask.selected_count == 25

    def test_degenerate_distribution_selects_everything(self):
        scores = np.full((4, 4), 3.3)
        mask = build_mask(scores, ThresholdBand(15.0, 85.0), patch_size=8)
        assert bool(mask.flags.all())

    def test_hundred_distinct_scores_against_slice_oracle(self, rng):
        scores = rng.permutation(np.linspace(1.0, 100.0, 100)).reshape(10, 10)
        band = ThresholdBand(15.0, 85.0)
        mask = build_mask(scores, band, patch_size=8)
        assert mask.selected_count in (70, 71, 72)
        assert np.array_equal(mask.flags,
                              mask_selection_oracle(scores, 15.0, 85.0))

    @given(l_min=st.floats(0.0, 60.0), width=st.floats(1.0, 40.0),
           seed=st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_selection_matches_oracle(self, l_min, width, seed):
        r = np.random.default_rng(seed)
        scores = r.uniform(0, 50, (6, 6))
        band = ThresholdBand(l_min, min(l_min + width, 100.0))
        mask = build_mask(scores, band, patch_size=4)
        assert np.array_equal(mask.flags,
                              mask_selection_oracle(scores, band.l_min, band.l_max))

    @given(l_min=st.floats(0.0, 50.0), l_max=st.floats(50.0, 100.0),
           widen=st.floats(0.0, 40.0), seed=st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_widening_band_never_deselects(self, l_min, l_max, widen, seed):
        if l_min >= l_max:
            return
        r = np.random.default_rng(seed)
        scores = r.uniform(0, 50, (6, 6))
        narrow = build_mask(scores, ThresholdBand(l_min, l_max), 4)
        wide = build_mask(scores,
                          ThresholdBand(max(0.0, l_min - widen),
                                        min(100.0, l_max + widen)), 4)
        assert bool(np.all(wide.flags | ~narrow.flags))

    def test_positive_rescaling_keeps_selection(self, rng):
        scores_img = rng.uniform(-1, 1, (32, 32, 1))
        band = ThresholdBand(20.0, 80.0)
        grid = PatchGrid(8)
        base = mask_from_image(scores_img, band, grid)
        scaled = mask_from_image(3.7 * scores_img, band, grid)
        assert np.array_equal(base.flags, scaled.flags)

    def test_band_validation(self):
        with pytest.raises(ValueError):
            ThresholdBand(-1.0, 50.0)
        with pytest.raises(ValueError):
            ThresholdBand(0.0, 101.0)
        with pytest.raises(ValueError):
            ThresholdBand(60.0, 40.0)
        with pytest.raises(ValueError):
            ThresholdBand(100.0, 100.0)


class TestApplyMask:
    def test_all_selected_is_identity(self, rng):
        img = rng.uniform(-1, 1, (16, 16, 1))
        mask = FrequencyMask(flags=np.ones((2, 2), dtype=bool), patch_size=8)
        assert np.array_equal(apply_mask(img, mask), img)

    def test_all_deselected_zeroes_image(self, rng):
        img = rng.uniform(-1, 1, (16, 16, 1))
        mask = FrequencyMask(flags=np.zeros((2, 2), dtype=bool), patch_size=8)
        assert np.array_equal(apply_mask(img, mask), np.zeros_like(img))

    def test_half_selected_constant_image(self):
        img = np.full((16, 16, 1), 0.6)
        flags = np.array([[True, False], [False, True]])
        mask = FrequencyMask(flags=flags, patch_size=8)
        out = apply_mask(img, mask)
        assert np.array_equal(out[:8, :8, 0], np.full((8, 8), 0.6))
        assert np.array_equal(out[:8, 8:, 0], np.zeros((8, 8)))
        assert out.mean() == pytest.approx(0.3)
        # Selected-region mean unchanged.
        assert out[:8, :8].mean() == pytest.approx(0.6)

    def test_idempotent(self, rng):
        img = rng.uniform(-1, 1, (16, 16, 2))
        flags = rng.uniform(size=(2, 2)) > 0.5
        mask = FrequencyMask(flags=flags, patch_size=8)
        once = apply_mask(img, mask)
        twice = apply_mask(once, mask)
        assert np.array_equal(once, twice)

    def test_grid_mismatch(self, rng):
        img = rng.uniform(-1, 1, (16, 16, 1))
        mask = FrequencyMask(flags=np.ones((3, 3), dtype=bool), patch_size=8)
        with pytest.raises(ShapeMismatchError):
            apply_mask(img, mask)


class TestMaskProvenance:
    def test_mask_depends_only_on_image_and_band(self, rng):
        img = rng.uniform(-1, 1, (32, 32, 1))
        band = ThresholdBand(15.0, 85.0)
        grid = PatchGrid(8)
        masks = [mask_from_image(img, band, grid) for _ in range(3)]
        for m in masks[1:]:
            assert np.array_equal(masks[0].flags, m.flags)


class TestExports:
    def test_mask_image_roundtrip(self, tmp_path, rng):
        flags = rng.uniform(size=(4, 6)) > 0.4
        mask = FrequencyMask(flags=flags, patch_size=8)
        path = tmp_path / "mask.pgm"
        write_mask_image(mask, path)
        back = np.asarray(Image.open(path))
        assert back.shape == (4, 6)
        assert np.array_equal(back == 255, flags)
        assert set(np.unique(back)) <= {0, 255}

    def test_score_dump_parses_back(self, tmp_path, rng):
        scores = rng.uniform(0, 5, (3, 4))
        path = tmp_path / "scores.txt"
        write_score_dump(scores, path)
        lines = path.read_text().splitlines()
        assert len(lines) == 12
        for line in lines:
            r, c, value = line.split()
            assert float(value) == scores[int(r), int(c)]


def test_empty_mask_error_exists():
    assert issubclass(EmptyMaskError, ValueError)
