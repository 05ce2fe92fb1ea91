import math

import numpy as np
import pytest

from conftest import random_image, ref_hist_correlation, ref_histogram, ref_mse, ref_ssim
from darksplat import imagekit
from darksplat.imagekit import (
    ImageError,
    hist_correlation,
    histogram,
    mse,
    psnr,
    read_image,
    ssim,
    ssim_and_grad,
    write_image,
    write_metrics_csv,
)


class TestMse:
    def test_identity_is_zero(self):
        img = random_image(np.random.default_rng(0))
        assert mse(img, img) == 0.0

    def test_constant_offset(self):
        a = np.zeros((8, 8, 3))
        b = np.full((8, 8, 3), 0.1)
        assert mse(a, b) == pytest.approx(0.01, abs=1e-15)

    def test_matches_double_loop_reference(self):
        rng = np.random.default_rng(1)
        a, b = random_image(rng, 8, 8), random_image(rng, 8, 8)
        assert mse(a, b) == pytest.approx(ref_mse(a, b), abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ImageError):
            mse(np.zeros((8, 8, 3)), np.zeros((8, 9, 3)))


class TestPsnr:
    def test_known_mse_gives_20db(self):
        a = np.zeros((8, 8, 3))
        b = np.full((8, 8, 3), 0.1)
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)

    def test_identical_images_are_infinite(self):
        img = random_image(np.random.default_rng(2))
        assert psnr(img, img) == math.inf

    def test_matches_formula_on_degraded_pair(self):
        rng = np.random.default_rng(3)
        a = random_image(rng)
        b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
        assert psnr(a, b) == pytest.approx(10.0 * math.log10(1.0 / mse(a, b)), abs=1e-12)

    def test_decreases_with_error_magnitude(self):
        a = np.full((8, 8, 3), 0.5)
        values = [psnr(a, np.clip(a + eps, 0, 1)) for eps in (0.01, 0.05, 0.1, 0.2)]
        assert all(x > y for x, y in zip(values, values[1:]))


class TestSsim:
    def test_identity_is_one(self):
        img = random_image(np.random.default_rng(4))
        assert ssim(img, img) == pytest.approx(1.0, abs=1e-9)

    def test_constant_pair_matches_reference(self):
        a = np.full((16, 16, 3), 0.5)
        b = np.full((16, 16, 3), 0.6)
        assert ssim(a, b) == pytest.approx(ref_ssim(a, b), abs=1e-9)

    def test_negative_image_matches_reference(self):
        a = random_image(np.random.default_rng(5))
        b = 1.0 - a
        value = ssim(a, b)
        assert value < 0.5
        assert value == pytest.approx(ref_ssim(a, b), abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(6)
        a, b = random_image(rng), random_image(rng)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_too_small_image_rejected(self):
        with pytest.raises(ImageError):
            ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        a, b = random_image(rng, 12, 12), random_image(rng, 12, 12)
        _, grad = ssim_and_grad(a, b)
        h = 1e-5
        for i, j, c in [(0, 0, 0), (5, 7, 1), (11, 3, 2), (6, 6, 0)]:
            ap, am = a.copy(), a.copy()
            ap[i, j, c] += h
            am[i, j, c] -= h
            fd = (ssim(ap, b) - ssim(am, b)) / (2 * h)
            assert grad[i, j, c] == pytest.approx(fd, rel=1e-4, abs=1e-9)


class TestHistogram:
    def test_all_zeros(self):
        h = histogram(np.zeros((4, 4, 3)))
        assert np.all(h[:, 0] == 16)
        assert np.all(h[:, 1:] == 0)

    def test_top_edge_inclusive(self):
        h = histogram(np.ones((4, 4, 3)))
        assert np.all(h[:, -1] == 16)

    def test_hand_binned_example(self):
        img = np.array([[0.0, 0.5], [0.5, 1.0]])[:, :, None] * np.ones(3)
        h = histogram(img, bins=2)
        assert np.all(h == np.array([[1, 3]] * 3))

    def test_counts_sum_to_pixels(self):
        img = random_image(np.random.default_rng(8), 7, 5)
        assert np.all(histogram(img).sum(axis=1) == 35)

    def test_matches_scalar_reference(self):
        img = random_image(np.random.default_rng(9), 8, 8)
        assert np.array_equal(histogram(img), ref_histogram(img))


class TestHistCorrelation:
    def test_identity_is_one(self):
        img = random_image(np.random.default_rng(10))
        assert hist_correlation(img, img) == pytest.approx(1.0, abs=1e-12)

    def test_pixel_permutation_invariance(self):
        rng = np.random.default_rng(11)
        img = random_image(rng, 8, 8)
        flat = img.reshape(-1, 3)
        perm = flat[rng.permutation(len(flat))].reshape(img.shape)
        assert hist_correlation(img, perm) == pytest.approx(1.0, abs=1e-12)

    def test_matches_reference_pearson(self):
        rng = np.random.default_rng(12)
        a, b = random_image(rng), random_image(rng)
        assert hist_correlation(a, b) == pytest.approx(ref_hist_correlation(a, b), abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(13)
        a, b = random_image(rng), random_image(rng)
        assert hist_correlation(a, b) == pytest.approx(hist_correlation(b, a), abs=1e-12)


class TestImageIO:
    def test_pfm_round_trip_bit_exact(self, tmp_path):
        img = np.float64(np.float32(random_image(np.random.default_rng(14))))
        path = tmp_path / "img.pfm"
        write_image(path, img)
        assert np.array_equal(read_image(path), img)

    def test_png_quantizes_to_nearest_level(self, tmp_path):
        path = tmp_path / "img.png"
        write_image(path, np.full((4, 4, 3), 0.5))
        assert np.allclose(read_image(path), 128.0 / 255.0)

    def test_png_values_on_grid(self, tmp_path):
        path = tmp_path / "img.png"
        write_image(path, random_image(np.random.default_rng(15)))
        out = read_image(path)
        assert np.array_equal(out, np.rint(out * 255.0) / 255.0)

    def test_single_channel_png_rejected(self, tmp_path):
        from PIL import Image as PILImage

        path = tmp_path / "gray.png"
        PILImage.fromarray(np.zeros((4, 4), dtype=np.uint8), mode="L").save(path)
        with pytest.raises(ImageError):
            read_image(path)

    def test_unsupported_extension(self, tmp_path):
        with pytest.raises(ImageError):
            write_image(tmp_path / "img.tiff", np.zeros((4, 4, 3)))


class TestMetricsCsv:
    def test_infinite_psnr_capped_in_csv(self, tmp_path):
        path = tmp_path / "metrics.csv"
        write_metrics_csv(path, [(0, math.inf, 1.0), (1, 30.0, 0.9)])
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "view_id,psnr_db,ssim"
        assert lines[1].startswith("0,99.000000")
        assert lines[-1].startswith("mean,")

    def test_empty_rows_header_only(self, tmp_path):
        path = tmp_path / "metrics.csv"
        write_metrics_csv(path, [])
        assert path.read_text().strip() == "view_id,psnr_db,ssim"


def test_metric_reference_agreement_sweep():
    """mse/ssim/hist-correlation equal naive references across random sizes."""
    rng = np.random.default_rng(16)
    for _ in range(5):
        h = int(rng.integers(11, 24))
        w = int(rng.integers(11, 24))
        a, b = random_image(rng, h, w), random_image(rng, h, w)
        assert mse(a, b) == pytest.approx(ref_mse(a, b), abs=1e-9)
        assert ssim(a, b) == pytest.approx(ref_ssim(a, b), abs=1e-9)
        assert hist_correlation(a, b) == pytest.approx(ref_hist_correlation(a, b), abs=1e-9)
