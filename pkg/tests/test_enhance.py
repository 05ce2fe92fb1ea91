import numpy as np
import pytest

from conftest import random_image
from darksplat.enhance import (
    EnhanceError,
    EnhanceParams,
    enhance,
    log_interpolate,
    make_anchors,
)


class TestEnhanceParams:
    def test_valid_bounds_accepted(self):
        EnhanceParams(0.0, 0.3).validate()
        EnhanceParams(15.0, 1.0).validate()

    @pytest.mark.parametrize("alpha,gamma", [(-0.1, 0.5), (15.1, 0.5), (4.0, 0.29), (4.0, 1.01)])
    def test_out_of_bounds_rejected(self, alpha, gamma):
        with pytest.raises(EnhanceError):
            EnhanceParams(alpha, gamma).validate()

    def test_dict_round_trip(self):
        p = EnhanceParams(3.5, 0.7)
        assert EnhanceParams.from_dict(p.as_dict()) == p


class TestEnhance:
    def test_identity_params(self):
        img = random_image(np.random.default_rng(0))
        assert np.array_equal(enhance(img, EnhanceParams(0.0, 1.0)), np.clip(img, 0, 1))

    def test_scalar_evaluation(self):
        img = np.full((2, 2, 3), 0.04)
        out = enhance(img, EnhanceParams(15.0, 0.3))
        assert np.allclose(out, 0.64**0.3, atol=1e-12)

    def test_gentle_initial_params(self):
        out = enhance(np.full((2, 2, 3), 0.5), EnhanceParams(0.1, 1.0))
        assert np.allclose(out, 0.55, atol=1e-12)

    def test_monotone_in_pixel_value(self):
        v = np.linspace(0, 1, 32)[None, :, None] * np.ones(3)
        out = enhance(v, EnhanceParams(5.0, 0.6))
        assert np.all(np.diff(out[0, :, 0]) >= 0)

    def test_monotone_in_alpha(self):
        img = random_image(np.random.default_rng(1)) * 0.2
        a = enhance(img, EnhanceParams(2.0, 0.7))
        b = enhance(img, EnhanceParams(6.0, 0.7))
        assert np.all(b >= a)

    def test_out_of_bounds_params_rejected(self):
        with pytest.raises(EnhanceError):
            enhance(np.zeros((2, 2, 3)), EnhanceParams(20.0, 0.5))

    def test_output_clamped(self):
        out = enhance(np.full((2, 2, 3), 0.9), EnhanceParams(15.0, 1.0))
        assert np.all(out <= 1.0)


class TestLogInterpolate:
    def test_geometric_mean_midpoint(self):
        seq = log_interpolate(EnhanceParams(0.1, 1.0), EnhanceParams(10.0, 0.5), 2)
        assert seq[0].alpha == pytest.approx(1.0, abs=1e-12)
        assert seq[0].gamma == pytest.approx(np.sqrt(0.5), abs=1e-12)
        assert seq[1].alpha == pytest.approx(10.0, rel=1e-12)

    def test_single_step_is_endpoint(self):
        seq = log_interpolate(EnhanceParams(0.1, 1.0), EnhanceParams(4.0, 0.6), 1)
        assert len(seq) == 1
        assert seq[0].alpha == pytest.approx(4.0, rel=1e-12)
        assert seq[0].gamma == pytest.approx(0.6, rel=1e-12)

    def test_constant_path(self):
        p = EnhanceParams(2.0, 0.8)
        for q in log_interpolate(p, p, 4):
            assert q.alpha == pytest.approx(2.0, rel=1e-12)
            assert q.gamma == pytest.approx(0.8, rel=1e-12)

    def test_strictly_monotone_when_endpoints_differ(self):
        seq = log_interpolate(EnhanceParams(0.1, 1.0), EnhanceParams(8.0, 0.4), 5)
        alphas = [p.alpha for p in seq]
        gammas = [p.gamma for p in seq]
        assert all(x < y for x, y in zip(alphas, alphas[1:]))
        assert all(x > y for x, y in zip(gammas, gammas[1:]))

    def test_nonpositive_alpha_rejected(self):
        with pytest.raises(EnhanceError):
            log_interpolate(EnhanceParams(0.0, 1.0), EnhanceParams(4.0, 0.5), 2)


class TestMakeAnchors:
    def test_single_anchor_equals_target_enhance(self):
        img = random_image(np.random.default_rng(2)) * 0.3
        pn = EnhanceParams(5.0, 0.5)
        anchors = make_anchors(img, EnhanceParams(0.1, 1.0), pn, 1)
        assert len(anchors) == 1
        assert np.array_equal(anchors[0], enhance(img, pn))

    def test_mean_intensity_increases(self):
        img = random_image(np.random.default_rng(3)) * 0.15
        anchors = make_anchors(img, EnhanceParams(0.1, 1.0), EnhanceParams(10.0, 0.5), 3)
        means = [a.mean() for a in anchors]
        assert all(x < y for x, y in zip(means, means[1:]))

    def test_zero_image_stays_zero(self):
        anchors = make_anchors(
            np.zeros((4, 4, 3)), EnhanceParams(0.1, 1.0), EnhanceParams(10.0, 0.5), 3
        )
        for a in anchors:
            assert np.array_equal(a, np.zeros((4, 4, 3)))

    def test_last_anchor_hits_target(self):
        img = random_image(np.random.default_rng(4)) * 0.2
        pn = EnhanceParams(6.0, 0.7)
        anchors = make_anchors(img, EnhanceParams(0.1, 1.0), pn, 4)
        assert np.allclose(anchors[-1], enhance(img, pn), atol=1e-12)
