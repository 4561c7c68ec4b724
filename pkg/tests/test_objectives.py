import math

import numpy as np
import pytest

from onestep_sr.models.run_configs import LossWeights
from onestep_sr.services.objectives import (LossParts, align_loss, calib_loss, channel_stats, cons_loss, rec_loss,
                                            total_loss)
from onestep_sr.services.perceptual import PerceptualExtractor
from onestep_sr.services.tensor_ops import Rng, finite_diff_grad, gaussian_fill


def test_rec_loss_is_zero_for_identical_images():
    x = Rng(0).uniform((1, 3, 16, 16))

    assert rec_loss(x, x, LossWeights(), PerceptualExtractor())[0] == 0.0


def test_rec_loss_gradient_matches_finite_differences():
    rng = Rng(1)
    x_H = rng.uniform((1, 3, 8, 8))
    x_hat = rng.split(1).uniform((1, 3, 8, 8))
    weights = LossWeights()
    perceptual = PerceptualExtractor()

    _, grad = rec_loss(x_hat, x_H, weights, perceptual, need_grad=True)
    numeric = finite_diff_grad(lambda x: rec_loss(x, x_H, weights, perceptual)[0], x_hat, h=1e-6)

    assert np.abs(grad - numeric).max() <= 1e-6 * max(1.0, np.abs(numeric).max())


def test_perceptual_distance_needs_aligned_sides():
    with pytest.raises(ValueError):
        PerceptualExtractor().distance(np.zeros((1, 3, 12, 12)), np.zeros((1, 3, 12, 12)))


def test_align_loss_is_zero_on_identical_responses():
    q = gaussian_fill(Rng(2), (2, 4, 3, 3))

    assert align_loss(q, q, 1e-6)[0] == 0.0


def test_align_loss_worked_example():
    q_hat = np.array([[[[1.0, -1.0]]]])
    q_H = q_hat + 2.0

    assert align_loss(q_hat, q_H, 1e-6)[0] == pytest.approx(2.0, abs=1e-5)


def test_align_loss_gradient_matches_finite_differences():
    rng = Rng(3)
    q_hat = gaussian_fill(rng, (2, 3, 2, 3))
    q_H = 1.5 * gaussian_fill(rng.split(1), (2, 3, 2, 3)) + 0.3

    _, grad = align_loss(q_hat, q_H, 1e-6, need_grad=True)
    numeric = finite_diff_grad(lambda q: align_loss(q, q_H, 1e-6)[0], q_hat, h=1e-6)

    assert np.abs(grad - numeric).max() <= 1e-6


def test_channel_stats_use_population_variance():
    q = np.array([[[[1.0, 3.0]]]])
    stats = channel_stats(q, 1e-6)

    assert stats.mu[0, 0] == 2.0
    assert stats.s[0, 0] == 1.0


def test_single_pixel_latent_relies_on_eps():
    q = np.ones((1, 1, 1, 1))
    value = align_loss(q, q + 1.0, 1e-6)[0]

    assert math.isfinite(value) and value > 0


def test_cons_loss():
    q = gaussian_fill(Rng(4), (1, 2, 2, 2))
    value, grad = cons_loss(q + 0.5, q, need_grad=True)

    assert cons_loss(q, q.copy())[0] == 0.0
    assert value == pytest.approx(0.25)
    assert np.allclose(grad, 2 * 0.5 / q.size)


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        cons_loss(np.zeros((1, 2, 2, 2)), np.zeros((1, 2, 2, 3)))


def test_total_loss_weights_the_parts():
    parts = LossParts(1.0, 2.0, 3.0)

    assert total_loss(parts, LossWeights(lambda_a=0.5, lambda_c=2.0)) == 1.0 + 1.0 + 6.0


def test_total_loss_rejects_non_finite_parts():
    with pytest.raises(FloatingPointError):
        total_loss(LossParts(float('nan'), 0.0, 0.0), LossWeights())


def test_calib_loss_drops_consistency_and_scales_by_omega():
    parts = LossParts(1.0, 2.0, 100.0)

    assert calib_loss(parts, LossWeights(), 0.5) == 1.5
    with pytest.raises(ValueError):
        calib_loss(parts, LossWeights(), 1.5)


def test_objective_variants():
    weights = LossWeights()

    assert weights.for_objective('no_align').lambda_a == 0.0
    assert weights.for_objective('no_cons').lambda_c == 0.0
    assert weights.for_objective('no_perceptual').lambda_p == 0.0
    assert weights.for_objective('full') == weights
    with pytest.raises(ValueError):
        weights.for_objective('no_rec')
