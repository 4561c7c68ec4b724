import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from onestep_sr.models.run_configs import LossWeights
from onestep_sr.services.perceptual import PerceptualExtractor


@dataclass
class ChannelStats:
    """
    Per-(sample, channel) spatial mean and population variance.

    Attributes:
        mu (np.ndarray): [B, C] means.
        s (np.ndarray): [B, C] variances (divided by h*w).
        eps_stat (float): Variance stabilizer.
    """
    mu: np.ndarray
    s: np.ndarray
    eps_stat: float


@dataclass
class LossParts:
    rec: float
    align: float
    cons: float

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.rec, self.align, self.cons))


def _check_shapes(a: np.ndarray, b: np.ndarray, what: str):
    if a.shape != b.shape:
        raise ValueError(f"{what} needs matching shapes, got {a.shape} and {b.shape}")


def rec_loss(x_hat: np.ndarray, x_H: np.ndarray, w: LossWeights, perceptual: PerceptualExtractor,
             need_grad: bool = False) -> Tuple[float, np.ndarray]:
    """
    lambda2 * mean((x_hat - x_H)^2) + lambda_p * perceptual(x_hat, x_H), with the gradient in x_hat when asked.
    """
    _check_shapes(x_hat, x_H, 'rec_loss')

    diff = x_hat - x_H
    pixel = float(np.mean(diff ** 2))
    value = w.lambda2 * pixel
    grad = w.lambda2 * 2.0 * diff / diff.size if need_grad else None

    if w.lambda_p != 0.0:
        distance, d_distance = perceptual.distance_and_grad(x_hat, x_H, need_grad)
        value += w.lambda_p * distance
        if need_grad:
            grad = grad + w.lambda_p * d_distance

    return value, grad


def channel_stats(q: np.ndarray, eps_stat: float) -> ChannelStats:
    if q.ndim != 4 or q.shape[2] * q.shape[3] < 1:
        raise ValueError(f"channel_stats expects a [B, C, h, w] tensor with h*w >= 1, got {q.shape}")

    mu = q.mean(axis=(2, 3))
    s = np.mean((q - mu[:, :, None, None]) ** 2, axis=(2, 3))

    return ChannelStats(mu, s, eps_stat)


def align_loss_from_stats(stats_hat: ChannelStats, stats_H: ChannelStats) -> float:
    eps = stats_hat.eps_stat
    var_hat = stats_hat.s + eps
    var_H = stats_H.s + eps
    terms = np.log(var_H / var_hat) + (stats_hat.s + (stats_hat.mu - stats_H.mu) ** 2) / var_H - 1.0

    return float(terms.sum() / (2.0 * terms.size))


def align_loss(q_hat: np.ndarray, q_H: np.ndarray, eps_stat: float, need_grad: bool = False):
    """
    Channel-wise Gaussian KL between the frozen-prior responses on the restored and the reference latent.
    Only q_hat receives a gradient.

    Returns:
        Tuple[float, Optional[np.ndarray]]: Loss and d loss / d q_hat.
    """
    _check_shapes(q_hat, q_H, 'align_loss')

    stats_hat = channel_stats(q_hat, eps_stat)
    stats_H = channel_stats(q_H, eps_stat)
    value = align_loss_from_stats(stats_hat, stats_H)
    if not need_grad:
        return value, None

    norm = 2.0 * stats_hat.mu.size
    spatial = q_hat.shape[2] * q_hat.shape[3]
    var_H = stats_H.s + eps_stat

    d_s = (-1.0 / (stats_hat.s + eps_stat) + 1.0 / var_H) / norm
    d_mu = 2.0 * (stats_hat.mu - stats_H.mu) / var_H / norm

    centered = q_hat - stats_hat.mu[:, :, None, None]
    grad = (d_s[:, :, None, None] * 2.0 * centered + d_mu[:, :, None, None]) / spatial

    return value, grad.astype(q_hat.dtype, copy=False)


def cons_loss(q_adapt: np.ndarray, q_base: np.ndarray, need_grad: bool = False):
    """
    Mean squared gap between adapter-on and adapter-off responses.

    Returns:
        Tuple[float, Optional[np.ndarray]]: Loss and d loss / d q_adapt (the q_base gradient is its negation).
    """
    _check_shapes(q_adapt, q_base, 'cons_loss')

    diff = q_adapt - q_base
    value = float(np.mean(diff ** 2))

    return value, (2.0 * diff / diff.size if need_grad else None)


def total_loss(parts: LossParts, w: LossWeights) -> float:
    if not parts.is_finite():
        logging.error(f"Non-finite loss part: rec={parts.rec}, align={parts.align}, cons={parts.cons}")
        raise FloatingPointError(f"Non-finite loss part in {parts}")

    return parts.rec + w.lambda_a * parts.align + w.lambda_c * parts.cons


def calib_loss(parts: LossParts, w: LossWeights, omega_t: float) -> float:
    """
    omega(t) * (L_rec + lambda_a * L_align); the consistency term is left out during calibration.
    """
    if not 0.0 <= omega_t <= 1.0:
        raise ValueError(f"omega_t must lie in [0, 1], got {omega_t}")

    return omega_t * (parts.rec + w.lambda_a * parts.align)
