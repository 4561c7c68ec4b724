import numpy as np
from scipy import ndimage

from onestep_sr.models.run_configs import DegradationConfig
from onestep_sr.services.tensor_ops import Rng


def _degrade_one(x: np.ndarray, cfg: DegradationConfig, rng: Rng) -> np.ndarray:
    blur_sigma = float(rng.uniform((), *cfg.blur_sigma_range))
    noise_sigma = float(rng.uniform((), *cfg.noise_sigma_range))

    y = np.asarray(x, dtype=np.float64)
    if blur_sigma > 0:
        y = ndimage.gaussian_filter(y, sigma=(0.0, blur_sigma, blur_sigma), mode='reflect')

    factor = cfg.downscale
    if factor > 1:
        channels, height, width = y.shape
        y = y.reshape(channels, height // factor, factor, width // factor, factor).mean(axis=(2, 4))
        y = np.repeat(np.repeat(y, factor, axis=1), factor, axis=2)

    noise = rng.normal(y.shape)
    y = y + noise_sigma * noise

    return np.clip(y, 0.0, 1.0).astype(x.dtype, copy=False)


def synthesize_degradation(x_H: np.ndarray, cfg: DegradationConfig, rng: Rng) -> np.ndarray:
    """
    Gaussian blur (seeded sigma), area-average downsample, nearest re-upsample to the input size and additive
    Gaussian noise (seeded sigma), clamped to [0, 1]. Each image of a [B, 3, H, W] batch uses rng.split(index).

    Raises:
        ValueError: If the image sides are not divisible by the downscale factor.
    """
    single = x_H.ndim == 3
    batch = x_H[None] if single else x_H
    if batch.ndim != 4 or batch.shape[1] != 3:
        raise ValueError(f"Expected a [B, 3, H, W] or [3, H, W] image, got {x_H.shape}")
    if batch.shape[2] % cfg.downscale or batch.shape[3] % cfg.downscale:
        raise ValueError(f"Image size {batch.shape[2]}x{batch.shape[3]} not divisible by downscale {cfg.downscale}")

    degraded = np.stack([_degrade_one(image, cfg, rng.split(index)) for index, image in enumerate(batch)])

    return degraded[0] if single else degraded
