import logging
import math
import time
from dataclasses import dataclass, asdict
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from onestep_sr.models.default_values_and_options import DefaultValuesAndOptions

_SSIM_SIGMA = 1.5
_SSIM_RADIUS = 5
_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2


@dataclass
class MetricsRecord:
    """
    One evaluation: PSNR/SSIM on the Y channel, parameter count, per-image MACs and median latency.

    Attributes:
        input_psnr_y (Optional[float]): PSNR of the degraded input itself, the no-op baseline.
    """
    psnr_y: float
    ssim_y: float
    params: int
    macs: int
    latency_ms: float
    input_psnr_y: Optional[float] = None
    images: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def rgb_to_y(x: np.ndarray) -> np.ndarray:
    """
    BT.601 luma 0.299 R + 0.587 G + 0.114 B of a [..., 3, H, W] image.
    """
    x = np.asarray(x, dtype=np.float64)

    return 0.299 * x[..., 0, :, :] + 0.587 * x[..., 1, :, :] + 0.114 * x[..., 2, :, :]


def _check_pair(x_hat: np.ndarray, x_ref: np.ndarray):
    if x_hat.shape != x_ref.shape:
        raise ValueError(f"Metric inputs differ in shape: {x_hat.shape} and {x_ref.shape}")


def eval_psnr_y(x_hat: np.ndarray, x_ref: np.ndarray) -> float:
    """
    10 log10(1 / MSE) on the Y channel of [3, H, W] images; +inf for identical inputs.
    """
    _check_pair(x_hat, x_ref)
    mse = float(np.mean((rgb_to_y(x_hat) - rgb_to_y(x_ref)) ** 2))

    return math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)


def cap_psnr(value: float, cap: float = DefaultValuesAndOptions.get_psnr_cap()) -> float:
    return min(value, cap)


def eval_ssim_y(x_hat: np.ndarray, x_ref: np.ndarray) -> float:
    """
    Mean SSIM on the Y channel with an 11x11 Gaussian window (sigma 1.5), k1=0.01, k2=0.03, borders
    cropped to the fully covered region when the image is large enough.
    """
    _check_pair(x_hat, x_ref)
    a = rgb_to_y(x_hat)
    b = rgb_to_y(x_ref)

    def window(x):
        return ndimage.gaussian_filter(x, _SSIM_SIGMA, truncate=_SSIM_RADIUS / _SSIM_SIGMA, mode='reflect')

    mu_a, mu_b = window(a), window(b)
    var_a = window(a * a) - mu_a ** 2
    var_b = window(b * b) - mu_b ** 2
    cov = window(a * b) - mu_a * mu_b

    ssim_map = ((2 * mu_a * mu_b + _SSIM_C1) * (2 * cov + _SSIM_C2)) / \
               ((mu_a ** 2 + mu_b ** 2 + _SSIM_C1) * (var_a + var_b + _SSIM_C2))

    r = _SSIM_RADIUS
    if ssim_map.shape[-2] > 2 * r and ssim_map.shape[-1] > 2 * r:
        ssim_map = ssim_map[..., r:-r, r:-r]

    return float(np.clip(ssim_map.mean(), -1.0, 1.0))


def center_crop_protocol(x: np.ndarray, size: int = DefaultValuesAndOptions.get_eval_crop()) -> np.ndarray:
    """
    Central size x size window of a [..., H, W] image; the full image when it is smaller.
    """
    height, width = x.shape[-2:]
    crop_h, crop_w = min(size, height), min(size, width)
    top, left = (height - crop_h) // 2, (width - crop_w) // 2

    return x[..., top:top + crop_h, left:left + crop_w]


class LatencyTimer:
    """
    Collects wall-clock samples and reports their median in milliseconds.
    """

    def __init__(self):
        self.samples: list = []
        self.__start = None

    def __enter__(self):
        self.__start = time.perf_counter()

        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.samples.append((time.perf_counter() - self.__start) * 1000.0)

    def median_ms(self) -> float:
        return float(np.median(self.samples)) if self.samples else 0.0


def summarize(psnrs: Sequence[float], ssims: Sequence[float], params: int, macs: int, latency_ms: float,
              input_psnrs: Optional[Sequence[float]] = None) -> MetricsRecord:
    record = MetricsRecord(
        psnr_y=float(np.mean([cap_psnr(p) for p in psnrs])),
        ssim_y=float(np.mean(ssims)),
        params=int(params),
        macs=int(macs),
        latency_ms=latency_ms,
        input_psnr_y=float(np.mean([cap_psnr(p) for p in input_psnrs])) if input_psnrs else None,
        images=len(psnrs),
    )
    logging.debug(f"Metrics: {record}")

    return record
