from typing import List, Tuple

import numpy as np

from onestep_sr.services.tensor_ops import Rng, gaussian_fill, matmul

_LAYER_WIDTHS = (16, 32, 64)
_LEAK = 0.2


def _patchify(h: np.ndarray) -> np.ndarray:
    batch, height, width, channels = h.shape
    blocks = h.reshape(batch, height // 2, 2, width // 2, 2, channels)

    return blocks.transpose(0, 1, 3, 2, 4, 5).reshape(batch, height // 2, width // 2, 4 * channels)


def _unpatchify(p: np.ndarray) -> np.ndarray:
    batch, height, width, channels4 = p.shape
    channels = channels4 // 4
    blocks = p.reshape(batch, height, width, 2, 2, channels)

    return blocks.transpose(0, 1, 3, 2, 4, 5).reshape(batch, 2 * height, 2 * width, channels)


class PerceptualExtractor:
    """
    Frozen seeded feature network standing in for a learned perceptual metric: three stride-2 2x2
    convolutions with leaky ReLU. The distance is the mean over layers of the mean squared feature gap.
    Images need sides divisible by 8.
    """

    def __init__(self, seed: int = 0, dtype=np.float64):
        rng = Rng(seed, (0x1F1F5,))
        weights = []
        fan_in = 3 * 4
        for layer, width in enumerate(_LAYER_WIDTHS):
            weight = (gaussian_fill(rng.split(layer), (fan_in, width), np.float64) / np.sqrt(fan_in)).astype(dtype)
            weight.setflags(write=False)
            weights.append(weight)
            fan_in = width * 4

        self.__weights: Tuple[np.ndarray, ...] = tuple(weights)

    def __features(self, x: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
        if x.ndim != 4 or x.shape[2] % 8 != 0 or x.shape[3] % 8 != 0:
            raise ValueError(f"Perceptual features need a [B, 3, H, W] image with sides divisible by 8, got {x.shape}")

        h = x.transpose(0, 2, 3, 1)
        layers = []
        for weight in self.__weights:
            patches = _patchify(h)
            pre = matmul(patches, weight.astype(x.dtype, copy=False))
            h = np.where(pre > 0, pre, _LEAK * pre)
            layers.append((patches, pre, h))

        return layers

    def distance(self, a: np.ndarray, b: np.ndarray) -> float:
        return self.distance_and_grad(a, b, need_grad=False)[0]

    def distance_and_grad(self, a: np.ndarray, b: np.ndarray, need_grad: bool = True):
        """
        Returns the distance and its gradient with respect to `a` (None when need_grad is False).
        """
        if a.shape != b.shape:
            raise ValueError(f"Perceptual distance needs matching shapes, got {a.shape} and {b.shape}")

        feats_a = self.__features(a)
        feats_b = self.__features(b)
        count = len(feats_a)

        value = sum(float(np.mean((fa[2] - fb[2]) ** 2)) for fa, fb in zip(feats_a, feats_b)) / count
        if not need_grad:
            return value, None

        d_h = np.zeros_like(feats_a[-1][2])
        for index in reversed(range(count)):
            patches, pre, post = feats_a[index]
            d_h = d_h + 2.0 * (post - feats_b[index][2]) / (post.size * count)
            d_pre = d_h * np.where(pre > 0, 1.0, _LEAK)
            d_patches = matmul(d_pre, self.__weights[index].T.astype(a.dtype, copy=False))
            d_h = _unpatchify(d_patches)

        return value, d_h.transpose(0, 3, 1, 2)
