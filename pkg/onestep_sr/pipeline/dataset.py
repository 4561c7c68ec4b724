import hashlib
import logging
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from onestep_sr.models.run_configs import DegradationConfig
from onestep_sr.pipeline.degradation import synthesize_degradation
from onestep_sr.services.tensor_ops import Rng

_HQ_KEY = 0x4851
_PAIR_KEY = 0x5041


@dataclass
class ImagePair:
    """
    Degraded input and its reference, both [3, H, W] at the same resolution.
    """
    x_L: np.ndarray
    x_H: np.ndarray


def _procedural_image(rng: Rng, height: int, width: int) -> np.ndarray:
    yy, xx = np.meshgrid(np.linspace(0.0, 1.0, height), np.linspace(0.0, 1.0, width), indexing='ij')
    image = np.zeros((3, height, width))

    base = rng.uniform(3, 0.1, 0.9)
    slope = rng.uniform((3, 2), -0.5, 0.5)
    for channel in range(3):
        image[channel] = base[channel] + slope[channel, 0] * (yy - 0.5) + slope[channel, 1] * (xx - 0.5)

    for _ in range(int(rng.integers(2, 4))):
        freq = rng.uniform(2, 2.0, 24.0)
        phase = rng.uniform((), 0.0, 2 * np.pi)
        amp = rng.uniform(3, 0.03, 0.15)
        wave = np.sin(2 * np.pi * (freq[0] * yy + freq[1] * xx) + phase)
        image += amp[:, None, None] * wave[None]

    for _ in range(int(rng.integers(2, 6))):
        top, left = int(rng.integers(0, height - 2)), int(rng.integers(0, width - 2))
        bottom = min(height, top + int(rng.integers(2, max(3, height // 2))))
        right = min(width, left + int(rng.integers(2, max(3, width // 2))))
        image[:, top:bottom, left:right] = rng.uniform(3, 0.0, 1.0)[:, None, None]

    image += rng.uniform((), 0.01, 0.05) * rng.normal((3, height, width))

    return np.clip(image, 0.0, 1.0)


def image_digest(x: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(x).tobytes()).hexdigest()


def deduplicate(images: Sequence[np.ndarray]) -> List[np.ndarray]:
    """
    Drops images whose bytes repeat an earlier image (SHA-256 of the raw buffer), keeping first occurrences.
    """
    seen = set()
    unique = []
    for image in images:
        digest = image_digest(image)
        if digest not in seen:
            seen.add(digest)
            unique.append(image)

    if len(unique) != len(images):
        logging.info(f"Removed {len(images) - len(unique)} duplicate images")

    return unique


def generate_toy_dataset(n: int, shape: Tuple[int, int], seed: int, dtype=np.float32,
                         executor: Optional[Executor] = None) -> List[np.ndarray]:
    """
    Procedural HQ images [3, H, W] in [0, 1]: seeded gradients, sinusoids, rectangles and texture noise.
    Sample i only depends on (seed, i), so a worker pool yields the same dataset as a serial loop.

    Raises:
        ValueError: If n < 1 or the shape is smaller than 4x4.
    """
    if n < 1:
        raise ValueError(f"Dataset size must be >= 1, got {n}")
    height, width = shape
    if height < 4 or width < 4:
        raise ValueError(f"Image shape must be at least 4x4, got {shape}")

    root = Rng(seed, (_HQ_KEY,))

    def make(index: int) -> np.ndarray:
        return _procedural_image(root.split(index), height, width).astype(dtype)

    images = list(executor.map(make, range(n))) if executor is not None else [make(i) for i in range(n)]

    return deduplicate(images)


class PairedDataset:
    """
    HQ pool plus on-the-fly degradation of random crops. Crop offsets and degradation parameters come from
    per-sample streams derived from (seed, step, index).
    """
    images: List[np.ndarray]
    degradation: DegradationConfig

    def __init__(self, images: Sequence[np.ndarray], degradation: DegradationConfig, seed: int,
                 executor: Optional[Executor] = None):
        if not images:
            raise ValueError("PairedDataset needs at least one image")

        self.images = list(images)
        self.degradation = degradation
        self.__seed = seed
        self.__executor = executor

    def __len__(self) -> int:
        return len(self.images)

    def sample(self, step: int, batch: int, crop: int) -> Tuple[np.ndarray, np.ndarray]:
        """
        Returns (x_L, x_H) batches [B, 3, crop, crop] for a training step.
        """
        stream = Rng(self.__seed, (_PAIR_KEY, step))

        def make(index: int) -> Tuple[np.ndarray, np.ndarray]:
            rng = stream.split(index)
            image = self.images[int(rng.integers(0, len(self.images) - 1))]
            height, width = image.shape[1:]
            if height < crop or width < crop:
                raise ValueError(f"Image {height}x{width} smaller than crop {crop}")

            top = int(rng.integers(0, height - crop))
            left = int(rng.integers(0, width - crop))
            x_H = image[:, top:top + crop, left:left + crop]
            degradation_rng = Rng(self.degradation.seed, (_PAIR_KEY, step, index))

            return synthesize_degradation(x_H, self.degradation, degradation_rng), x_H

        if self.__executor is not None:
            pairs = list(self.__executor.map(make, range(batch)))
        else:
            pairs = [make(index) for index in range(batch)]

        return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


def make_eval_pairs(images: Sequence[np.ndarray], degradation: DegradationConfig, key: int = 0) -> List[ImagePair]:
    """
    Fixed degraded/reference pairs over full images for validation, calibration and benchmarks.
    """
    return [ImagePair(synthesize_degradation(image, degradation, Rng(degradation.seed, (_PAIR_KEY, key, index))),
                      image)
            for index, image in enumerate(images)]
