import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

from onestep_sr.models.run_configs import CodecConfig
from onestep_sr.services.tensor_ops import Rng, gaussian_fill, matmul, resolve_dtype, check_finite


@dataclass(frozen=True)
class Latent:
    """
    Compact latent token grid.

    Attributes:
        data (np.ndarray): [B, C_lat, h, w] channels seen by the backbone.
        hidden (Optional[np.ndarray]): [B, 3*p*p - C_lat, h, w] remaining projection channels kept
            (in float64) so decode stays an exact inverse; None for backbone-only latents.
    """
    data: np.ndarray
    hidden: Optional[np.ndarray] = None

    @property
    def token_count(self) -> int:
        return self.data.shape[2] * self.data.shape[3]

    @property
    def grid(self) -> Tuple[int, int]:
        return self.data.shape[2], self.data.shape[3]

    def with_data(self, data: np.ndarray) -> 'Latent':
        if data.shape != self.data.shape:
            raise ValueError(f"Latent data shape {data.shape} differs from {self.data.shape}")

        return Latent(data, self.hidden)


def align_to_32(x: np.ndarray, patch: int = 32) -> Tuple[np.ndarray, Tuple[int, int]]:
    """
    Reflect-pads the right and bottom edges of a [B, 3, H, W] image to the next multiple of the patch size.

    Returns:
        Tuple[np.ndarray, Tuple[int, int]]: The padded image and the original (H, W) for `crop_to`.
    """
    if x.ndim != 4:
        raise ValueError(f"Expected a [B, 3, H, W] image, got shape {x.shape}")

    height, width = x.shape[2], x.shape[3]
    pad_h = (-height) % patch
    pad_w = (-width) % patch

    if pad_h == 0 and pad_w == 0:
        return x, (height, width)

    padded = np.pad(x, ((0, 0), (0, 0), (0, pad_h), (0, pad_w)), mode='reflect')

    return padded, (height, width)


def crop_to(x: np.ndarray, original_size: Tuple[int, int]) -> np.ndarray:
    height, width = original_size
    if height > x.shape[2] or width > x.shape[3]:
        raise ValueError(f"Cannot crop {x.shape[2]}x{x.shape[3]} image to larger size {height}x{width}")

    return x[:, :, :height, :width]


class LatentCodec:
    """
    Frozen, exactly invertible 32x compressor: space-to-depth followed by a seeded orthogonal projection.
    The first C_lat projected channels feed the backbone, the rest ride along inside `Latent.hidden`.

    Attributes:
        patch (int): Spatial compression factor.
        latent_channels (int): Backbone-facing channel count.
        dtype (np.dtype): dtype of `Latent.data` and decoded images.
    """
    patch: int
    latent_channels: int
    dtype: np.dtype

    def __init__(self, cfg: Optional[CodecConfig] = None, dtype: str = 'float32'):
        cfg = cfg or CodecConfig()

        self.patch = cfg.patch
        self.latent_channels = cfg.latent_channels
        self.dtype = resolve_dtype(dtype)
        self.__seed = cfg.seed

        full = 3 * self.patch * self.patch
        gaussian = gaussian_fill(Rng(cfg.seed, (0xC0DEC,)), (full, full), np.float64)
        q, r = scipy.linalg.qr(gaussian)
        q = q * np.sign(np.diag(r))[None, :]

        q.setflags(write=False)
        self.__projection = q

        logging.debug(f"Codec projection built: {full}x{full}, seed={cfg.seed}, C_lat={self.latent_channels}")

    @property
    def projection(self) -> np.ndarray:
        return self.__projection

    @property
    def seed(self) -> int:
        return self.__seed

    @property
    def full_channels(self) -> int:
        return 3 * self.patch * self.patch

    def __space_to_depth(self, x: np.ndarray) -> np.ndarray:
        batch, channels, height, width = x.shape
        h, w = height // self.patch, width // self.patch
        blocks = x.reshape(batch, channels, h, self.patch, w, self.patch)

        return blocks.transpose(0, 2, 4, 1, 3, 5).reshape(batch, h, w, channels * self.patch * self.patch)

    def __depth_to_space(self, vectors: np.ndarray) -> np.ndarray:
        batch, h, w, _ = vectors.shape
        blocks = vectors.reshape(batch, h, w, 3, self.patch, self.patch)

        return blocks.transpose(0, 3, 1, 4, 2, 5).reshape(batch, 3, h * self.patch, w * self.patch)

    def encode(self, x: np.ndarray) -> Latent:
        """
        Maps a [B, 3, H, W] image to its latent grid with h = H/32, w = W/32.

        Raises:
            ValueError: If the image is not 4-D RGB or H, W are not multiples of the patch size.
        """
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"Expected a [B, 3, H, W] image, got shape {x.shape}")
        if x.shape[2] % self.patch != 0 or x.shape[3] % self.patch != 0:
            raise ValueError(f"Image size {x.shape[2]}x{x.shape[3]} is not divisible by {self.patch}; "
                             f"align it first")

        vectors = self.__space_to_depth(np.asarray(x, dtype=np.float64))
        coefficients = matmul(vectors, self.__projection).transpose(0, 3, 1, 2)

        data = np.ascontiguousarray(coefficients[:, :self.latent_channels]).astype(self.dtype)
        hidden = np.ascontiguousarray(coefficients[:, self.latent_channels:])

        return Latent(data, hidden)

    def decode(self, z: Latent, clamp: bool = True) -> np.ndarray:
        """
        Inverse projection then depth-to-space. Hidden channels default to zero when the latent carries none.

        Args:
            z (Latent): Latent to decode.
            clamp (bool): Clamp the image to [0, 1]; the training loss path decodes unclamped.

        Raises:
            ValueError: If the channel count does not match the codec.
        """
        data = z.data
        if data.ndim != 4 or data.shape[1] != self.latent_channels:
            raise ValueError(f"Latent has {data.shape[1] if data.ndim == 4 else data.shape} channels, "
                             f"codec expects {self.latent_channels}")

        batch, _, h, w = data.shape
        hidden = z.hidden
        if hidden is None:
            hidden = np.zeros((batch, self.full_channels - self.latent_channels, h, w), dtype=np.float64)
        elif hidden.shape != (batch, self.full_channels - self.latent_channels, h, w):
            raise ValueError(f"Hidden channels {hidden.shape} do not match latent data {data.shape}")

        coefficients = np.concatenate([data.astype(np.float64), hidden], axis=1).transpose(0, 2, 3, 1)
        image = self.__depth_to_space(matmul(coefficients, self.__projection.T))

        if clamp:
            image = np.clip(image, 0.0, 1.0)

        return check_finite(image.astype(self.dtype), 'decode')

    def decode_backward(self, d_image: np.ndarray) -> np.ndarray:
        """
        Gradient of a scalar loss with respect to `Latent.data`, given its gradient with respect to the
        unclamped decoded image.
        """
        vectors = self.__space_to_depth(np.asarray(d_image, dtype=np.float64))
        d_coefficients = matmul(vectors, self.__projection)[..., :self.latent_channels]

        return np.ascontiguousarray(d_coefficients.transpose(0, 3, 1, 2)).astype(self.dtype)
