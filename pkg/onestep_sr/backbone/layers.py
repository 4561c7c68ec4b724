import math
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit

from onestep_sr.services.tensor_ops import matmul

_GELU_K = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


def linear(x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """
    y = x W^T + b for weight [d_out, d_in] and x [..., d_in].
    """
    y = matmul(x, weight.T)
    if bias is not None:
        y = y + bias

    return y


def linear_backward(dy: np.ndarray, x: np.ndarray, weight: np.ndarray, need_param_grads: bool = True):
    """
    Returns (dx, dW, db); dW and db are None when parameter gradients are not needed.
    """
    dx = matmul(dy, weight)
    if not need_param_grads:
        return dx, None, None

    dy_flat = dy.reshape(-1, dy.shape[-1])
    x_flat = x.reshape(-1, x.shape[-1])

    return dx, matmul(dy_flat.T, x_flat), dy_flat.sum(axis=0)


def rms_norm(x: np.ndarray, eps: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Weightless RMS normalization over the last axis. Returns the output and the reciprocal RMS.
    """
    r = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)

    return x * r, r


def rms_norm_backward(dy: np.ndarray, x: np.ndarray, r: np.ndarray) -> np.ndarray:
    width = x.shape[-1]

    return r * dy - (r ** 3 / width) * x * np.sum(dy * x, axis=-1, keepdims=True)


def silu(x: np.ndarray) -> np.ndarray:
    return x * expit(x)


def silu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    sig = expit(x)

    return dy * sig * (1.0 + x * (1.0 - sig))


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_K * (x + _GELU_C * x ** 3)))


def gelu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    th = np.tanh(_GELU_K * (x + _GELU_C * x ** 3))
    derivative = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * _GELU_K * (1.0 + 3.0 * _GELU_C * x * x)

    return dy * derivative


def timestep_embedding(t: np.ndarray, width: int, max_period: float = 10000.0) -> np.ndarray:
    """
    Sinusoidal embedding [B, width] of integer timesteps t [B]: cosines then sines.
    """
    half = width // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half, dtype=np.float64) / max(half, 1))
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=-1)

    if width % 2:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=-1)

    return emb


def positional_encoding_2d(height: int, width: int, channels: int, max_period: float = 10000.0) -> np.ndarray:
    """
    Fixed 2-D sinusoidal table [height * width, channels], row-major token order.
    The first half of the channels encodes the row index, the second half the column index.
    """
    quarter = channels // 4
    freqs = np.exp(-math.log(max_period) * np.arange(quarter, dtype=np.float64) / max(quarter, 1))

    rows = np.repeat(np.arange(height, dtype=np.float64), width)[:, None] * freqs[None, :]
    cols = np.tile(np.arange(width, dtype=np.float64), height)[:, None] * freqs[None, :]
    table = np.concatenate([np.sin(rows), np.cos(rows), np.sin(cols), np.cos(cols)], axis=-1)

    if table.shape[1] < channels:
        table = np.concatenate([table, np.zeros((table.shape[0], channels - table.shape[1]))], axis=-1)

    return table
