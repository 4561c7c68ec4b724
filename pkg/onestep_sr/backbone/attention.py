from dataclasses import dataclass
from typing import Tuple

import numpy as np

from onestep_sr.services.tensor_ops import matmul, check_finite


@dataclass
class LinearAttentionCache:
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    q_feat: np.ndarray
    k_feat: np.ndarray
    kv: np.ndarray
    k_sum: np.ndarray
    denom: np.ndarray
    out: np.ndarray


@dataclass
class SoftmaxAttentionCache:
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    probs: np.ndarray
    scale: float


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def linear_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, eps_att: float
                     ) -> Tuple[np.ndarray, LinearAttentionCache]:
    """
    phi(Q) (phi(K)^T V) / (phi(Q) (phi(K)^T 1) + eps) with phi = ReLU, over [..., N, d_h] inputs.
    The d_h x d_h intermediate keeps the cost linear in N; no N x N matrix is formed.

    Raises:
        ValueError: If eps_att is not positive or there are no tokens.
        FloatingPointError: If the output is not finite.
    """
    if eps_att <= 0:
        raise ValueError(f"eps_att must be positive, got {eps_att}")
    if q.shape[-2] < 1:
        raise ValueError("linear_attention needs at least one token")

    q_feat = _relu(q)
    k_feat = _relu(k)

    kv = matmul(np.swapaxes(k_feat, -1, -2), v)
    k_sum = k_feat.sum(axis=-2)
    numerator = matmul(q_feat, kv)
    denom = matmul(q_feat, k_sum[..., :, None]) + eps_att
    out = check_finite(numerator / denom, 'linear_attention')

    return out, LinearAttentionCache(q, k, v, q_feat, k_feat, kv, k_sum, denom, out)


def linear_attention_backward(d_out: np.ndarray, cache: LinearAttentionCache
                              ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Reverse-mode gradients (dQ, dK, dV) of the quotient form.
    """
    d_num = d_out / cache.denom
    d_denom = -np.sum(d_out * cache.out, axis=-1, keepdims=True) / cache.denom

    d_q_feat = matmul(d_num, np.swapaxes(cache.kv, -1, -2)) + d_denom * cache.k_sum[..., None, :]
    d_kv = matmul(np.swapaxes(cache.q_feat, -1, -2), d_num)
    d_k_sum = matmul(np.swapaxes(cache.q_feat, -1, -2), d_denom)[..., 0]

    d_k_feat = matmul(cache.v, np.swapaxes(d_kv, -1, -2)) + d_k_sum[..., None, :]
    d_v = matmul(cache.k_feat, d_kv)

    return d_q_feat * (cache.q > 0), d_k_feat * (cache.k > 0), d_v


def quadratic_reference_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, eps_att: float) -> np.ndarray:
    """
    Explicit N x N form of the same kernel: rows of phi(Q) phi(K)^T normalized by row sum + eps, times V.
    """
    scores = matmul(_relu(q), np.swapaxes(_relu(k), -1, -2))

    return matmul(scores, v) / (scores.sum(axis=-1, keepdims=True) + eps_att)


def masked_softmax_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, mask: np.ndarray
                             ) -> Tuple[np.ndarray, SoftmaxAttentionCache]:
    """
    Softmax attention of queries [B, H, N, d_h] over text keys/values [B, H, T, d_h].
    Positions with mask [B, T] == 0 get -inf logits, so their key and value rows never reach the output.

    Raises:
        ValueError: If some condition has no unmasked token.
    """
    if np.any(mask.sum(axis=-1) == 0):
        raise ValueError("Cross-attention condition is fully masked")

    scale = 1.0 / np.sqrt(q.shape[-1])
    logits = matmul(q, np.swapaxes(k, -1, -2)) * scale
    logits = np.where(mask[:, None, None, :] > 0, logits, -np.inf)

    logits = logits - logits.max(axis=-1, keepdims=True)
    probs = np.exp(logits)
    probs = probs / probs.sum(axis=-1, keepdims=True)

    return matmul(probs, v), SoftmaxAttentionCache(q, k, v, probs, scale)


def masked_softmax_attention_backward(d_out: np.ndarray, cache: SoftmaxAttentionCache
                                      ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    d_probs = matmul(d_out, np.swapaxes(cache.v, -1, -2))
    d_v = matmul(np.swapaxes(cache.probs, -1, -2), d_out)
    d_logits = cache.probs * (d_probs - np.sum(d_probs * cache.probs, axis=-1, keepdims=True)) * cache.scale

    return matmul(d_logits, cache.k), matmul(np.swapaxes(d_logits, -1, -2), cache.q), d_v
