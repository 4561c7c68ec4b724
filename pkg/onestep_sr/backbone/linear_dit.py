import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from onestep_sr.backbone.attention import (linear_attention, linear_attention_backward, masked_softmax_attention,
                                           masked_softmax_attention_backward, quadratic_reference_attention,
                                           LinearAttentionCache, SoftmaxAttentionCache)
from onestep_sr.backbone.layers import (linear, linear_backward, rms_norm, rms_norm_backward, silu, silu_backward,
                                        gelu, gelu_backward, timestep_embedding, positional_encoding_2d)
from onestep_sr.backbone.lora import LoraSet, LORA_A_SUFFIX, LORA_B_SUFFIX, create_lora_set, merge_lora_set
from onestep_sr.models.backbone_config import BackboneConfig, LoraConfig
from onestep_sr.services.latent_codec import Latent
from onestep_sr.services.prompt_engine import PromptCondition
from onestep_sr.services.scheduler import Scheduler
from onestep_sr.services.tensor_ops import Rng, gaussian_fill, matmul, resolve_dtype

ATTENTION_KERNELS = ('linear', 'quadratic')
# Parameters outside every block; their sizes make up P_fix. The positional table is computed, not stored.
FIXED_PREFIXES = ('patch_in.', 'patch_out.', 'time_mlp.')

_SELF_PROJECTIONS = ('to_q', 'to_k', 'to_v')
_DAMPED_GAIN = 0.1


@dataclass
class _BlockCache:
    shift_scale: Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
    x_self: np.ndarray
    norm_self: np.ndarray
    rms_self: np.ndarray
    self_attn: Optional[LinearAttentionCache]
    x_cross: np.ndarray
    rms_cross: np.ndarray
    cross_attn: SoftmaxAttentionCache
    x_ffn: np.ndarray
    norm_ffn: np.ndarray
    rms_ffn: np.ndarray
    ffn_hidden: np.ndarray


@dataclass
class Tape:
    """
    Activations cached by one forward pass.

    Attributes:
        mode (str): "dense" (all parameters trainable), "lora" (only adapter factors) or "frozen" (f_0, none).
    """
    mode: str
    attention: str
    weights: Dict[str, np.ndarray]
    adapters: Optional[LoraSet]
    latent_shape: Tuple[int, ...]
    linear_inputs: Dict[str, Tuple[np.ndarray, Optional[np.ndarray]]] = field(default_factory=dict)
    blocks: List[_BlockCache] = field(default_factory=list)
    time_hidden: Optional[np.ndarray] = None
    time_out: Optional[np.ndarray] = None
    x_final: Optional[np.ndarray] = None
    rms_final: Optional[np.ndarray] = None


@dataclass
class Gradients:
    """
    Attributes:
        params (Dict[str, np.ndarray]): Gradients of the trainable tensors of the forward's mode.
        latent (np.ndarray): Gradient with respect to the input latent.
    """
    params: Dict[str, np.ndarray]
    latent: np.ndarray


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    batch, tokens, width = x.shape

    return x.reshape(batch, tokens, heads, width // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    batch, heads, tokens, head_width = x.shape

    return x.transpose(0, 2, 1, 3).reshape(batch, tokens, heads * head_width)


def parameter_shapes(cfg: BackboneConfig) -> Dict[str, Tuple[int, ...]]:
    """
    Name -> shape of every dense parameter, in canonical order. Weights are [d_out, d_in].
    """
    width = cfg.width
    shapes: Dict[str, Tuple[int, ...]] = {}

    def dense(name: str, d_out: int, d_in: int, bias: bool = True):
        shapes[f'{name}.weight'] = (d_out, d_in)
        if bias:
            shapes[f'{name}.bias'] = (d_out,)

    dense('patch_in', width, cfg.latent_channels)
    dense('time_mlp.fc1', width, width)
    dense('time_mlp.fc2', width, width)

    for block in range(cfg.num_blocks):
        prefix = f'blocks.{block}'
        dense(f'{prefix}.modulation', 4 * width, width)
        for projection in _SELF_PROJECTIONS:
            dense(f'{prefix}.self_attn.{projection}', width, width, bias=False)
        dense(f'{prefix}.self_attn.to_out', width, width)
        dense(f'{prefix}.cross_attn.to_q', width, width, bias=False)
        dense(f'{prefix}.cross_attn.to_k', width, cfg.text_width, bias=False)
        dense(f'{prefix}.cross_attn.to_v', width, cfg.text_width, bias=False)
        dense(f'{prefix}.cross_attn.to_out', width, width)
        dense(f'{prefix}.ffn.fc1', cfg.ffn_width, width)
        dense(f'{prefix}.ffn.fc2', width, cfg.ffn_width)

    dense('patch_out', cfg.latent_channels, width)

    return shapes


def init_prior_params(cfg: BackboneConfig, dtype: str = 'float32') -> Dict[str, np.ndarray]:
    """
    Seeded toy prior: Gaussian weights scaled by 1/sqrt(fan_in), zero biases, damped modulation and output maps.
    """
    rng = Rng(cfg.seed, (0xD17,))
    np_dtype = resolve_dtype(dtype)
    params: Dict[str, np.ndarray] = {}

    for index, (name, shape) in enumerate(parameter_shapes(cfg).items()):
        if name.endswith('.bias'):
            params[name] = np.zeros(shape, dtype=np_dtype)
            continue

        gain = _DAMPED_GAIN if name.endswith(('patch_out.weight', 'modulation.weight')) else 1.0
        weight = gaussian_fill(rng.split(index), shape, np.float64) * gain / np.sqrt(shape[1])
        params[name] = weight.astype(np_dtype)

    return params


def _freeze(params: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    frozen = {}
    for name, value in params.items():
        copy = value.copy()
        copy.setflags(write=False)
        frozen[name] = copy

    return frozen


def _renumber(params: Dict[str, np.ndarray], mapping: Dict[int, int]) -> Dict[str, np.ndarray]:
    """
    Keeps non-block entries and the blocks in `mapping` (old position -> new position).
    """
    result = {}
    for name, value in params.items():
        if name.startswith('blocks.'):
            _, index, rest = name.split('.', 2)
            if int(index) not in mapping:
                continue
            name = f'blocks.{mapping[int(index)]}.{rest}'
        result[name] = value

    return result


class LinearDiT:
    """
    Linear-attention diffusion transformer predicting a latent residual.

    Attributes:
        cfg (BackboneConfig): Topology; num_blocks reflects pruning.
        dtype (np.dtype): Compute and parameter dtype.
        params (Dict[str, np.ndarray]): Trainable/dense weights W (f_theta without adapters).
        adapters (Optional[LoraSet]): LoRA factors applied on top of params.
        kept_blocks (Tuple[int, ...]): 1-based indices of the unpruned model the blocks come from.
        forward_calls (int): Number of forward evaluations, for the one-step contract.
        last_tape (Optional[Tape]): Activations of the latest forward.
    """
    cfg: BackboneConfig
    dtype: np.dtype
    params: Dict[str, np.ndarray]
    adapters: Optional[LoraSet]
    kept_blocks: Tuple[int, ...]
    forward_calls: int
    last_tape: Optional[Tape]

    def __init__(self, cfg: Optional[BackboneConfig] = None, dtype: str = 'float32',
                 params: Optional[Dict[str, np.ndarray]] = None,
                 frozen_copy: Optional[Dict[str, np.ndarray]] = None,
                 adapters: Optional[LoraSet] = None,
                 kept_blocks: Optional[Sequence[int]] = None):
        self.cfg = cfg or BackboneConfig()
        self.dtype = resolve_dtype(dtype)
        self.params = params if params is not None else init_prior_params(self.cfg, dtype)
        self.__frozen = frozen_copy if frozen_copy is not None else _freeze(self.params)
        self.adapters = adapters
        self.kept_blocks = tuple(kept_blocks) if kept_blocks is not None else tuple(range(1, self.cfg.num_blocks + 1))
        self.forward_calls = 0
        self.last_tape = None
        self.__pos_cache: Dict[Tuple[int, int], np.ndarray] = {}

        if len(self.kept_blocks) != self.cfg.num_blocks:
            raise ValueError(f"kept_blocks {self.kept_blocks} does not match num_blocks {self.cfg.num_blocks}")

    @property
    def frozen_copy(self) -> Dict[str, np.ndarray]:
        return self.__frozen

    @property
    def num_blocks(self) -> int:
        return self.cfg.num_blocks

    @property
    def eps_att(self) -> float:
        return self.cfg.resolve_eps_att(self.dtype.name)

    # ------------------------------------------------------------------ counts

    def parameter_count(self) -> int:
        return sum(value.size for value in self.params.values())

    def fixed_parameter_count(self) -> int:
        """
        P_fix of the pruning budget: patch_in, patch_out and time_mlp parameters, which no selection removes.
        """
        return sum(value.size for name, value in self.params.items() if name.startswith(FIXED_PREFIXES))

    def block_parameter_names(self, block: int) -> List[str]:
        prefix = f'blocks.{block}.'

        return [name for name in self.params if name.startswith(prefix)]

    def block_parameter_count(self, block: int) -> int:
        """
        Parameter count P_l of the block at 0-based position `block`.
        """
        return sum(self.params[name].size for name in self.block_parameter_names(block))

    # ------------------------------------------------------------------ adapters

    def inject_lora(self, cfg: Optional[LoraConfig] = None, rng: Optional[Rng] = None) -> 'LinearDiT':
        """
        Attaches fresh adapters (A ~ N(0, 1/r), B = 0) to the configured projections.

        Raises:
            RuntimeError: If adapters are already present.
        """
        if self.adapters is not None:
            raise RuntimeError("LoRA adapters are already injected")

        self.adapters = create_lora_set(self.params, self.num_blocks, cfg or LoraConfig(),
                                        rng or Rng(self.cfg.seed, (0x10AA,)))

        return self

    def merge_lora(self) -> 'LinearDiT':
        """
        Returns the dense model with W = W_0 + (alpha / r) B A and no adapters; the frozen prior is shared.

        Raises:
            RuntimeError: If there are no adapters to merge.
        """
        if self.adapters is None:
            raise RuntimeError("No LoRA adapters to merge")

        merged = LinearDiT(self.cfg, self.dtype.name, merge_lora_set(self.params, self.adapters),
                           self.__frozen, None, self.kept_blocks)
        logging.info(f"LoRA merged into {len(self.adapters.prefixes)} projections")

        return merged

    def with_adapters(self, adapters: Optional[LoraSet]) -> 'LinearDiT':
        """
        Shallow view sharing params and the frozen prior but using other adapters (e.g. the EMA copy).
        """
        return LinearDiT(self.cfg, self.dtype.name, self.params, self.__frozen, adapters, self.kept_blocks)

    def copy(self) -> 'LinearDiT':
        return LinearDiT(self.cfg, self.dtype.name, {k: v.copy() for k, v in self.params.items()}, self.__frozen,
                         self.adapters.copy() if self.adapters is not None else None, self.kept_blocks)

    def trainable_parameters(self) -> Dict[str, np.ndarray]:
        if self.adapters is not None:
            return dict(self.adapters.named_parameters())

        return dict(self.params)

    # ------------------------------------------------------------------ pruning

    def remove_blocks(self, keep: Sequence[int]) -> 'LinearDiT':
        """
        New backbone holding only the kept blocks (1-based, original order); patch maps and the timestep MLP stay.

        Raises:
            ValueError: If an index is out of range or block 1 / block L is missing.
        """
        keep = sorted(set(int(k) for k in keep))
        last = self.num_blocks
        if any(k < 1 or k > last for k in keep):
            raise ValueError(f"Kept blocks {keep} must lie in [1, {last}]")
        if 1 not in keep or last not in keep:
            raise ValueError(f"Kept blocks {keep} must retain the first and last block (1 and {last})")

        mapping = {old - 1: new for new, old in enumerate(keep)}
        adapters = None
        if self.adapters is not None:
            adapters = LoraSet(self.adapters.rank, self.adapters.alpha,
                               _renumber(self.adapters.a, mapping), _renumber(self.adapters.b, mapping))

        pruned = LinearDiT(dataclasses.replace(self.cfg, num_blocks=len(keep)), self.dtype.name,
                           _renumber(self.params, mapping), _renumber(self.__frozen, mapping), adapters,
                           [self.kept_blocks[k - 1] for k in keep])
        logging.info(f"Blocks kept {pruned.kept_blocks}: {self.parameter_count()} -> {pruned.parameter_count()} params")

        return pruned

    # ------------------------------------------------------------------ forward

    def __positional(self, height: int, width: int) -> np.ndarray:
        key = (height, width)
        if key not in self.__pos_cache:
            self.__pos_cache[key] = positional_encoding_2d(height, width, self.cfg.width).astype(self.dtype)

        return self.__pos_cache[key]

    @staticmethod
    def __linear(tape: Tape, x: np.ndarray, prefix: str) -> np.ndarray:
        y = linear(x, tape.weights[f'{prefix}.weight'], tape.weights.get(f'{prefix}.bias'))
        x_a = None

        adapters = tape.adapters
        if adapters is not None and prefix in adapters.a:
            x_a = matmul(x, adapters.a[prefix].T)
            y = y + adapters.scale * matmul(x_a, adapters.b[prefix].T)

        tape.linear_inputs[prefix] = (x, x_a)

        return y

    def forward(self, z: Union[np.ndarray, Latent], t, cond: PromptCondition, use_adapters: bool = True,
                attention: str = 'linear') -> np.ndarray:
        """
        Predicts the latent residual for z [B, C_lat, h, w] at timestep t under the text condition.

        Args:
            z: Latent grid (a `Latent` or its data array).
            t: Integer timestep or one per sample, within [0, T].
            cond (PromptCondition): Single or batched condition.
            use_adapters (bool): True evaluates f_theta (params plus adapters), False the frozen prior f_0.
            attention (str): "linear", or "quadratic" for the explicit N x N reference kernel (no backward).

        Returns:
            np.ndarray: Residual with the shape of z.

        Raises:
            ValueError: On shape, timestep or kernel mismatch.
            FloatingPointError: On non-finite activations.
        """
        if isinstance(z, Latent):
            z = z.data
        cfg = self.cfg
        if z.ndim != 4 or z.shape[1] != cfg.latent_channels:
            raise ValueError(f"Expected a latent [B, {cfg.latent_channels}, h, w], got {z.shape}")
        if attention not in ATTENTION_KERNELS:
            raise ValueError(f'Unknown attention kernel "{attention}"')

        batch, channels, height, width = z.shape
        tokens = height * width
        steps = np.broadcast_to(np.asarray(t), (batch,))
        if np.any(steps < 0) or np.any(steps > cfg.sched_horizon):
            raise ValueError(f"Timestep {t} outside [0, {cfg.sched_horizon}]")

        cond = cond.batched(batch)
        if cond.c.shape[-1] != cfg.text_width:
            raise ValueError(f"Condition width {cond.c.shape[-1]} differs from text_width {cfg.text_width}")

        if use_adapters:
            tape = Tape('lora' if self.adapters is not None else 'dense', attention, self.params, self.adapters,
                        z.shape)
        else:
            tape = Tape('frozen', attention, self.__frozen, None, z.shape)

        self.forward_calls += 1
        heads = cfg.num_heads
        dtype = self.dtype
        text = cond.c.astype(dtype, copy=False)

        x = z.reshape(batch, channels, tokens).transpose(0, 2, 1).astype(dtype)
        x = self.__linear(tape, x, 'patch_in') + self.__positional(height, width)

        tape.time_hidden = self.__linear(tape, timestep_embedding(steps, cfg.width).astype(dtype), 'time_mlp.fc1')
        tape.time_out = self.__linear(tape, silu(tape.time_hidden), 'time_mlp.fc2')
        time_features = silu(tape.time_out)

        for block in range(self.num_blocks):
            prefix = f'blocks.{block}'
            shift1, scale1, shift2, scale2 = np.split(self.__linear(tape, time_features, f'{prefix}.modulation'),
                                                      4, axis=-1)

            x_self = x
            norm_self, rms_self = rms_norm(x, cfg.eps_norm)
            hidden = norm_self * (1.0 + scale1[:, None, :]) + shift1[:, None, :]
            q, k, v = (_split_heads(self.__linear(tape, hidden, f'{prefix}.self_attn.{name}'), heads)
                       for name in _SELF_PROJECTIONS)
            if attention == 'linear':
                attended, self_cache = linear_attention(q, k, v, self.eps_att)
            else:
                attended, self_cache = quadratic_reference_attention(q, k, v, self.eps_att), None
            x = x + self.__linear(tape, _merge_heads(attended), f'{prefix}.self_attn.to_out')

            x_cross = x
            norm_cross, rms_cross = rms_norm(x, cfg.eps_norm)
            q = _split_heads(self.__linear(tape, norm_cross, f'{prefix}.cross_attn.to_q'), heads)
            k = _split_heads(self.__linear(tape, text, f'{prefix}.cross_attn.to_k'), heads)
            v = _split_heads(self.__linear(tape, text, f'{prefix}.cross_attn.to_v'), heads)
            attended, cross_cache = masked_softmax_attention(q, k, v, cond.m)
            x = x + self.__linear(tape, _merge_heads(attended), f'{prefix}.cross_attn.to_out')

            x_ffn = x
            norm_ffn, rms_ffn = rms_norm(x, cfg.eps_norm)
            ffn_hidden = self.__linear(tape, norm_ffn * (1.0 + scale2[:, None, :]) + shift2[:, None, :],
                                       f'{prefix}.ffn.fc1')
            x = x + self.__linear(tape, gelu(ffn_hidden), f'{prefix}.ffn.fc2')

            tape.blocks.append(_BlockCache((shift1, scale1, shift2, scale2), x_self, norm_self, rms_self, self_cache,
                                           x_cross, rms_cross, cross_cache, x_ffn, norm_ffn, rms_ffn, ffn_hidden))

        tape.x_final = x
        norm_final, tape.rms_final = rms_norm(x, cfg.eps_norm)
        out = self.__linear(tape, norm_final, 'patch_out')

        self.last_tape = tape

        return out.transpose(0, 2, 1).reshape(batch, channels, height, width)

    # ------------------------------------------------------------------ backward

    @staticmethod
    def __linear_back(tape: Tape, grads: Dict[str, np.ndarray], dy: np.ndarray, prefix: str) -> np.ndarray:
        x, x_a = tape.linear_inputs[prefix]
        dense = tape.mode == 'dense'

        dx, d_weight, d_bias = linear_backward(dy, x, tape.weights[f'{prefix}.weight'], dense)
        if dense:
            grads[f'{prefix}.weight'] = d_weight
            if f'{prefix}.bias' in tape.weights:
                grads[f'{prefix}.bias'] = d_bias

        if x_a is not None:
            adapters = tape.adapters
            d_x_a = adapters.scale * matmul(dy, adapters.b[prefix])
            dx = dx + matmul(d_x_a, adapters.a[prefix])

            dy_flat = dy.reshape(-1, dy.shape[-1])
            grads[f'{prefix}.{LORA_B_SUFFIX}'] = adapters.scale * matmul(dy_flat.T, x_a.reshape(-1, x_a.shape[-1]))
            grads[f'{prefix}.{LORA_A_SUFFIX}'] = matmul(d_x_a.reshape(-1, d_x_a.shape[-1]).T,
                                                        x.reshape(-1, x.shape[-1]))

        return dx

    def backward(self, upstream: np.ndarray, tape: Optional[Tape] = None) -> Gradients:
        """
        Reverse-mode pass through a cached forward.

        Args:
            upstream (np.ndarray): d loss / d output, shaped like the latent.
            tape (Optional[Tape]): Forward record; defaults to the latest forward of this backbone.

        Returns:
            Gradients: Adapter factor gradients in adapter mode, every parameter in dense mode, none for the
            frozen prior; always the latent input gradient.

        Raises:
            RuntimeError: Without a cached forward, or for a quadratic-kernel forward.
            ValueError: If the upstream shape differs from the forward output.
        """
        tape = tape or self.last_tape
        if tape is None:
            raise RuntimeError("backward called without a cached forward pass")
        if tape.attention != 'linear':
            raise RuntimeError("backward is only available for the linear attention kernel")
        if upstream.shape != tape.latent_shape:
            raise ValueError(f"Upstream gradient {upstream.shape} differs from forward output {tape.latent_shape}")

        batch, channels, height, width = tape.latent_shape
        heads = self.cfg.num_heads
        grads: Dict[str, np.ndarray] = {}
        dense = tape.mode == 'dense'

        d_out = upstream.reshape(batch, channels, height * width).transpose(0, 2, 1).astype(self.dtype)
        d_norm = self.__linear_back(tape, grads, d_out, 'patch_out')
        dx = rms_norm_backward(d_norm, tape.x_final, tape.rms_final)
        d_time = np.zeros_like(tape.time_out)

        for block in reversed(range(len(tape.blocks))):
            prefix = f'blocks.{block}'
            cache = tape.blocks[block]
            shift1, scale1, shift2, scale2 = cache.shift_scale

            d_hidden = gelu_backward(self.__linear_back(tape, grads, dx, f'{prefix}.ffn.fc2'), cache.ffn_hidden)
            d_mod_in = self.__linear_back(tape, grads, d_hidden, f'{prefix}.ffn.fc1')
            d_scale2 = np.sum(d_mod_in * cache.norm_ffn, axis=1)
            d_shift2 = np.sum(d_mod_in, axis=1)
            dx = dx + rms_norm_backward(d_mod_in * (1.0 + scale2[:, None, :]), cache.x_ffn, cache.rms_ffn)

            d_attended = _split_heads(self.__linear_back(tape, grads, dx, f'{prefix}.cross_attn.to_out'), heads)
            dq, dk, dv = masked_softmax_attention_backward(d_attended, cache.cross_attn)
            d_norm = self.__linear_back(tape, grads, _merge_heads(dq), f'{prefix}.cross_attn.to_q')
            self.__linear_back(tape, grads, _merge_heads(dk), f'{prefix}.cross_attn.to_k')
            self.__linear_back(tape, grads, _merge_heads(dv), f'{prefix}.cross_attn.to_v')
            dx = dx + rms_norm_backward(d_norm, cache.x_cross, cache.rms_cross)

            d_attended = _split_heads(self.__linear_back(tape, grads, dx, f'{prefix}.self_attn.to_out'), heads)
            dq, dk, dv = linear_attention_backward(d_attended, cache.self_attn)
            d_mod_in = sum(self.__linear_back(tape, grads, _merge_heads(d), f'{prefix}.self_attn.{name}')
                           for d, name in zip((dq, dk, dv), _SELF_PROJECTIONS))
            d_scale1 = np.sum(d_mod_in * cache.norm_self, axis=1)
            d_shift1 = np.sum(d_mod_in, axis=1)
            dx = dx + rms_norm_backward(d_mod_in * (1.0 + scale1[:, None, :]), cache.x_self, cache.rms_self)

            if dense:
                d_mod = np.concatenate([d_shift1, d_scale1, d_shift2, d_scale2], axis=-1)
                d_time = d_time + self.__linear_back(tape, grads, d_mod, f'{prefix}.modulation')

        if dense:
            d_time = silu_backward(d_time, tape.time_out)
            d_time = silu_backward(self.__linear_back(tape, grads, d_time, 'time_mlp.fc2'), tape.time_hidden)
            self.__linear_back(tape, grads, d_time, 'time_mlp.fc1')

        d_tokens = self.__linear_back(tape, grads, dx, 'patch_in')
        d_latent = d_tokens.transpose(0, 2, 1).reshape(batch, channels, height, width)

        return Gradients(grads, d_latent)

    # ------------------------------------------------------------------ one-step restoration

    def restore(self, z_L: Latent, tau_g: int, cond: PromptCondition, scheduler: Scheduler) -> Latent:
        """
        z_hat = z_L - sigma(tau_g) * f_theta(z_L, tau_g, c, m): one forward evaluation, no iteration.
        """
        residual = self.forward(z_L.data, tau_g, cond, use_adapters=True)

        return z_L.with_data((z_L.data - scheduler.sigma(tau_g) * residual).astype(z_L.data.dtype, copy=False))


def one_step_restore(state: LinearDiT, z_L: Latent, tau_g: int, cond: PromptCondition,
                     scheduler: Scheduler) -> Latent:
    return state.restore(z_L, tau_g, cond, scheduler)
