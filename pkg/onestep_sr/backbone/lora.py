import logging
from dataclasses import dataclass, field
from typing import Dict, List, Iterator, Tuple

import numpy as np

from onestep_sr.models.backbone_config import LoraConfig
from onestep_sr.services.tensor_ops import Rng, gaussian_fill

LORA_A_SUFFIX = 'lora_A'
LORA_B_SUFFIX = 'lora_B'


@dataclass
class LoraSet:
    """
    Low-rank factors keyed by projection prefix, e.g. "blocks.0.self_attn.to_q".

    Attributes:
        rank (int): Adapter rank r.
        alpha (float): Scaling coefficient; the weight delta is (alpha / r) * B @ A.
        a (Dict[str, np.ndarray]): A factors, [r, d_in].
        b (Dict[str, np.ndarray]): B factors, [d_out, r].
    """
    rank: int
    alpha: float
    a: Dict[str, np.ndarray] = field(default_factory=dict)
    b: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    @property
    def prefixes(self) -> List[str]:
        return list(self.a.keys())

    def delta(self, prefix: str) -> np.ndarray:
        return self.scale * (self.b[prefix] @ self.a[prefix])

    def named_parameters(self) -> Iterator[Tuple[str, np.ndarray]]:
        for prefix in self.a:
            yield f'{prefix}.{LORA_A_SUFFIX}', self.a[prefix]
            yield f'{prefix}.{LORA_B_SUFFIX}', self.b[prefix]

    def get(self, name: str) -> np.ndarray:
        prefix, suffix = name.rsplit('.', 1)
        if suffix == LORA_A_SUFFIX and prefix in self.a:
            return self.a[prefix]
        if suffix == LORA_B_SUFFIX and prefix in self.b:
            return self.b[prefix]

        raise ValueError(f'Unknown adapter parameter "{name}"')

    def set(self, name: str, value: np.ndarray):
        current = self.get(name)
        if current.shape != value.shape:
            raise ValueError(f'Adapter parameter "{name}" has shape {current.shape}, got {value.shape}')

        prefix, suffix = name.rsplit('.', 1)
        (self.a if suffix == LORA_A_SUFFIX else self.b)[prefix] = value

    def copy(self) -> 'LoraSet':
        return LoraSet(self.rank, self.alpha,
                       {k: v.copy() for k, v in self.a.items()},
                       {k: v.copy() for k, v in self.b.items()})

    def parameter_count(self) -> int:
        return sum(value.size for _, value in self.named_parameters())


def create_lora_set(params: Dict[str, np.ndarray], num_blocks: int, cfg: LoraConfig, rng: Rng) -> LoraSet:
    """
    A ~ N(0, 1/r) and B = 0 for every configured projection of every block, so the initial delta is zero.

    Raises:
        ValueError: If a target projection does not exist in the backbone.
    """
    lora = LoraSet(cfg.rank, cfg.alpha)

    for block in range(num_blocks):
        for target in cfg.targets:
            prefix = f'blocks.{block}.{target}'
            weight = params.get(f'{prefix}.weight')
            if weight is None:
                raise ValueError(f'LoRA target "{target}" is not a projection of the backbone')

            d_out, d_in = weight.shape
            lora.a[prefix] = (gaussian_fill(rng.split(len(lora.a)), (cfg.rank, d_in), np.float64)
                              / np.sqrt(cfg.rank)).astype(weight.dtype)
            lora.b[prefix] = np.zeros((d_out, cfg.rank), dtype=weight.dtype)

    logging.info(f"LoRA injected: {len(lora.a)} projections, rank={cfg.rank}, alpha={cfg.alpha}, "
                 f"{lora.parameter_count()} trainable parameters")

    return lora


def merge_lora_set(params: Dict[str, np.ndarray], lora: LoraSet) -> Dict[str, np.ndarray]:
    """
    Dense weights W_0 + (alpha / r) B A for every adapted projection; other entries are copied through.
    """
    merged = {name: value.copy() for name, value in params.items()}

    for prefix in lora.prefixes:
        name = f'{prefix}.weight'
        merged[name] = (merged[name] + lora.delta(prefix)).astype(params[name].dtype, copy=False)

    return merged
