from dataclasses import dataclass, field
from typing import Optional, List

from onestep_sr.models.default_values_and_options import DefaultValuesAndOptions


@dataclass
class BackboneConfig:
    """
    Shape of the LinearDiT restoration network.

    Attributes:
        num_blocks (int): Transformer block count L; at least 2 so the first and last block can be pinned.
        width (int): Token width d.
        num_heads (int): Attention heads; must divide width.
        ffn_width (int): FFN hidden width.
        text_width (int): Prompt embedding width d_t.
        text_tokens (int): Padded prompt length, echoed in MAC accounting.
        latent_channels (int): Latent channels C_lat read and written by the patch maps.
        eps_att (Optional[float]): Linear-attention stabilizer; None picks the dtype default.
        sched_horizon (int): Largest timestep accepted by forward.
        eps_norm (float): RMS-norm stabilizer.
        seed (int): Seed of the toy prior weights.
    """
    num_blocks: int = DefaultValuesAndOptions.get_blocks()
    width: int = DefaultValuesAndOptions.get_width()
    num_heads: int = DefaultValuesAndOptions.get_heads()
    ffn_width: int = DefaultValuesAndOptions.get_ffn_width()
    text_width: int = DefaultValuesAndOptions.get_text_width()
    text_tokens: int = DefaultValuesAndOptions.get_text_tokens()
    latent_channels: int = DefaultValuesAndOptions.get_latent_channels()
    eps_att: Optional[float] = None
    sched_horizon: int = DefaultValuesAndOptions.get_sched_horizon()
    eps_norm: float = DefaultValuesAndOptions.get_eps_norm()
    seed: int = DefaultValuesAndOptions.get_prior_seed()

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.num_blocks < 2:
            raise ValueError(f"Backbone needs at least 2 blocks, got {self.num_blocks}")
        if self.width <= 0 or self.num_heads <= 0 or self.width % self.num_heads != 0:
            raise ValueError(f"Width {self.width} must be a positive multiple of num_heads {self.num_heads}")
        if self.ffn_width <= 0 or self.text_width <= 0 or self.latent_channels <= 0 or self.text_tokens <= 0:
            raise ValueError("Backbone widths and token counts must be positive")
        if self.eps_att is not None and self.eps_att <= 0:
            raise ValueError(f"eps_att must be positive, got {self.eps_att}")
        if self.sched_horizon <= 0:
            raise ValueError(f"sched_horizon must be positive, got {self.sched_horizon}")

    @property
    def head_width(self) -> int:
        return self.width // self.num_heads

    def resolve_eps_att(self, dtype: str) -> float:
        if self.eps_att is not None:
            return self.eps_att

        return DefaultValuesAndOptions.get_eps_att(dtype)


@dataclass
class LoraConfig:
    """
    Low-rank adapter settings; the delta applied to a target weight is (alpha / rank) * B @ A.

    Attributes:
        rank (int): Adapter rank r.
        alpha (float): Scaling coefficient.
        include_ffn (bool): Also adapt the FFN projections, not only attention.
        targets (List[str]): Projection suffixes receiving adapters; derived from include_ffn when empty.
    """
    rank: int = DefaultValuesAndOptions.get_lora_rank()
    alpha: float = DefaultValuesAndOptions.get_lora_alpha()
    include_ffn: bool = False
    targets: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.rank <= 0:
            raise ValueError(f"LoRA rank must be positive, got {self.rank}")
        if not self.targets:
            self.targets = DefaultValuesAndOptions.get_lora_targets(self.include_ffn)

    @property
    def scale(self) -> float:
        return self.alpha / self.rank
