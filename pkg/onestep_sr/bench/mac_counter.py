from dataclasses import dataclass, asdict
from typing import Dict, Optional

from onestep_sr.models.backbone_config import BackboneConfig
from onestep_sr.models.default_values_and_options import DefaultValuesAndOptions

COMPONENTS = ('codec', 'projections', 'time_mlp', 'modulation', 'text_proj', 'self_attn', 'cross_attn', 'ffn')
# Components whose cost does not depend on the token count N.
TOKEN_FREE_COMPONENTS = ('time_mlp', 'modulation', 'text_proj')


@dataclass
class MacReport:
    """
    Closed-form multiply-accumulate counts of one restoration (batch of one image).

    Attributes:
        components (Dict[str, int]): codec, projections (patch maps), time_mlp, modulation, text_proj (key and
            value maps of the prompt), self_attn, cross_attn (query, output and token mixing), ffn.
        total (int): Sum of the components.
        tokens (int): Latent token count N.
        height (int): Aligned input height.
        width (int): Aligned input width.
        attention (str): Self-attention kernel the counts describe.
        config (dict): Backbone configuration echo.
    """
    components: Dict[str, int]
    total: int
    tokens: int
    height: int
    width: int
    attention: str
    config: dict

    def to_dict(self) -> dict:
        return asdict(self)


def self_attention_kernel_macs(tokens: int, width: int, head_width: int, attention: str = 'linear') -> int:
    """
    Token-mixing cost of one self-attention layer: phi(K)^T V, phi(Q)(.) and the normalizer for the linear
    kernel, or the explicit N x N scores and their product with V for the quadratic reference.
    """
    if attention == 'linear':
        return 2 * tokens * width * head_width + tokens * width
    if attention == 'quadratic':
        return 2 * tokens * tokens * width

    raise ValueError(f'Unknown attention kernel "{attention}"')


def mac_count(cfg: BackboneConfig, height: int, width: int, attention: str = 'linear',
              num_blocks: Optional[int] = None, include_codec: bool = True,
              patch: int = DefaultValuesAndOptions.get_patch()) -> MacReport:
    """
    Exact integer MACs of codec encode + decode, the backbone forward and the patch maps for an aligned
    height x width image. Counts agree with what `MacCounter` records while the same computation runs.

    Args:
        num_blocks (Optional[int]): Overrides cfg.num_blocks (0 leaves only codec and projection costs).

    Raises:
        ValueError: If the size is not a positive multiple of the patch or the kernel is unknown.
    """
    if height <= 0 or width <= 0 or height % patch or width % patch:
        raise ValueError(f"mac_count needs sides that are positive multiples of {patch}, got {height}x{width}")

    blocks = cfg.num_blocks if num_blocks is None else num_blocks
    if blocks < 0:
        raise ValueError(f"num_blocks must be nonnegative, got {blocks}")

    n = (height // patch) * (width // patch)
    d = cfg.width
    full = 3 * patch * patch
    text = cfg.text_tokens

    components = {
        'codec': 2 * n * full * full if include_codec else 0,
        'projections': 2 * n * cfg.latent_channels * d,
        'time_mlp': 2 * d * d,
        'modulation': blocks * 4 * d * d,
        'text_proj': blocks * 2 * text * cfg.text_width * d,
        'self_attn': blocks * (4 * n * d * d + self_attention_kernel_macs(n, d, cfg.head_width, attention)),
        'cross_attn': blocks * (2 * n * d * d + 2 * n * text * d),
        'ffn': blocks * 2 * n * d * cfg.ffn_width,
    }

    return MacReport(components, sum(components.values()), n, height, width, attention,
                     {'num_blocks': blocks, 'width': d, 'num_heads': cfg.num_heads, 'ffn_width': cfg.ffn_width,
                      'text_width': cfg.text_width, 'text_tokens': text, 'latent_channels': cfg.latent_channels,
                      'patch': patch})
