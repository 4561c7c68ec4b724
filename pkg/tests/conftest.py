import numpy as np
import pytest

from onestep_sr.backbone.linear_dit import LinearDiT
from onestep_sr.models.backbone_config import BackboneConfig, LoraConfig
from onestep_sr.models.run_configs import (CodecConfig, DegradationConfig, PromptConfig, PruneConfig,
                                           SchedulerConfig, TrainConfig)
from onestep_sr.pipeline.trainer import Components
from onestep_sr.services.latent_codec import LatentCodec
from onestep_sr.services.perceptual import PerceptualExtractor
from onestep_sr.services.prompt_engine import PromptCondition, PromptEngine
from onestep_sr.services.scheduler import Scheduler
from onestep_sr.services.tensor_ops import Rng, gaussian_fill
from onestep_sr.settings import Settings


@pytest.fixture
def tiny_cfg() -> BackboneConfig:
    return BackboneConfig(num_blocks=3, width=16, num_heads=2, ffn_width=32, text_width=8, text_tokens=6,
                          latent_channels=4, seed=1)


@pytest.fixture
def tiny_model(tiny_cfg) -> LinearDiT:
    return LinearDiT(tiny_cfg, 'float64')


@pytest.fixture
def tiny_lora_model(tiny_cfg) -> LinearDiT:
    return LinearDiT(tiny_cfg, 'float64').inject_lora(LoraConfig(rank=2, alpha=2.0), Rng(5))


@pytest.fixture
def tiny_prompts(tiny_cfg) -> PromptEngine:
    return PromptEngine(PromptConfig(text_tokens=tiny_cfg.text_tokens, text_width=tiny_cfg.text_width,
                                     vocab_size=97), 'float64')


@pytest.fixture
def tiny_codec() -> LatentCodec:
    return LatentCodec(CodecConfig(patch=8, latent_channels=4), 'float64')


@pytest.fixture
def tiny_components(tiny_codec, tiny_prompts) -> Components:
    return Components(tiny_codec, tiny_prompts, Scheduler(SchedulerConfig()), PerceptualExtractor(0, np.float64))


@pytest.fixture
def condition(tiny_cfg) -> PromptCondition:
    mask = np.ones(tiny_cfg.text_tokens)
    mask[-2:] = 0

    return PromptCondition(gaussian_fill(Rng(7), (tiny_cfg.text_tokens, tiny_cfg.text_width)), mask)


@pytest.fixture
def image_pair():
    rng = Rng(21)
    x_H = rng.uniform((2, 3, 16, 16))
    x_L = np.clip(x_H + 0.05 * gaussian_fill(rng.split(1), x_H.shape), 0.0, 1.0)

    return x_L, x_H


@pytest.fixture
def tiny_settings(tiny_cfg) -> Settings:
    """
    Whole-run settings small enough for end-to-end tests: 32x32 crops on the 32x codec grid.
    """
    train = TrainConfig(steps=2, batch=1, crop=32, dataset_size=3, val_size=1, eval_every=2, log_every=1)
    prune = PruneConfig(calib_steps=2, calib_size=2)

    return Settings(tiny_cfg, LoraConfig(rank=2, alpha=2.0), DegradationConfig(),
                    PromptConfig(text_tokens=tiny_cfg.text_tokens, text_width=tiny_cfg.text_width, vocab_size=97),
                    train, prune, seed=3, dtype='float64')
