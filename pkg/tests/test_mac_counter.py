import math

import numpy as np
import pytest

from onestep_sr.bench.mac_counter import COMPONENTS, TOKEN_FREE_COMPONENTS, mac_count
from onestep_sr.bench.scaling import latent_grid, scaling_benchmark
from onestep_sr.models.backbone_config import BackboneConfig
from onestep_sr.services.tensor_ops import MacCounter, Rng, gaussian_fill


def test_counter_agrees_with_the_closed_form(tiny_model, condition):
    z = gaussian_fill(Rng(1), (1, 4, 3, 2))

    for attention in ('linear', 'quadratic'):
        with MacCounter() as counter:
            tiny_model.forward(z, 40, condition, attention=attention)

        expected = mac_count(tiny_model.cfg, 3 * 32, 2 * 32, attention=attention, include_codec=False).total
        assert counter.total == expected, attention


def test_codec_cost_matches_the_counter(tiny_codec):
    with MacCounter() as counter:
        tiny_codec.decode(tiny_codec.encode(Rng(2).uniform((1, 3, 16, 24))))

    assert counter.total == mac_count(BackboneConfig(latent_channels=4), 16, 24, patch=8).components['codec']


def test_total_is_the_sum_of_the_components():
    report = mac_count(BackboneConfig(), 512, 512)

    assert set(report.components) == set(COMPONENTS)
    assert report.total == sum(report.components.values())
    assert (report.tokens, report.height, report.width) == (256, 512, 512)


def test_linear_kernel_is_affine_in_tokens():
    cfg = BackboneConfig()
    totals = [mac_count(cfg, 32, 32 * k).total for k in range(1, 6)]
    steps = np.diff(totals)

    assert np.all(steps == steps[0])


def test_token_dependent_components_double_with_the_grid():
    small = mac_count(BackboneConfig(), 512, 512)
    large = mac_count(BackboneConfig(), 512, 1024)

    assert large.tokens == 2 * small.tokens
    for name in COMPONENTS:
        expected = small.components[name] if name in TOKEN_FREE_COMPONENTS else 2 * small.components[name]
        assert large.components[name] == expected, name


def test_doubling_tokens_meets_the_scaling_thresholds():
    cfg = BackboneConfig()
    assert (cfg.num_blocks, cfg.width) == (8, 128)

    def ratio(attention: str) -> float:
        small = mac_count(cfg, 1024, 1024, attention, include_codec=False)
        large = mac_count(cfg, 1024, 2048, attention, include_codec=False)
        assert (small.tokens, large.tokens) == (1024, 2048)

        return large.total / small.total

    assert ratio('linear') <= 2.5
    assert ratio('quadratic') >= 3.2


def test_quadratic_kernel_grows_faster():
    cfg = BackboneConfig()
    linear = mac_count(cfg, 1024, 1024).components['self_attn']
    quadratic = mac_count(cfg, 1024, 1024, attention='quadratic').components['self_attn']

    assert quadratic > linear


def test_removed_blocks_only_leave_fixed_costs():
    report = mac_count(BackboneConfig(), 64, 64, num_blocks=0)

    assert report.total == sum(report.components[name] for name in ('codec', 'projections', 'time_mlp'))


def test_invalid_requests_are_rejected():
    with pytest.raises(ValueError):
        mac_count(BackboneConfig(), 500, 500)
    with pytest.raises(ValueError):
        mac_count(BackboneConfig(), 64, 64, attention='softmax')
    with pytest.raises(ValueError):
        mac_count(BackboneConfig(), 64, 64, num_blocks=-1)


@pytest.mark.parametrize('tokens, grid', [(1, (1, 1)), (12, (3, 4)), (16, (4, 4)), (13, (1, 13))])
def test_latent_grid_is_most_square(tokens, grid):
    assert latent_grid(tokens) == grid


def test_benchmark_validates_its_inputs():
    with pytest.raises(ValueError):
        scaling_benchmark(BackboneConfig(), [64, 16])
    with pytest.raises(ValueError):
        scaling_benchmark(BackboneConfig(), [16], warmup=0)


@pytest.mark.slow
def test_linear_kernel_scales_better_than_quadratic():
    cfg = BackboneConfig(num_blocks=2, width=64, num_heads=4, ffn_width=128)
    result = scaling_benchmark(cfg, [256, 1024, 4096], dtype='float32')

    assert len(result.times_linear) == len(result.times_quadratic) == 3
    assert result.ratios_linear[-1] < result.ratios_quadratic[-1]
    assert not math.isnan(result.mac_time_spearman)
