import numpy as np
import pytest

from onestep_sr.backbone.attention import (linear_attention, linear_attention_backward, masked_softmax_attention,
                                           quadratic_reference_attention)
from onestep_sr.backbone.linear_dit import LinearDiT, parameter_shapes
from onestep_sr.models.backbone_config import BackboneConfig, LoraConfig
from onestep_sr.services.latent_codec import Latent
from onestep_sr.services.prompt_engine import PromptCondition
from onestep_sr.services.scheduler import Scheduler
from onestep_sr.services.tensor_ops import Rng, finite_diff_grad, gaussian_fill


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return float(np.abs(analytic - numeric).max() / max(np.abs(numeric).max(), 1e-8))


def _randomize_b(model: LinearDiT, seed: int = 9):
    for index, prefix in enumerate(model.adapters.prefixes):
        model.adapters.b[prefix] = 0.3 * gaussian_fill(Rng(seed, (index,)), model.adapters.b[prefix].shape)


@pytest.mark.parametrize('instance', range(50))
def test_linear_attention_matches_quadratic_reference(instance):
    rng = Rng(instance, (0xA77,))
    tokens = 1 + instance % 32
    q, k, v = (gaussian_fill(rng.split(i), (3, tokens, 8), np.float32) for i in range(3))
    fast, _ = linear_attention(q, k, v, 1e-6)

    assert np.abs(fast - quadratic_reference_attention(q, k, v, 1e-6)).max() <= 1e-5


def test_linear_attention_rejects_bad_inputs():
    x = np.ones((1, 2, 4))
    with pytest.raises(ValueError):
        linear_attention(x, x, x, 0.0)
    with pytest.raises(ValueError):
        linear_attention(np.ones((1, 0, 4)), x, x, 1e-6)


def test_linear_attention_backward_matches_finite_differences():
    rng = Rng(4)
    q, k, v = (gaussian_fill(rng.split(i), (1, 5, 4)) for i in range(3))
    upstream = gaussian_fill(rng.split(3), (1, 5, 4))
    _, cache = linear_attention(q, k, v, 1e-6)
    dq, dk, dv = linear_attention_backward(upstream, cache)

    def loss(_):
        return float(np.sum(upstream * linear_attention(q, k, v, 1e-6)[0]))

    for analytic, tensor in ((dq, q), (dk, k), (dv, v)):
        assert _relative_error(analytic, finite_diff_grad(loss, tensor)) < 1e-5


def test_masked_tokens_do_not_influence_cross_attention():
    rng = Rng(5)
    q = gaussian_fill(rng, (1, 2, 3, 4))
    k = gaussian_fill(rng.split(1), (1, 2, 5, 4))
    v = gaussian_fill(rng.split(2), (1, 2, 5, 4))
    mask = np.array([[1.0, 1.0, 1.0, 0.0, 0.0]])
    out, _ = masked_softmax_attention(q, k, v, mask)

    k2, v2 = k.copy(), v.copy()
    k2[..., 3:, :] += 10.0
    v2[..., 3:, :] -= 10.0

    assert np.allclose(out, masked_softmax_attention(q, k2, v2, mask)[0])


def test_masked_prompt_rows_do_not_reach_the_backbone_output(tiny_lora_model, condition):
    _randomize_b(tiny_lora_model)
    z = gaussian_fill(Rng(12), (2, 4, 2, 3))
    padded = condition.c.copy()
    padded[condition.m == 0] = 25.0 * gaussian_fill(Rng(13), padded[condition.m == 0].shape)
    noisy = PromptCondition(padded, condition.m.copy())

    for use_adapters in (True, False):
        reference = tiny_lora_model.forward(z, 400, condition, use_adapters=use_adapters)
        assert np.allclose(tiny_lora_model.forward(z, 400, noisy, use_adapters=use_adapters), reference,
                           rtol=0.0, atol=1e-12)


def test_forward_shape_and_call_count(tiny_model, condition):
    z = gaussian_fill(Rng(1), (2, 4, 3, 2))
    out = tiny_model.forward(z, 100, condition)

    assert out.shape == z.shape
    assert tiny_model.forward_calls == 1


def test_forward_validates_inputs(tiny_model, condition):
    with pytest.raises(ValueError):
        tiny_model.forward(np.zeros((1, 5, 2, 2)), 1, condition)
    with pytest.raises(ValueError):
        tiny_model.forward(np.zeros((1, 4, 2, 2)), 1001, condition)
    with pytest.raises(ValueError):
        tiny_model.forward(np.zeros((1, 4, 2, 2)), 1, condition, attention='softmax')


def test_quadratic_kernel_forward_agrees_with_linear(tiny_model, condition):
    z = gaussian_fill(Rng(2), (1, 4, 4, 4))

    assert np.allclose(tiny_model.forward(z, 50, condition),
                       tiny_model.forward(z, 50, condition, attention='quadratic'), atol=1e-10)
    with pytest.raises(RuntimeError):
        tiny_model.backward(np.ones_like(z))


def test_prior_is_seeded(tiny_cfg):
    a = LinearDiT(tiny_cfg, 'float64')
    b = LinearDiT(tiny_cfg, 'float64')

    assert all(np.array_equal(a.params[name], b.params[name]) for name in a.params)
    assert set(a.params) == set(parameter_shapes(tiny_cfg))


def test_dense_backward_matches_finite_differences(tiny_model, condition):
    rng = Rng(3)
    z = gaussian_fill(rng, (1, 4, 2, 3))
    upstream = gaussian_fill(rng.split(1), z.shape)

    tiny_model.forward(z, 30, condition)
    grads = tiny_model.backward(upstream)

    def loss(_):
        return float(np.sum(upstream * tiny_model.forward(z, 30, condition)))

    for name in ('patch_in.weight', 'time_mlp.fc1.weight', 'blocks.0.modulation.weight',
                 'blocks.1.self_attn.to_k.weight', 'blocks.2.cross_attn.to_v.weight', 'blocks.1.ffn.fc2.bias',
                 'patch_out.weight'):
        assert _relative_error(grads.params[name], finite_diff_grad(loss, tiny_model.params[name])) < 1e-5, name

    assert _relative_error(grads.latent, finite_diff_grad(loss, z)) < 1e-5


def test_lora_backward_returns_only_adapter_gradients(tiny_lora_model, condition):
    _randomize_b(tiny_lora_model)
    rng = Rng(6)
    z = gaussian_fill(rng, (2, 4, 2, 2))
    upstream = gaussian_fill(rng.split(1), z.shape)

    tiny_lora_model.forward(z, 700, condition)
    grads = tiny_lora_model.backward(upstream)

    assert set(grads.params) == set(dict(tiny_lora_model.adapters.named_parameters()))

    def loss(_):
        return float(np.sum(upstream * tiny_lora_model.forward(z, 700, condition)))

    for name in ('blocks.0.self_attn.to_q.lora_A', 'blocks.2.cross_attn.to_k.lora_B',
                 'blocks.1.self_attn.to_out.lora_B'):
        numeric = finite_diff_grad(loss, tiny_lora_model.adapters.get(name))
        assert _relative_error(grads.params[name], numeric) < 1e-5, name


def test_frozen_forward_has_no_parameter_gradients(tiny_lora_model, condition):
    z = gaussian_fill(Rng(7), (1, 4, 2, 2))
    tiny_lora_model.forward(z, 10, condition, use_adapters=False)

    assert tiny_lora_model.backward(np.ones_like(z)).params == {}


def test_zero_b_adapters_leave_the_prior_unchanged(tiny_lora_model, condition):
    z = gaussian_fill(Rng(8), (1, 4, 2, 2))

    assert np.array_equal(tiny_lora_model.forward(z, 10, condition),
                          tiny_lora_model.forward(z, 10, condition, use_adapters=False))


def test_merge_matches_adapter_forward(tiny_lora_model, condition):
    _randomize_b(tiny_lora_model)
    merged = tiny_lora_model.merge_lora()

    assert merged.adapters is None
    for index in range(20):
        z = gaussian_fill(Rng(10, (index,)), (1, 4, 2, 2))
        assert np.abs(merged.forward(z, 200, condition) - tiny_lora_model.forward(z, 200, condition)).max() <= 1e-10


def test_merge_keeps_the_frozen_prior(tiny_lora_model, condition):
    _randomize_b(tiny_lora_model)
    merged = tiny_lora_model.merge_lora()
    z = gaussian_fill(Rng(11), (1, 4, 2, 2))

    assert np.array_equal(merged.forward(z, 5, condition, use_adapters=False),
                          tiny_lora_model.forward(z, 5, condition, use_adapters=False))


def test_adapter_state_errors(tiny_model, tiny_lora_model):
    with pytest.raises(RuntimeError):
        tiny_model.merge_lora()
    with pytest.raises(RuntimeError):
        tiny_lora_model.inject_lora(LoraConfig(rank=2))


def test_ffn_targets_are_optional(tiny_cfg):
    attention_only = LinearDiT(tiny_cfg, 'float64').inject_lora(LoraConfig(rank=2), Rng(0))
    with_ffn = LinearDiT(tiny_cfg, 'float64').inject_lora(LoraConfig(rank=2, include_ffn=True), Rng(0))

    assert not any('ffn' in prefix for prefix in attention_only.adapters.prefixes)
    assert 'blocks.0.ffn.fc1' in with_ffn.adapters.prefixes


def test_remove_blocks_renumbers_and_tracks_origin(tiny_lora_model):
    pruned = tiny_lora_model.remove_blocks([1, 3])

    assert pruned.num_blocks == 2
    assert pruned.kept_blocks == (1, 3)
    assert np.array_equal(pruned.params['blocks.1.ffn.fc1.weight'], tiny_lora_model.params['blocks.2.ffn.fc1.weight'])
    assert not any(name.startswith('blocks.2.') for name in pruned.params)
    assert 'blocks.1.self_attn.to_q' in pruned.adapters.prefixes
    assert pruned.parameter_count() == (tiny_lora_model.parameter_count()
                                        - tiny_lora_model.block_parameter_count(1))


def test_remove_blocks_requires_endpoints(tiny_model):
    with pytest.raises(ValueError):
        tiny_model.remove_blocks([1, 2])
    with pytest.raises(ValueError):
        tiny_model.remove_blocks([1, 3, 4])


def test_restore_takes_exactly_one_forward(tiny_model, condition):
    z_L = Latent(gaussian_fill(Rng(12), (1, 4, 2, 2)))
    scheduler = Scheduler()
    residual = tiny_model.forward(z_L.data, 900, condition)
    calls = tiny_model.forward_calls

    z_hat = tiny_model.restore(z_L, 900, condition, scheduler)

    assert tiny_model.forward_calls == calls + 1
    assert np.allclose(z_hat.data, z_L.data - 0.9 * residual)


def test_config_validation():
    with pytest.raises(ValueError):
        BackboneConfig(num_blocks=1)
    with pytest.raises(ValueError):
        BackboneConfig(width=10, num_heads=4)


def test_fixed_parameters_are_everything_outside_the_blocks(tiny_model):
    outside = sum(value.size for name, value in tiny_model.params.items() if not name.startswith('blocks.'))
    blocks = sum(tiny_model.block_parameter_count(block) for block in range(tiny_model.num_blocks))

    assert tiny_model.fixed_parameter_count() == outside
    assert tiny_model.parameter_count() == outside + blocks
