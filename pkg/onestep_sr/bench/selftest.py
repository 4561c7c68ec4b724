import logging
import time
from dataclasses import dataclass, asdict
from typing import Callable, List, Tuple

import numpy as np

from onestep_sr.backbone.attention import linear_attention, quadratic_reference_attention
from onestep_sr.backbone.linear_dit import LinearDiT
from onestep_sr.bench.mac_counter import mac_count
from onestep_sr.models.backbone_config import BackboneConfig, LoraConfig
from onestep_sr.models.run_configs import CodecConfig, LossWeights, SchedulerConfig
from onestep_sr.pipeline.trainer import Components, compute_objective
from onestep_sr.pruning.fisher import CalibAccumulator
from onestep_sr.pruning.selection import brute_force_select, select_blocks
from onestep_sr.services.latent_codec import LatentCodec
from onestep_sr.services.objectives import align_loss, cons_loss, rec_loss
from onestep_sr.services.perceptual import PerceptualExtractor
from onestep_sr.services.prompt_engine import PromptCondition, PromptConfig, PromptEngine
from onestep_sr.services.scheduler import Scheduler
from onestep_sr.services.tensor_ops import MacCounter, Rng, gaussian_fill


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def to_dict(self) -> dict:
        return asdict(self)


def _micro_config(num_blocks: int = 2, width: int = 8) -> BackboneConfig:
    return BackboneConfig(num_blocks=num_blocks, width=width, num_heads=2, ffn_width=2 * width, text_width=8,
                          text_tokens=4, latent_channels=4, seed=3)


def _micro_condition(cfg: BackboneConfig, rng: Rng, dtype=np.float64) -> PromptCondition:
    mask = np.ones(cfg.text_tokens)
    mask[-1] = 0

    return PromptCondition(gaussian_fill(rng, (cfg.text_tokens, cfg.text_width), dtype), mask.astype(dtype))


def check_attention_equivalence() -> str:
    rng = Rng(11)
    worst = 0.0
    for instance in range(50):
        stream = rng.split(instance)
        tokens = int(stream.integers(1, 32))
        q, k, v = (gaussian_fill(stream, (2, tokens, 8), np.float32) for _ in range(3))
        fast, _ = linear_attention(q, k, v, 1e-6)
        worst = max(worst, float(np.abs(fast - quadratic_reference_attention(q, k, v, 1e-6)).max()))

    assert worst <= 1e-5, f"max deviation {worst:.3e}"

    return f"max deviation {worst:.2e} over 50 instances"


def check_loss_zero_cases() -> str:
    rng = Rng(12)
    x = rng.uniform((1, 3, 16, 16))
    value, _ = rec_loss(x, x, LossWeights(), PerceptualExtractor())
    assert value == 0.0, f"rec_loss(x, x) = {value}"

    q = gaussian_fill(rng, (2, 4, 3, 3))
    assert align_loss(q, q, 1e-6)[0] == 0.0
    assert cons_loss(q, q.copy())[0] == 0.0

    q_hat = np.array([[[[1.0, -1.0]]]])
    q_ref = q_hat + 2.0
    worked = align_loss(q_hat, q_ref, 1e-6)[0]
    assert abs(worked - 2.0) <= 1e-5, f"worked example gives {worked}"

    return f"worked alignment example {worked:.8f}"


def check_codec_law() -> str:
    codec = LatentCodec(CodecConfig(patch=8, latent_channels=16), 'float64')
    rng = Rng(13)
    worst = 0.0
    for index in range(100):
        x = rng.split(index).uniform((1, 3, 16, 24))
        worst = max(worst, float(np.abs(codec.decode(codec.encode(x)) - x).max()))
    assert worst < 1e-5, f"roundtrip error {worst:.3e}"

    full = LatentCodec(CodecConfig(), 'float32')
    tokens = full.encode(np.zeros((1, 3, 512, 512), dtype=np.float32)).token_count
    assert tokens == 256, f"512x512 gives {tokens} tokens"

    return f"roundtrip error {worst:.2e}, 512x512 -> {tokens} tokens"


def check_lora_merge() -> str:
    cfg = _micro_config()
    rng = Rng(14)
    model = LinearDiT(cfg, 'float64').inject_lora(LoraConfig(rank=2, alpha=4.0), rng.split(0))
    cond = _micro_condition(cfg, rng.split(1))
    z = gaussian_fill(rng.split(2), (1, 4, 2, 3))

    assert np.array_equal(model.forward(z, 10, cond), model.forward(z, 10, cond, use_adapters=False))

    for index, name in enumerate(list(model.adapters.b)):
        model.adapters.b[name] = gaussian_fill(rng.split(100 + index), model.adapters.b[name].shape)
    merged = model.merge_lora()

    worst = 0.0
    for index in range(20):
        z = gaussian_fill(rng.split(200 + index), (1, 4, 2, 3))
        worst = max(worst, float(np.abs(merged.forward(z, 50, cond) - model.forward(z, 50, cond)).max()))
    assert worst <= 1e-5, f"merge deviation {worst:.3e}"

    return f"merge deviation {worst:.2e} on 20 inputs"


def check_scheduler() -> str:
    scheduler = Scheduler(SchedulerConfig())
    horizon = scheduler.horizon
    assert all(abs(scheduler.alpha(t) + scheduler.sigma(t) - 1.0) <= 1e-12 for t in range(horizon + 1))
    assert scheduler.omega(0) == 1.0 and scheduler.omega(horizon) == 0.0
    omegas = [scheduler.omega(t) for t in range(horizon + 1)]
    assert all(a > b for a, b in zip(omegas, omegas[1:])), "omega is not strictly decreasing"

    rng = Rng(15)
    draws = [scheduler.sample_timestep(rng) for _ in range(2000)]
    assert 70 <= min(draws) and max(draws) <= 650, f"timesteps outside [70, 650]: {min(draws)}..{max(draws)}"

    return f"timesteps in [{min(draws)}, {max(draws)}]"


def check_pruning_oracle() -> str:
    rng = Rng(16)
    for instance in range(200):
        stream = rng.split(instance)
        blocks = int(stream.integers(2, 12))
        size = int(stream.integers(1, 50))
        sizes = [size] * blocks
        p_fix = int(stream.integers(0, 100))
        p_star = p_fix + size * int(stream.integers(2, blocks))
        saliency = [float(s) for s in stream.uniform(blocks)]

        greedy = select_blocks(saliency, sizes, p_fix, p_star, blocks)
        exact = brute_force_select(saliency, sizes, p_fix, p_star, blocks)
        assert greedy == exact, f"instance {instance}: greedy {greedy} != optimum {exact}"
        assert 1 in greedy and blocks in greedy
        assert p_fix + sum(sizes[b - 1] for b in greedy) <= p_star

    acc = CalibAccumulator({'w': (1,)})
    acc.accumulate({'w': np.array([3.0])}, 1.0)
    acc.accumulate({'w': np.array([4.0])}, 1.0)
    fisher = float(acc.finalize()['w'][0])
    assert fisher == 12.5, f"Fisher example gives {fisher}"

    return "greedy == brute force on 200 instances, Fisher example 12.5"


def check_mac_counter() -> str:
    cfg = _micro_config()
    rng = Rng(17)
    model = LinearDiT(cfg, 'float64')
    cond = _micro_condition(cfg, rng)
    z = gaussian_fill(rng.split(1), (1, cfg.latent_channels, 2, 2))

    with MacCounter() as counter:
        model.forward(z, 5, cond)
    analytic = mac_count(cfg, 64, 64, include_codec=False).total
    assert counter.total == analytic, f"counted {counter.total}, analytic {analytic}"

    totals = [mac_count(BackboneConfig(), 32, 32 * k).total for k in (1, 2, 3)]
    assert totals[2] - totals[1] == totals[1] - totals[0], "mac_count is not affine in N"

    return f"{analytic} MACs on the d=8, N=4 micro-model"


def check_total_loss_gradient() -> str:
    cfg = _micro_config()
    rng = Rng(18)
    model = LinearDiT(cfg, 'float64').inject_lora(LoraConfig(rank=2, alpha=2.0), rng.split(0))
    for index, name in enumerate(list(model.adapters.b)):
        model.adapters.b[name] = 0.1 * gaussian_fill(rng.split(100 + index), model.adapters.b[name].shape)

    prompts = PromptEngine(PromptConfig(text_tokens=cfg.text_tokens, text_width=cfg.text_width), 'float64')
    components = Components(LatentCodec(CodecConfig(patch=8, latent_channels=4), 'float64'), prompts,
                            Scheduler(SchedulerConfig()), PerceptualExtractor(0, np.float64))
    x_H = rng.split(1).uniform((1, 3, 16, 16))
    x_L = np.clip(x_H + 0.05 * gaussian_fill(rng.split(2), x_H.shape), 0.0, 1.0)
    cond = prompts.build_condition_batch(x_L)
    weights = LossWeights()

    def objective(need_grad: bool):
        return compute_objective(model, components, weights, x_L, x_H, cond, Rng(19), 900, 1e-6, need_grad)

    grads = objective(True).grads
    worst = 0.0
    for name in ('blocks.0.self_attn.to_q.lora_B', 'blocks.1.cross_attn.to_v.lora_A'):
        tensor = model.adapters.get(name)
        for flat in (0, tensor.size // 2, tensor.size - 1):
            index = np.unravel_index(flat, tensor.shape)
            original = tensor[index]
            tensor[index] = original + 1e-6
            plus = objective(False).total
            tensor[index] = original - 1e-6
            minus = objective(False).total
            tensor[index] = original

            numeric = (plus - minus) / 2e-6
            analytic = float(grads[name][index])
            worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6))

    assert worst < 1e-4, f"max relative gradient error {worst:.3e}"

    return f"max relative gradient error {worst:.2e}"


SUITES: List[Tuple[str, Callable[[], str]]] = [
    ('attention_equivalence', check_attention_equivalence),
    ('loss_zero_cases', check_loss_zero_cases),
    ('codec_law', check_codec_law),
    ('lora_merge', check_lora_merge),
    ('scheduler', check_scheduler),
    ('pruning_oracle', check_pruning_oracle),
    ('mac_counter', check_mac_counter),
    ('total_loss_gradient', check_total_loss_gradient),
]


def run_selftest() -> List[CheckResult]:
    """
    Runs every oracle suite, logging each outcome; failures are reported, not raised.
    """
    results = []
    for name, check in SUITES:
        start = time.perf_counter()
        try:
            detail, passed = check(), True
        except (AssertionError, ValueError, RuntimeError, FloatingPointError) as e:
            detail, passed = str(e) or type(e).__name__, False
        seconds = time.perf_counter() - start

        results.append(CheckResult(name, passed, detail, seconds))
        if passed:
            logging.info(f"selftest {name}: ok ({detail}, {seconds:.2f} s)")
        else:
            logging.error(f"selftest {name}: FAILED ({detail})")

    return results
