import dataclasses
import math
import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from onestep_sr.backbone.linear_dit import LinearDiT
from onestep_sr.models.backbone_config import BackboneConfig, LoraConfig
from onestep_sr.models.run_configs import DegradationConfig, LossWeights, PromptConfig, PruneConfig, TrainConfig
from onestep_sr.pipeline.calibration import calibrate
from onestep_sr.pipeline.checkpoint import load_checkpoint, save_checkpoint
from onestep_sr.pipeline.dataset import PairedDataset, deduplicate, generate_toy_dataset, make_eval_pairs
from onestep_sr.pipeline.degradation import synthesize_degradation
from onestep_sr.pipeline.evaluation import restore_image, upscale_nearest
from onestep_sr.pipeline.image_io import read_image, write_image
from onestep_sr.pipeline.metrics import center_crop_protocol, eval_psnr_y, eval_ssim_y
from onestep_sr.pipeline.runner import build_components, make_training_data, new_state, run_pruning, run_training
from onestep_sr.pipeline.trainer import (AdamW, AdapterEma, clip_grad_norm, compute_objective, tag_source,
                                         train_step)
from onestep_sr.services.prompt_engine import PromptEngine
from onestep_sr.services.tensor_ops import Rng, finite_diff_grad, gaussian_fill
from onestep_sr.settings import Settings
from onestep_sr.start_modes.config_parser import RunConfigParser


def _randomize_b(model: LinearDiT, seed: int = 13):
    for index, prefix in enumerate(model.adapters.prefixes):
        model.adapters.b[prefix] = 0.1 * gaussian_fill(Rng(seed, (index,)), model.adapters.b[prefix].shape)


# ---------------------------------------------------------------- data


def test_degradation_keeps_shape_and_range():
    x = Rng(0).uniform((2, 3, 16, 16))
    y = synthesize_degradation(x, DegradationConfig(), Rng(1))

    assert y.shape == x.shape
    assert y.min() >= 0.0 and y.max() <= 1.0
    assert np.array_equal(y, synthesize_degradation(x, DegradationConfig(), Rng(1)))
    assert not np.array_equal(y, synthesize_degradation(x, DegradationConfig(), Rng(2)))


def test_degradation_requires_divisible_sides():
    with pytest.raises(ValueError):
        synthesize_degradation(np.zeros((3, 18, 16)), DegradationConfig(downscale=4), Rng(0))


def test_deduplicate_keeps_first_occurrences():
    a, b = np.zeros((3, 4, 4)), np.ones((3, 4, 4))

    unique = deduplicate([a, b, a.copy()])

    assert len(unique) == 2 and unique[0] is a


def test_toy_dataset_is_identical_with_a_worker_pool():
    serial = generate_toy_dataset(4, (16, 16), seed=5)
    with ThreadPoolExecutor(max_workers=3) as executor:
        pooled = generate_toy_dataset(4, (16, 16), seed=5, executor=executor)

    assert all(np.array_equal(a, b) for a, b in zip(serial, pooled))
    assert serial[0].min() >= 0.0 and serial[0].max() <= 1.0


def test_paired_dataset_samples_reproducible_crops():
    images = generate_toy_dataset(3, (40, 40), seed=1)
    dataset = PairedDataset(images, DegradationConfig(), seed=2)

    x_L, x_H = dataset.sample(step=1, batch=2, crop=32)

    assert x_L.shape == x_H.shape == (2, 3, 32, 32)
    assert np.array_equal(x_L, dataset.sample(step=1, batch=2, crop=32)[0])
    with pytest.raises(ValueError):
        dataset.sample(step=1, batch=1, crop=64)


# ---------------------------------------------------------------- metrics and image files


def test_metrics_on_identical_images():
    x = Rng(3).uniform((3, 24, 24))

    assert eval_psnr_y(x, x) == math.inf
    assert eval_ssim_y(x, x) == pytest.approx(1.0)


def test_psnr_of_a_constant_offset():
    x = np.full((3, 8, 8), 0.5)

    assert eval_psnr_y(x + 0.1, x) == pytest.approx(20.0)


def test_center_crop():
    x = np.arange(100).reshape(1, 10, 10)

    assert center_crop_protocol(x, 4).shape == (1, 4, 4)
    assert center_crop_protocol(x, 4)[0, 0, 0] == 33
    assert center_crop_protocol(x, 20).shape == (1, 10, 10)


def test_raw_images_roundtrip_exactly(tmp_path):
    path = str(tmp_path / 'image.raw')
    x = Rng(4).uniform((3, 5, 7)).astype(np.float32)
    write_image(path, x)

    assert np.array_equal(read_image(path), x)


def test_ppm_images_are_quantized(tmp_path):
    path = str(tmp_path / 'image.ppm')
    x = Rng(5).uniform((3, 6, 4))
    write_image(path, x)

    assert np.abs(read_image(path) - x).max() <= 0.5 / 255 + 1e-6


def test_truncated_files_are_rejected(tmp_path):
    ppm = tmp_path / 'short.ppm'
    ppm.write_bytes(b'P6\n4 4\n255\n' + bytes(10))
    raw = tmp_path / 'short.raw'
    raw.write_bytes(b'\x02\x00\x00\x00\x02\x00\x00\x00' + bytes(4))

    with pytest.raises(ValueError):
        read_image(str(ppm))
    with pytest.raises(ValueError):
        read_image(str(raw))
    with pytest.raises(ValueError):
        read_image(str(tmp_path / 'image.png'))


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_roundtrip(tmp_path, tiny_lora_model):
    _randomize_b(tiny_lora_model)
    ema = tiny_lora_model.adapters.copy()
    path = str(tmp_path / 'model.ckpt')

    digest = save_checkpoint(path, tiny_lora_model, {'seed': 3}, ema)
    contents = load_checkpoint(path)

    assert contents.digest == digest
    assert contents.configs == {'seed': 3}
    assert contents.state.dtype == np.float64
    for name, value in tiny_lora_model.params.items():
        assert np.array_equal(contents.state.params[name], value)
    for name, value in tiny_lora_model.adapters.named_parameters():
        assert np.array_equal(contents.state.adapters.get(name), value)
        assert np.array_equal(contents.ema.get(name), value)


def test_identical_states_give_identical_bytes(tmp_path, tiny_model):
    first, second = tmp_path / 'a.ckpt', tmp_path / 'b.ckpt'
    save_checkpoint(str(first), tiny_model)
    save_checkpoint(str(second), tiny_model.copy())

    assert first.read_bytes() == second.read_bytes()


def test_pruned_checkpoint_keeps_block_origin(tmp_path, tiny_model):
    path = str(tmp_path / 'pruned.ckpt')
    save_checkpoint(path, tiny_model.remove_blocks([1, 3]), prune_report={'kept': [1, 3]})
    contents = load_checkpoint(path)

    assert contents.state.kept_blocks == (1, 3)
    assert contents.prune_report == {'kept': [1, 3]}


def test_corrupt_checkpoints_are_rejected(tmp_path, tiny_model):
    path = tmp_path / 'model.ckpt'
    save_checkpoint(str(path), tiny_model)
    data = bytearray(path.read_bytes())

    flipped = tmp_path / 'flipped.ckpt'
    flipped.write_bytes(bytes(data[:-1]) + bytes([data[-1] ^ 0xFF]))
    truncated = tmp_path / 'truncated.ckpt'
    truncated.write_bytes(bytes(data[:-16]))
    foreign = tmp_path / 'foreign.ckpt'
    foreign.write_bytes(b'NOTACKPT' + bytes(data[8:]))

    for bad in (flipped, truncated, foreign):
        with pytest.raises(ValueError):
            load_checkpoint(str(bad))


# ---------------------------------------------------------------- training


def test_objective_gradient_matches_finite_differences(tiny_lora_model, tiny_components, image_pair, condition):
    _randomize_b(tiny_lora_model)
    x_L, x_H = image_pair
    weights = LossWeights()

    def total(_):
        return compute_objective(tiny_lora_model, tiny_components, weights, x_L, x_H, condition, Rng(17), 900,
                                 1e-6, need_grad=False).total

    grads = compute_objective(tiny_lora_model, tiny_components, weights, x_L, x_H, condition, Rng(17), 900,
                              1e-6).grads

    assert set(grads) == set(dict(tiny_lora_model.adapters.named_parameters()))
    for name in ('blocks.0.self_attn.to_v.lora_B', 'blocks.2.cross_attn.to_q.lora_A'):
        numeric = finite_diff_grad(total, tiny_lora_model.adapters.get(name), h=1e-6)
        error = np.abs(grads[name] - numeric).max() / max(np.abs(numeric).max(), 1e-6)
        assert error < 1e-4, name


@pytest.mark.slow
def test_objective_gradient_over_every_adapter(tiny_components, image_pair, condition):
    cfg = BackboneConfig(num_blocks=2, width=16, num_heads=2, ffn_width=32, text_width=8, text_tokens=6,
                         latent_channels=4, seed=2)
    model = LinearDiT(cfg, 'float64').inject_lora(LoraConfig(rank=2, alpha=2.0, include_ffn=True), Rng(8))
    _randomize_b(model)
    x_L, x_H = image_pair
    weights = LossWeights()

    def total(_):
        return compute_objective(model, tiny_components, weights, x_L, x_H, condition, Rng(23), 650, 1e-6,
                                 need_grad=False).total

    grads = compute_objective(model, tiny_components, weights, x_L, x_H, condition, Rng(23), 650, 1e-6).grads
    for name, tensor in model.adapters.named_parameters():
        numeric = finite_diff_grad(total, tensor, h=1e-6)
        assert np.abs(grads[name] - numeric).max() <= 1e-4 * max(np.abs(numeric).max(), 1e-6), name


def test_train_step_only_updates_adapters(tiny_lora_model, tiny_components, image_pair):
    params = {name: value.copy() for name, value in tiny_lora_model.params.items()}
    before = {name: value.copy() for name, value in tiny_lora_model.adapters.named_parameters()}
    cfg = TrainConfig(steps=1, batch=2, crop=32)
    optimizer = AdamW(cfg.lr, cfg.betas, cfg.adam_eps, cfg.weight_decay)
    ema = AdapterEma(tiny_lora_model.adapters, cfg.ema_decay)

    record = train_step(tiny_lora_model, image_pair, tiny_components, cfg, optimizer, ema, Rng(0), step=1)

    assert math.isfinite(record.total) and 70 <= record.t <= 650
    assert all(np.array_equal(tiny_lora_model.params[name], value) for name, value in params.items())
    assert any(not np.array_equal(tiny_lora_model.adapters.get(name), value) for name, value in before.items())
    assert tiny_lora_model.forward_calls == 4


def test_train_step_needs_adapters(tiny_model, tiny_components, image_pair):
    cfg = TrainConfig(steps=1, batch=2, crop=32)
    optimizer = AdamW(cfg.lr, cfg.betas, cfg.adam_eps, cfg.weight_decay)

    with pytest.raises(RuntimeError):
        train_step(tiny_model, image_pair, tiny_components, cfg, optimizer, None, Rng(0))


def test_clip_grad_norm():
    grads = {'a': np.array([3.0]), 'b': np.array([4.0])}

    assert clip_grad_norm(grads, 1.0) == 5.0
    assert math.sqrt(grads['a'][0] ** 2 + grads['b'][0] ** 2) == pytest.approx(1.0, abs=1e-6)
    assert clip_grad_norm({'a': np.array([0.5])}, 1.0) == 0.5


def test_adamw_first_step_moves_by_the_learning_rate():
    params = {'w': np.array([1.0, -1.0])}
    optimizer = AdamW(0.01, (0.9, 0.999), 1e-12, 0.0)
    optimizer.step(params, {'w': np.array([2.0, -3.0])})

    assert np.allclose(params['w'], [0.99, -0.99])
    with pytest.raises(ValueError):
        optimizer.step(params, {'v': np.zeros(1)})


def test_ema_tracks_adapters(tiny_lora_model):
    ema = AdapterEma(tiny_lora_model.adapters, 0.5)
    name = 'blocks.0.self_attn.to_q.lora_B'
    tiny_lora_model.adapters.get(name)[...] = 2.0
    ema.update(tiny_lora_model.adapters)

    assert np.allclose(ema.shadow.get(name), 1.0)


# ---------------------------------------------------------------- restore and end-to-end runs


def test_restore_image_keeps_the_input_size(tiny_lora_model, tiny_components):
    x = upscale_nearest(Rng(9).uniform((3, 5, 6)), 2)
    calls = tiny_lora_model.forward_calls

    restored = restore_image(tiny_lora_model, tiny_components.codec, tiny_components.prompts,
                             tiny_components.scheduler, x, 900)

    assert restored.shape == (3, 10, 12)
    assert tiny_lora_model.forward_calls == calls + 1


def test_upscale_nearest():
    x = np.arange(4.0).reshape(1, 2, 2)

    assert upscale_nearest(x, 2)[0].tolist() == [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]]
    with pytest.raises(ValueError):
        upscale_nearest(x, 0)


def test_prompt_tags_can_come_from_the_reference(image_pair):
    x_L, x_H = image_pair
    from_input = PromptEngine(PromptConfig(text_tokens=6, text_width=8, vocab_size=97), 'float64')
    from_reference = PromptEngine(PromptConfig(text_tokens=6, text_width=8, vocab_size=97, tags_from_hq=True),
                                  'float64')

    assert tag_source(x_L, x_H, from_input) is x_L
    assert tag_source(x_L, x_H, from_reference) is x_H


def test_training_run_exports_adapters(tiny_settings):
    result = run_training(tiny_settings)

    assert len(result.history) == tiny_settings.train.steps
    assert result.best_step == 2
    assert result.state.adapters is not None
    assert not result.stopped_early


def test_identical_training_runs_give_identical_checkpoints(tmp_path, tiny_settings):
    twin = RunConfigParser.from_dict(RunConfigParser.to_dict(tiny_settings))
    paths = []

    for index, settings in enumerate((tiny_settings, twin)):
        result = run_training(settings)
        path = tmp_path / f'run{index}.ckpt'
        save_checkpoint(str(path), result.state, RunConfigParser.to_dict(settings), result.ema)
        paths.append(path)

    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_training_lowers_the_loss_and_improves_on_the_prior(tiny_settings):
    train = TrainConfig(steps=30, batch=1, crop=32, lr=5e-4, dataset_size=1, val_size=0, log_every=10,
                        use_ema_for_eval=False, weights=LossWeights(lambda_a=0.0, lambda_c=0.0))
    degradation = DegradationConfig(blur_sigma_range=(0.8, 0.8), noise_sigma_range=(0.0, 0.0))
    settings = Settings(tiny_settings.backbone, tiny_settings.lora, degradation, tiny_settings.prompt, train,
                        seed=tiny_settings.seed, dtype='float64')
    components = build_components(settings)
    x_L, x_H = make_training_data(settings)[0].sample(1, 1, 32)

    def restored_error(state: LinearDiT) -> float:
        x_hat = restore_image(state, components.codec, components.prompts, components.scheduler, x_L[0],
                              train.sched.tau_g)
        return float(np.mean((x_hat - x_H[0]) ** 2))

    before = restored_error(new_state(settings))
    result = run_training(settings)
    totals = [record.total for record in result.history]

    assert np.mean(totals[-5:]) < np.mean(totals[:5])
    assert restored_error(result.state) < before


def test_training_stops_on_the_stop_event(tiny_settings):
    tiny_settings.stop_event.set()
    result = run_training(tiny_settings)

    assert result.stopped_early
    assert len(result.history) == 1


def test_pruning_with_the_full_budget_keeps_every_block(tiny_settings):
    tiny_settings.prune = PruneConfig(calib_steps=2, calib_size=2, keep_ratio=1.0)
    state = run_training(tiny_settings).state

    run = run_pruning(tiny_settings, state)

    assert run.outcome.report.kept == [1, 2, 3]
    assert run.outcome.pruned.parameter_count() == run.outcome.merged.parameter_count()
    assert run.validation.passed


def test_pruning_drops_middle_blocks_under_a_tight_budget(tiny_settings):
    tiny_settings.prune = PruneConfig(calib_steps=2, calib_size=2, keep_ratio=0.7)
    state = run_training(tiny_settings).state

    run = run_pruning(tiny_settings, state)

    assert run.outcome.report.kept == [1, 3]
    assert run.outcome.pruned.num_blocks == 2
    assert run.outcome.report.calib_steps == 2


def test_strategies_share_one_budget_and_saliency_passes_the_gate(tiny_settings):
    backbone = dataclasses.replace(tiny_settings.backbone, num_blocks=5)
    settings = Settings(backbone, tiny_settings.lora, tiny_settings.degradation, tiny_settings.prompt,
                        tiny_settings.train, seed=tiny_settings.seed, dtype='float64')
    state = run_training(settings).state

    runs = {}
    for strategy in ('saliency', 'tail', 'random'):
        settings.prune = PruneConfig(calib_steps=2, calib_size=2, keep_ratio=0.75, strategy=strategy)
        runs[strategy] = run_pruning(settings, state)
    reports = {strategy: run.outcome.report for strategy, run in runs.items()}

    budget = reports['saliency'].budget
    assert all(report.budget == budget and report.total_params_after <= budget for report in reports.values())
    assert all(len(report.kept) == 3 and report.kept[0] == 1 and report.kept[-1] == 5
               for report in reports.values())
    assert reports['tail'].kept == [1, 2, 5]

    saliency = reports['saliency'].saliency
    kept_mass = {strategy: sum(saliency[block - 1] for block in report.kept)
                 for strategy, report in reports.items()}
    assert kept_mass['saliency'] >= max(kept_mass['tail'], kept_mass['random'])
    assert runs['saliency'].validation.passed


def test_calibration_stops_early_on_the_stop_event(tiny_model, tiny_components):
    images = generate_toy_dataset(2, (16, 16), seed=4, dtype=np.float64)
    pairs = make_eval_pairs(images, DegradationConfig())
    stop_event = threading.Event()
    stop_event.set()

    acc = calibrate(tiny_model, pairs, tiny_components, LossWeights(), steps=3, batch=1, seed=0, eps_stat=1e-6,
                    tau_g=900, stop_event=stop_event)

    assert acc.steps == 1
    assert acc.is_finalized
    assert not any(name.startswith('patch_in.') for name in acc.fisher)
