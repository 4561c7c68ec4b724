import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

from onestep_sr.backbone.linear_dit import LinearDiT
from onestep_sr.models.run_configs import DegradationConfig
from onestep_sr.pipeline.calibration import PruneOutcome, run_prune_calibration
from onestep_sr.pipeline.dataset import ImagePair, PairedDataset, generate_toy_dataset, make_eval_pairs
from onestep_sr.pipeline.evaluation import evaluate
from onestep_sr.pipeline.metrics import MetricsRecord
from onestep_sr.pipeline.trainer import Components, Trainer, TrainResult
from onestep_sr.pruning.validation import ValidationReport, validate_pruned
from onestep_sr.services.latent_codec import LatentCodec
from onestep_sr.services.perceptual import PerceptualExtractor
from onestep_sr.services.prompt_engine import PromptEngine
from onestep_sr.services.scheduler import Scheduler
from onestep_sr.services.tensor_ops import Rng
from onestep_sr.settings import Settings

_LORA_KEY = 0x10AA
_CALIB_IMAGES_KEY = 2
_VAL_PAIRS_KEY = 3
_CALIB_PAIRS_KEY = 4


@dataclass
class PruneRun:
    outcome: PruneOutcome
    dense_metrics: MetricsRecord
    pruned_metrics: MetricsRecord
    validation: ValidationReport


def build_components(settings: Settings) -> Components:
    return Components(LatentCodec(settings.codec, settings.dtype), PromptEngine(settings.prompt, settings.dtype),
                      Scheduler(settings.train.sched), PerceptualExtractor(settings.seed))


def new_state(settings: Settings) -> LinearDiT:
    """
    Seeded prior backbone with fresh adapters.
    """
    return LinearDiT(settings.backbone, settings.dtype).inject_lora(settings.lora, Rng(settings.seed, (_LORA_KEY,)))


def make_training_data(settings: Settings) -> Tuple[PairedDataset, List[ImagePair]]:
    """
    Procedural HQ training pool and held-out validation pairs drawn from a separate seed.
    """
    cfg = settings.train
    images = generate_toy_dataset(cfg.dataset_size, (cfg.image_size, cfg.image_size), settings.seed,
                                  settings.dtype, settings.executor)
    dataset = PairedDataset(images, settings.degradation, settings.seed, settings.executor)

    return dataset, make_validation_pairs(settings)


def make_calibration_pairs(settings: Settings, count: Optional[int] = None) -> List[ImagePair]:
    size = (settings.train.crop, settings.train.crop)
    images = generate_toy_dataset(count or settings.prune.calib_size, size, settings.seed + _CALIB_IMAGES_KEY,
                                  settings.dtype, settings.executor)

    return make_eval_pairs(images, settings.degradation, _CALIB_PAIRS_KEY)


def make_validation_pairs(settings: Settings) -> List[ImagePair]:
    cfg = settings.train
    if cfg.val_size < 1:
        return []
    images = generate_toy_dataset(cfg.val_size, (cfg.image_size, cfg.image_size), settings.seed + _VAL_PAIRS_KEY,
                                  settings.dtype, settings.executor)

    return make_eval_pairs(images, _held_out(settings.degradation), _VAL_PAIRS_KEY)


def _held_out(degradation: DegradationConfig) -> DegradationConfig:
    return DegradationConfig(degradation.blur_sigma_range, degradation.downscale, degradation.noise_sigma_range,
                             degradation.seed + _VAL_PAIRS_KEY)


def run_training(settings: Settings, state: Optional[LinearDiT] = None) -> TrainResult:
    components = build_components(settings)
    dataset, val_pairs = make_training_data(settings)

    trainer = Trainer(state or new_state(settings), components, settings.train, dataset, val_pairs, settings.seed,
                      settings.stop_event)

    return trainer.run()


def run_pruning(settings: Settings, state: LinearDiT, val_pairs: Optional[List[ImagePair]] = None,
                budget: Optional[int] = None) -> PruneRun:
    """
    Calibrates and prunes, then gates the pruned model against the merged dense model on held-out pairs.
    """
    components = build_components(settings)
    train = settings.train
    weights = train.weights.for_objective(train.objective)

    outcome = run_prune_calibration(state, make_calibration_pairs(settings), settings.prune, components, weights,
                                    settings.seed, train.eps_stat, train.sched.tau_g, settings.prompt.tags_from_hq,
                                    budget, settings.stop_event)

    val_pairs = val_pairs if val_pairs is not None else make_validation_pairs(settings)
    dense_metrics = evaluate(outcome.merged, val_pairs, components.codec, components.prompts, components.scheduler,
                             train.sched.tau_g)
    pruned_metrics = evaluate(outcome.pruned, val_pairs, components.codec, components.prompts,
                              components.scheduler, train.sched.tau_g)
    validation = validate_pruned(dense_metrics.to_dict(), pruned_metrics.to_dict(), settings.prune.drop_threshold,
                                 outcome.report.budget)
    logging.info(f"Pruned model {'passed' if validation.passed else 'failed'} the validation gate: "
                 f"{validation.drops}")

    return PruneRun(outcome, dense_metrics, pruned_metrics, validation)
