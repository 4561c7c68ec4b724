import dataclasses
import logging
from dataclasses import dataclass, asdict, field
from typing import Dict, List, Optional, Sequence

from onestep_sr.backbone.linear_dit import LinearDiT
from onestep_sr.models.default_values_and_options import DefaultValuesAndOptions
from onestep_sr.models.run_configs import PruneConfig
from onestep_sr.pipeline.calibration import run_prune_calibration
from onestep_sr.pipeline.dataset import ImagePair
from onestep_sr.pipeline.evaluation import evaluate
from onestep_sr.pipeline.runner import build_components, make_calibration_pairs, make_validation_pairs, run_training
from onestep_sr.pipeline.trainer import Components
from onestep_sr.pruning.selection import budget_from_ratio
from onestep_sr.pruning.validation import validate_pruned
from onestep_sr.settings import Settings

PROMPT_VARIANTS = ('lq_prompt', 'hq_prompt', 'hq_prompt+suffix')


@dataclass
class ComparisonTable:
    """
    Rows of one comparison: every row holds its label plus psnr_y, ssim_y, params, macs and latency_ms.
    """
    kind: str
    rows: List[Dict[str, object]] = field(default_factory=list)
    budget: Optional[int] = None

    def to_dict(self) -> dict:
        return asdict(self)


def _row(label_key: str, label, metrics, **extra) -> Dict[str, object]:
    row = {label_key: label}
    row.update(metrics.to_dict())
    row.update(extra)

    return row


def compare_prune_strategies(state: LinearDiT, eval_pairs: Sequence[ImagePair], calib_pairs: Sequence[ImagePair],
                             cfg: PruneConfig, components: Components, settings: Settings,
                             strategies: Sequence[str] = tuple(DefaultValuesAndOptions
                                                               .get_prune_strategy_options_data().get_values()),
                             budget: Optional[int] = None) -> ComparisonTable:
    """
    Prunes the trained model to one budget with every strategy, scores each on held-out pairs and gates it
    against the merged dense model, which is the first row.

    Raises:
        ValueError: If the budget cannot hold the first and last block or a strategy is unknown.
    """
    train = settings.train
    weights = train.weights.for_objective(train.objective)
    merged = state.merge_lora() if state.adapters is not None else state
    budget = budget if budget is not None else (cfg.budget_params or budget_from_ratio(merged, cfg.keep_ratio))

    table = ComparisonTable('prune_strategies', budget=budget)
    dense = evaluate(merged, eval_pairs, components.codec, components.prompts, components.scheduler,
                     train.sched.tau_g)
    table.rows.append(_row('strategy', 'full', dense, kept=list(merged.kept_blocks)))

    for strategy in strategies:
        DefaultValuesAndOptions.get_prune_strategy_options_data().get_value_by_key(strategy)
        outcome = run_prune_calibration(merged, calib_pairs, dataclasses.replace(cfg, strategy=strategy), components,
                                        weights, settings.seed, train.eps_stat, train.sched.tau_g,
                                        settings.prompt.tags_from_hq, budget)
        metrics = evaluate(outcome.pruned, eval_pairs, components.codec, components.prompts, components.scheduler,
                           train.sched.tau_g)
        gate = validate_pruned(dense.to_dict(), metrics.to_dict(), cfg.drop_threshold, budget)
        table.rows.append(_row('strategy', strategy, metrics, kept=outcome.report.kept, passed_gate=gate.passed))

    return table


def timestep_sweep(state: LinearDiT, eval_pairs: Sequence[ImagePair], components: Components,
                   tau_values: Sequence[int]) -> ComparisonTable:
    """
    Fidelity of the one-step restore at several generation timesteps tau_g.
    """
    table = ComparisonTable('tau_g_sweep')
    for tau_g in tau_values:
        metrics = evaluate(state, eval_pairs, components.codec, components.prompts, components.scheduler, tau_g)
        table.rows.append(_row('tau_g', int(tau_g), metrics))

    return table


def prompt_ablation(state: LinearDiT, eval_pairs: Sequence[ImagePair], components: Components,
                    tau_g: int) -> ComparisonTable:
    """
    lq_prompt: tags from the degraded input with the short template; hq_prompt: tags from the reference with the
    short template; hq_prompt+suffix: tags from the reference with the extended template.
    """
    templates = DefaultValuesAndOptions.get_template_options_data().get_values()
    variants = {
        'lq_prompt': (False, templates[0]),
        'hq_prompt': (True, templates[0]),
        'hq_prompt+suffix': (True, templates[1]),
    }

    table = ComparisonTable('prompt_ablation')
    for name in PROMPT_VARIANTS:
        from_reference, template = variants[name]
        metrics = evaluate(state, eval_pairs, components.codec, components.prompts, components.scheduler, tau_g,
                           template, tags_from_reference=from_reference)
        table.rows.append(_row('prompt', name, metrics))

    return table


def objective_ablation(settings: Settings, objectives: Sequence[str] = tuple(
        DefaultValuesAndOptions.get_objective_options_data().get_values())) -> ComparisonTable:
    """
    Trains one model per named objective variant with identical seeds and scores each on the validation pairs.
    """
    components = build_components(settings)
    eval_pairs = make_validation_pairs(settings)
    table = ComparisonTable('objective_ablation')

    for objective in objectives:
        logging.info(f'Objective ablation: training "{objective}"')
        variant = Settings(settings.backbone, settings.lora, settings.degradation, settings.prompt,
                           dataclasses.replace(settings.train, objective=objective), settings.prune, settings.seed,
                           settings.dtype, settings.workers, settings.is_error_log, settings.stop_event)
        with variant:
            trained = run_training(variant)
        metrics = evaluate(trained.state, eval_pairs, components.codec, components.prompts, components.scheduler,
                           settings.train.sched.tau_g)
        table.rows.append(_row('objective', objective, metrics, best_step=trained.best_step))

        if settings.stop_event.is_set():
            break

    return table


def strategy_comparison(settings: Settings, state: LinearDiT,
                        strategies: Optional[Sequence[str]] = None) -> ComparisonTable:
    components = build_components(settings)
    return compare_prune_strategies(state, make_validation_pairs(settings), make_calibration_pairs(settings),
                                    settings.prune, components, settings,
                                    strategies or DefaultValuesAndOptions.get_prune_strategy_options_data()
                                    .get_values())
