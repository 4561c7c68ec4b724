import logging
import threading
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from onestep_sr.backbone.linear_dit import LinearDiT, FIXED_PREFIXES
from onestep_sr.models.run_configs import LossWeights, PruneConfig
from onestep_sr.pipeline.dataset import ImagePair
from onestep_sr.pipeline.trainer import Components, compute_objective
from onestep_sr.pruning.fisher import CalibAccumulator
from onestep_sr.pruning.selection import PruneReport, budget_from_ratio, select_by_strategy
from onestep_sr.services.tensor_ops import Rng

_CALIB_KEY = 0xCA11
_RANDOM_KEY = 0x2A2D
_PROGRESS_EVERY = 50


@dataclass
class PruneOutcome:
    """
    Attributes:
        report (PruneReport): Saliencies, sizes, budget and the kept 1-based block indices.
        pruned (LinearDiT): Merged backbone reduced to the kept blocks.
        merged (LinearDiT): Dense backbone before block removal.
    """
    report: PruneReport
    pruned: LinearDiT
    merged: LinearDiT


def calibrate(merged: LinearDiT, pairs: Sequence[ImagePair], components: Components, weights: LossWeights,
              steps: int, batch: int, seed: int, eps_stat: float, tau_g: int,
              tags_from_hq: bool = False, stop_event: Optional[threading.Event] = None) -> CalibAccumulator:
    """
    K steps of the omega(t)-weighted calibration loss omega(t) * (L_rec + lambda_a * L_align) on a merged
    dense backbone; every block parameter accumulates omega(t) times its squared gradient.
    A set stop event ends calibration after the current step; the proxy is normalized by the steps done.

    Raises:
        ValueError: If the calibration set is empty or the backbone still carries adapters.
    """
    if not pairs:
        raise ValueError("Calibration set is empty")
    if merged.adapters is not None:
        raise ValueError("Calibration runs on a merged backbone without adapters")

    names = [name for name in merged.params if not name.startswith(FIXED_PREFIXES)]
    acc = CalibAccumulator.for_parameters(merged.params, names)
    scheduler = components.scheduler

    for step in range(steps):
        rng = Rng(seed, (_CALIB_KEY, step))
        indices = rng.integers(0, len(pairs) - 1, size=batch)
        x_L = np.stack([pairs[int(i)].x_L for i in indices])
        x_H = np.stack([pairs[int(i)].x_H for i in indices])
        cond = components.prompts.build_condition_batch(x_H if tags_from_hq else x_L)

        result = compute_objective(merged, components, weights, x_L, x_H, cond, rng, tau_g, eps_stat,
                                   with_consistency=False)
        omega = scheduler.omega(result.t)
        acc.accumulate({name: omega * result.grads[name] for name in names}, omega)

        if (step + 1) % _PROGRESS_EVERY == 0 or step + 1 == steps:
            logging.info(f"Calibration step {step + 1}/{steps}: t={result.t} omega={omega:.4f} "
                         f"rec={result.parts.rec:.5f} align={result.parts.align:.5f}")

        if stop_event is not None and stop_event.is_set() and step + 1 < steps:
            logging.warning(f"Calibration interrupted after {step + 1}/{steps} steps")
            break

    acc.finalize()

    return acc


def run_prune_calibration(state: LinearDiT, calib_pairs: Sequence[ImagePair], cfg: PruneConfig,
                          components: Components, weights: LossWeights, seed: int, eps_stat: float, tau_g: int,
                          tags_from_hq: bool = False, budget: Optional[int] = None,
                          stop_event: Optional[threading.Event] = None) -> PruneOutcome:
    """
    Merges the adapters, calibrates the curvature proxy (saliency strategy only), selects the kept blocks
    under the parameter budget and removes the others.

    Args:
        budget (Optional[int]): Absolute budget; defaults to cfg.budget_params, then to cfg.keep_ratio.

    Raises:
        ValueError: If the calibration set is empty or the budget is infeasible.
    """
    if not calib_pairs:
        raise ValueError("Calibration set is empty")

    merged = state.merge_lora() if state.adapters is not None else state
    if budget is None:
        budget = cfg.budget_params if cfg.budget_params is not None else budget_from_ratio(merged, cfg.keep_ratio)

    acc = None
    if cfg.strategy == 'saliency':
        acc = calibrate(merged, calib_pairs, components, weights, cfg.calib_steps, cfg.calib_batch, seed,
                        eps_stat, tau_g, tags_from_hq, stop_event)

    report = select_by_strategy(cfg.strategy, merged, budget, acc, cfg.eps_prune, Rng(seed, (_RANDOM_KEY,)))
    pruned = merged.remove_blocks(report.kept)

    return PruneOutcome(report, pruned, merged)
