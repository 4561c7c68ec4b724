import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

from onestep_sr.models.default_values_and_options import DefaultValuesAndOptions

MONITORED_METRICS = ('psnr_y', 'ssim_y')


@dataclass
class ValidationReport:
    """
    Attributes:
        passed (bool): Every monitored metric within the threshold and the budget respected.
        drops (Dict[str, float]): Relative degradation per metric (negative means improvement).
        failed (List[str]): Metrics over the threshold, plus "params" on a budget violation.
        threshold (float): Tolerated relative drop.
    """
    passed: bool
    drops: Dict[str, float]
    failed: List[str] = field(default_factory=list)
    threshold: float = DefaultValuesAndOptions.get_drop_threshold()


def validate_pruned(full_metrics: Mapping[str, float], pruned_metrics: Mapping[str, float],
                    threshold: float = DefaultValuesAndOptions.get_drop_threshold(),
                    budget: Optional[int] = None,
                    monitored: Sequence[str] = MONITORED_METRICS,
                    lower_is_better: Sequence[str] = ()) -> ValidationReport:
    """
    Post-prune gate: passes iff every monitored metric degrades by at most `threshold` (relative) and,
    when a budget is given, the pruned "params" entry fits it.

    Raises:
        ValueError: If a monitored metric (or "params" with a budget) is missing from either record.
    """
    drops = {}
    failed = []

    for name in monitored:
        if name not in full_metrics or name not in pruned_metrics:
            raise ValueError(f'Metric "{name}" missing from the full or pruned metrics record')

        reference = float(full_metrics[name])
        value = float(pruned_metrics[name])
        scale = abs(reference) if reference != 0 else 1.0
        drop = (value - reference) / scale if name in lower_is_better else (reference - value) / scale

        drops[name] = drop
        if drop > threshold:
            failed.append(name)

    if budget is not None:
        if 'params' not in pruned_metrics:
            raise ValueError('Metric "params" missing from the pruned metrics record')
        if pruned_metrics['params'] > budget:
            failed.append('params')

    report = ValidationReport(not failed, drops, failed, threshold)
    if failed:
        logging.warning(f"Pruned model failed the {threshold:.0%} gate on: {', '.join(failed)}")
    else:
        logging.info(f"Pruned model passed the {threshold:.0%} gate, drops: {drops}")

    return report
