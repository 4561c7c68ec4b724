import itertools
import logging
from dataclasses import dataclass, asdict, field
from typing import Dict, List, Sequence, Optional

import numpy as np

from onestep_sr.backbone.linear_dit import LinearDiT
from onestep_sr.pruning.fisher import CalibAccumulator
from onestep_sr.services.tensor_ops import Rng

# Block indices in this module are 1-based, matching kept-set reports.


@dataclass
class PruneReport:
    """
    Attributes:
        saliency (List[float]): Per-block S_l.
        sizes (List[int]): Per-block parameter counts P_l.
        fixed (int): Non-prunable parameter count P_fix.
        budget (int): Deployment budget P_star.
        kept (List[int]): Sorted kept block indices.
        total_params_before (int): Dense parameter count.
        total_params_after (int): Pruned parameter count.
        strategy (str): Selector that produced the kept set.
    """
    saliency: List[float]
    sizes: List[int]
    fixed: int
    budget: int
    kept: List[int]
    total_params_before: int
    total_params_after: int
    strategy: str = 'saliency'
    calib_steps: int = 0
    extra: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def saliency_of(weights: Dict[str, np.ndarray], fisher: Dict[str, np.ndarray], eps_p: float) -> float:
    """
    Sum of w^2 / (F + eps_p) over the given tensors.
    """
    if eps_p <= 0:
        raise ValueError(f"eps_p must be positive, got {eps_p}")

    total = 0.0
    for name, weight in weights.items():
        w = weight.astype(np.float64)
        total += float(np.sum(w * w / (fisher[name] + eps_p)))

    return total


def block_saliency(state: LinearDiT, acc: CalibAccumulator, eps_p: float) -> List[float]:
    """
    Reciprocal-curvature-weighted score of every block of the (merged) backbone.

    Raises:
        RuntimeError: If the accumulator is not finalized.
    """
    fisher = acc.fisher

    return [saliency_of({name: state.params[name] for name in state.block_parameter_names(block)}, fisher, eps_p)
            for block in range(state.num_blocks)]


def block_magnitude(state: LinearDiT) -> List[float]:
    return [float(sum(np.sum(state.params[name].astype(np.float64) ** 2)
                      for name in state.block_parameter_names(block)))
            for block in range(state.num_blocks)]


def block_sizes(state: LinearDiT) -> List[int]:
    return [state.block_parameter_count(block) for block in range(state.num_blocks)]


def budget_from_ratio(state: LinearDiT, keep_ratio: float) -> int:
    """
    P_fix plus the given fraction of the transformer-block parameters.
    """
    if not 0.0 < keep_ratio <= 1.0:
        raise ValueError(f"keep_ratio must lie in (0, 1], got {keep_ratio}")

    return state.fixed_parameter_count() + int(round(keep_ratio * sum(block_sizes(state))))


def _check_endpoints(sizes: Sequence[int], p_fix: int, p_star: int, num_blocks: int):
    if num_blocks < 2 or len(sizes) != num_blocks:
        raise ValueError(f"Need at least 2 blocks with one size each, got L={num_blocks} and {len(sizes)} sizes")
    if p_fix + sizes[0] + sizes[-1] > p_star:
        raise ValueError(f"Budget {p_star} cannot hold P_fix={p_fix} plus the first and last block "
                         f"({sizes[0]} + {sizes[-1]})")


def _greedy_fill(order: Sequence[int], sizes: Sequence[int], p_fix: int, p_star: int, num_blocks: int) -> List[int]:
    kept = {1, num_blocks}
    used = p_fix + sizes[0] + sizes[-1]

    for block in order:
        if used + sizes[block - 1] <= p_star:
            kept.add(block)
            used += sizes[block - 1]

    return sorted(kept)


def select_blocks(saliency: Sequence[float], sizes: Sequence[int], p_fix: int, p_star: int,
                  num_blocks: int) -> List[int]:
    """
    Keeps blocks 1 and L, then adds the remaining blocks by descending saliency (lower index first on ties)
    whenever they still fit the budget.

    Raises:
        ValueError: If the endpoints alone exceed the budget.
    """
    _check_endpoints(sizes, p_fix, p_star, num_blocks)
    order = sorted(range(2, num_blocks), key=lambda block: (-saliency[block - 1], block))

    return _greedy_fill(order, sizes, p_fix, p_star, num_blocks)


def brute_force_select(saliency: Sequence[float], sizes: Sequence[int], p_fix: int, p_star: int,
                       num_blocks: int) -> List[int]:
    """
    Exhaustive maximization of the kept saliency under the budget; ties go to the lexicographically
    smallest kept set. Only meant for L <= 16.
    """
    if num_blocks > 16:
        raise ValueError(f"brute_force_select supports at most 16 blocks, got {num_blocks}")
    _check_endpoints(sizes, p_fix, p_star, num_blocks)

    middle = list(range(2, num_blocks))
    best_value, best_set = None, None

    for choice in itertools.product((False, True), repeat=len(middle)):
        kept = [1] + [block for block, taken in zip(middle, choice) if taken] + [num_blocks]
        if p_fix + sum(sizes[block - 1] for block in kept) > p_star:
            continue

        value = sum(saliency[block - 1] for block in kept)
        if best_value is None or value > best_value or (value == best_value and kept < best_set):
            best_value, best_set = value, kept

    return best_set


def tail_select(sizes: Sequence[int], p_fix: int, p_star: int, num_blocks: int) -> List[int]:
    """
    Baseline: keeps the earliest blocks that fit, i.e. drops the last ones (block L is always kept).
    """
    _check_endpoints(sizes, p_fix, p_star, num_blocks)

    return _greedy_fill(range(2, num_blocks), sizes, p_fix, p_star, num_blocks)


def random_select(sizes: Sequence[int], p_fix: int, p_star: int, num_blocks: int, rng: Rng) -> List[int]:
    _check_endpoints(sizes, p_fix, p_star, num_blocks)
    order = [int(index) + 2 for index in rng.permutation(num_blocks - 2)]

    return _greedy_fill(order, sizes, p_fix, p_star, num_blocks)


def select_by_strategy(strategy: str, state: LinearDiT, p_star: int, acc: Optional[CalibAccumulator] = None,
                       eps_p: float = 1e-8, rng: Optional[Rng] = None) -> PruneReport:
    """
    Runs one named selector ("saliency", "tail", "random", "magnitude") and reports the kept set.
    """
    sizes = block_sizes(state)
    p_fix = state.fixed_parameter_count()
    num_blocks = state.num_blocks

    if strategy == 'saliency':
        if acc is None:
            raise ValueError("Saliency selection needs a finalized calibration accumulator")
        scores = block_saliency(state, acc, eps_p)
        kept = select_blocks(scores, sizes, p_fix, p_star, num_blocks)
    elif strategy == 'magnitude':
        scores = block_magnitude(state)
        kept = select_blocks(scores, sizes, p_fix, p_star, num_blocks)
    elif strategy == 'tail':
        scores = [0.0] * num_blocks
        kept = tail_select(sizes, p_fix, p_star, num_blocks)
    elif strategy == 'random':
        scores = [0.0] * num_blocks
        kept = random_select(sizes, p_fix, p_star, num_blocks, rng or Rng(0))
    else:
        raise ValueError(f'Unknown pruning strategy "{strategy}"')

    after = p_fix + sum(sizes[block - 1] for block in kept)
    logging.info(f"{strategy} selection kept {kept} ({after}/{state.parameter_count()} params, budget {p_star})")

    return PruneReport(scores, sizes, p_fix, p_star, kept, state.parameter_count(), after, strategy,
                       acc.steps if acc is not None else 0)
