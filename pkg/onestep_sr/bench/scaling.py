import logging
import math
import os
import platform
import time
from dataclasses import dataclass, asdict, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
import psutil
from scipy import stats

from onestep_sr.backbone.linear_dit import ATTENTION_KERNELS, LinearDiT
from onestep_sr.bench.mac_counter import mac_count
from onestep_sr.models.backbone_config import BackboneConfig
from onestep_sr.models.default_values_and_options import DefaultValuesAndOptions
from onestep_sr.pipeline.metrics import LatencyTimer
from onestep_sr.services.prompt_engine import Vocabulary, build_prompt, encode_prompt
from onestep_sr.services.tensor_ops import Rng, gaussian_fill

_THREAD_VARIABLES = ('OMP_NUM_THREADS', 'OPENBLAS_NUM_THREADS', 'MKL_NUM_THREADS')
_MIN_RESOLUTION_MULTIPLE = 1000


@dataclass
class BenchResult:
    """
    Median forward latency per token count for the linear kernel and the quadratic reference.

    Attributes:
        sizes (List[int]): Token counts N, ascending.
        grids (List[Tuple[int, int]]): Latent grid (h, w) used for each N.
        times_linear (List[float]): Median milliseconds per forward, linear kernel.
        times_quadratic (List[float]): Median milliseconds per forward, quadratic reference.
        ratios_linear (List[float]): time(N_i+1) / time(N_i).
        ratios_quadratic (List[float]): time(N_i+1) / time(N_i).
        macs_linear (List[int]): Analytic backbone MACs per size.
        mac_time_spearman (float): Rank correlation of MACs and linear-kernel time (nan for fewer than 3 sizes).
        environment (dict): dtype, thread settings and machine description.
    """
    sizes: List[int]
    grids: List[Tuple[int, int]]
    times_linear: List[float] = field(default_factory=list)
    times_quadratic: List[float] = field(default_factory=list)
    ratios_linear: List[float] = field(default_factory=list)
    ratios_quadratic: List[float] = field(default_factory=list)
    macs_linear: List[int] = field(default_factory=list)
    mac_time_spearman: float = math.nan
    environment: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def environment_metadata(dtype: str) -> Dict[str, object]:
    memory = psutil.virtual_memory()
    frequency = psutil.cpu_freq()

    return {
        'dtype': dtype,
        'threads': {name: os.environ.get(name) for name in _THREAD_VARIABLES},
        'cpu_physical': psutil.cpu_count(logical=False),
        'cpu_logical': psutil.cpu_count(logical=True),
        'cpu_mhz': frequency.current if frequency is not None else None,
        'memory_total': memory.total,
        'platform': platform.platform(),
        'numpy': np.__version__,
        'tool_version': DefaultValuesAndOptions.get_util_version(),
    }


def latent_grid(tokens: int) -> Tuple[int, int]:
    """
    Most square (h, w) factorization with h * w == tokens.
    """
    if tokens < 1:
        raise ValueError(f"Token count must be positive, got {tokens}")

    height = int(math.isqrt(tokens))
    while tokens % height:
        height -= 1

    return height, tokens // height


def _ratios(times: Sequence[float]) -> List[float]:
    return [later / earlier if earlier > 0 else math.inf for earlier, later in zip(times, times[1:])]


def scaling_benchmark(cfg: BackboneConfig, sizes: Sequence[int], dtype: str = 'float32',
                      warmup: int = DefaultValuesAndOptions.get_warmup_reps(),
                      reps: int = DefaultValuesAndOptions.get_timed_reps(),
                      kernels: Sequence[str] = ATTENTION_KERNELS, seed: int = 0) -> BenchResult:
    """
    Times one backbone forward at each token count with the linear kernel and the explicit N x N reference.

    Raises:
        ValueError: If sizes are not ascending positive integers or the repetition counts are too small.
        RuntimeError: If the measured times are too close to the timer resolution; use larger N.
    """
    sizes = [int(n) for n in sizes]
    if not sizes or any(n < 1 for n in sizes) or sizes != sorted(sizes):
        raise ValueError(f"Benchmark sizes must be ascending positive token counts, got {sizes}")
    if warmup < DefaultValuesAndOptions.get_warmup_reps() or reps < DefaultValuesAndOptions.get_timed_reps():
        raise ValueError(f"Benchmarks need >= {DefaultValuesAndOptions.get_warmup_reps()} warmup and "
                         f">= {DefaultValuesAndOptions.get_timed_reps()} timed repetitions")

    model = LinearDiT(cfg, dtype)
    vocab = Vocabulary(DefaultValuesAndOptions.get_vocab_size(), cfg.text_width, seed, dtype=dtype)
    cond = encode_prompt(build_prompt([], DefaultValuesAndOptions.get_template_options_data().default_value),
                         vocab, cfg.text_tokens)
    result = BenchResult(sizes, [latent_grid(n) for n in sizes], environment=environment_metadata(dtype))
    rng = Rng(seed, (0xBE4C,))
    resolution = time.get_clock_info('perf_counter').resolution

    for index, (height, width) in enumerate(result.grids):
        z = gaussian_fill(rng.split(index), (1, cfg.latent_channels, height, width), model.dtype)
        patch = DefaultValuesAndOptions.get_patch()
        result.macs_linear.append(mac_count(cfg, height * patch, width * patch, include_codec=False).total)

        for kernel in kernels:
            for _ in range(warmup):
                model.forward(z, 0, cond, attention=kernel)

            timer = LatencyTimer()
            for _ in range(reps):
                with timer:
                    model.forward(z, 0, cond, attention=kernel)

            median = timer.median_ms()
            if median / 1000.0 < _MIN_RESOLUTION_MULTIPLE * resolution:
                raise RuntimeError(f"Forward at N={sizes[index]} takes {median:.6f} ms, too close to the timer "
                                   f"resolution ({resolution:g} s); benchmark larger token counts")

            (result.times_linear if kernel == 'linear' else result.times_quadratic).append(median)
            logging.info(f"N={sizes[index]} ({height}x{width}) {kernel}: {median:.3f} ms")

    result.ratios_linear = _ratios(result.times_linear)
    result.ratios_quadratic = _ratios(result.times_quadratic)
    if len(sizes) >= 3 and result.times_linear:
        result.mac_time_spearman = float(stats.spearmanr(result.macs_linear, result.times_linear)[0])

    return result
