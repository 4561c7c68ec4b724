import logging
from typing import Optional, Sequence

import numpy as np

from onestep_sr.backbone.linear_dit import LinearDiT
from onestep_sr.bench.mac_counter import mac_count
from onestep_sr.pipeline.dataset import ImagePair
from onestep_sr.pipeline.metrics import (MetricsRecord, LatencyTimer, center_crop_protocol, eval_psnr_y, eval_ssim_y,
                                         summarize)
from onestep_sr.services.latent_codec import LatentCodec, align_to_32, crop_to
from onestep_sr.services.prompt_engine import PromptEngine
from onestep_sr.services.scheduler import Scheduler


def upscale_nearest(x: np.ndarray, factor: int) -> np.ndarray:
    """
    Nearest-neighbour enlargement of a [..., H, W] image by an integer factor.
    """
    if factor < 1:
        raise ValueError(f"Upscale factor must be >= 1, got {factor}")

    return np.repeat(np.repeat(x, factor, axis=-2), factor, axis=-1)


def restore_image(state: LinearDiT, codec: LatentCodec, prompts: PromptEngine, scheduler: Scheduler,
                  x: np.ndarray, tau_g: int, template: Optional[str] = None,
                  tag_source: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Pads a [3, H, W] input to the codec grid, restores it with one backbone evaluation and crops back.
    Tags come from the input image unless another source is given.
    """
    padded, size = align_to_32(x[None], codec.patch)
    z_L = codec.encode(padded)
    cond = prompts.condition_for(x if tag_source is None else tag_source, template)
    z_hat = state.restore(z_L, tau_g, cond, scheduler)

    return crop_to(codec.decode(z_hat), size)[0]


def evaluate(state: LinearDiT, pairs: Sequence[ImagePair], codec: LatentCodec, prompts: PromptEngine,
             scheduler: Scheduler, tau_g: int, template: Optional[str] = None, tags_from_reference: bool = False,
             crop: Optional[int] = None) -> MetricsRecord:
    """
    Restores every degraded input and scores it against its reference on the Y channel.

    Args:
        crop (Optional[int]): Score a central crop of this size instead of the full image.

    Raises:
        ValueError: If there are no pairs.
    """
    if not pairs:
        raise ValueError("evaluate needs at least one image pair")

    timer = LatencyTimer()
    psnrs, ssims, input_psnrs = [], [], []

    for pair in pairs:
        with timer:
            x_hat = restore_image(state, codec, prompts, scheduler, pair.x_L, tau_g, template,
                                  pair.x_H if tags_from_reference else None)

        x_ref, x_in = pair.x_H, pair.x_L
        if crop is not None:
            x_hat, x_ref, x_in = (center_crop_protocol(v, crop) for v in (x_hat, x_ref, x_in))

        psnrs.append(eval_psnr_y(x_hat, x_ref))
        ssims.append(eval_ssim_y(x_hat, x_ref))
        input_psnrs.append(eval_psnr_y(x_in, x_ref))

    height, width = align_to_32(pairs[0].x_L[None], codec.patch)[0].shape[2:]
    macs = mac_count(state.cfg, height, width, patch=codec.patch).total
    record = summarize(psnrs, ssims, state.parameter_count(), macs, timer.median_ms(), input_psnrs)
    logging.info(f"Evaluated {len(pairs)} images: PSNR-Y {record.psnr_y:.3f} dB "
                 f"(input {record.input_psnr_y:.3f} dB), SSIM-Y {record.ssim_y:.4f}")

    return record
