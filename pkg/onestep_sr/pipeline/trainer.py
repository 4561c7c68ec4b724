import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from onestep_sr.backbone.linear_dit import LinearDiT
from onestep_sr.backbone.lora import LoraSet
from onestep_sr.models.run_configs import LossWeights, TrainConfig
from onestep_sr.pipeline.dataset import ImagePair, PairedDataset
from onestep_sr.pipeline.evaluation import evaluate
from onestep_sr.pipeline.metrics import MetricsRecord
from onestep_sr.services.latent_codec import Latent, LatentCodec
from onestep_sr.services.objectives import LossParts, align_loss, cons_loss, rec_loss, total_loss
from onestep_sr.services.perceptual import PerceptualExtractor
from onestep_sr.services.prompt_engine import PromptCondition, PromptEngine
from onestep_sr.services.scheduler import Scheduler
from onestep_sr.services.tensor_ops import Rng

_STEP_KEY = 0x57E9


@dataclass
class ObjectiveResult:
    """
    Attributes:
        parts (LossParts): Reconstruction (carrying its pixel and perceptual weights), alignment and consistency.
        total (float): rec + lambda_a * align + lambda_c * cons.
        grads (Dict[str, np.ndarray]): Gradients of `total` over the trainable tensors; empty without need_grad.
        t (int): Alignment timestep drawn for the step.
    """
    parts: LossParts
    total: float
    grads: Dict[str, np.ndarray]
    t: int


@dataclass
class LossRecord:
    step: int
    rec: float
    align: float
    cons: float
    total: float
    t: int
    grad_norm: float
    lr: float


@dataclass
class Components:
    """
    Frozen pieces shared by training, validation and calibration.
    """
    codec: LatentCodec
    prompts: PromptEngine
    scheduler: Scheduler
    perceptual: PerceptualExtractor


def _add_into(target: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
    for name, grad in grads.items():
        target[name] = target[name] + grad if name in target else grad


def compute_objective(state: LinearDiT, components: Components, weights: LossWeights, x_L: np.ndarray,
                      x_H: np.ndarray, cond: PromptCondition, rng: Rng, tau_g: int, eps_stat: float,
                      need_grad: bool = True, with_consistency: bool = True,
                      detach_align: bool = False) -> ObjectiveResult:
    """
    One-step restore of z_L, decode, reconstruction loss, one matched (t, eps) perturbation of the restored and
    reference latents, frozen-prior alignment and adapter consistency. With need_grad the analytic gradient of
    the weighted total flows back through every branch into the trainable tensors of `state`.

    Args:
        detach_align (bool): Stop the alignment and consistency gradients at the restored latent.

    Raises:
        FloatingPointError: If a loss part is not finite.
    """
    codec, scheduler = components.codec, components.scheduler
    z_L = codec.encode(x_L)
    z_H = codec.encode(x_H)

    sigma_g = scheduler.sigma(tau_g)
    residual = state.forward(z_L.data, tau_g, cond, use_adapters=True)
    restore_tape = state.last_tape
    z_hat = (z_L.data - sigma_g * residual).astype(z_L.data.dtype, copy=False)

    x_hat = codec.decode(Latent(z_hat, z_L.hidden), clamp=False)
    rec, d_x_hat = rec_loss(x_hat, x_H, weights, components.perceptual, need_grad)

    pair = scheduler.build_noise_pair(rng, z_hat, z_H.data)
    q_hat = state.forward(pair.z_tilde_hat, pair.t, cond, use_adapters=False)
    frozen_tape = state.last_tape
    q_H = state.forward(pair.z_tilde_H, pair.t, cond, use_adapters=False)
    align, d_q_hat = align_loss(q_hat, q_H, eps_stat, need_grad)

    cons, d_q_adapt, adapt_tape = 0.0, None, None
    if with_consistency:
        q_adapt = state.forward(pair.z_tilde_hat, pair.t, cond, use_adapters=True)
        adapt_tape = state.last_tape
        cons, d_q_adapt = cons_loss(q_adapt, q_hat, need_grad)

    parts = LossParts(rec, align, cons)
    try:
        total = total_loss(parts, weights)
    except FloatingPointError:
        logging.error(f"Objective diagnostics: t={pair.t}, tau_g={tau_g}, |z_hat|max={np.abs(z_hat).max():.3e}, "
                      f"|residual|max={np.abs(residual).max():.3e}")
        raise

    if not need_grad:
        return ObjectiveResult(parts, total, {}, pair.t)

    grads: Dict[str, np.ndarray] = {}
    d_z_hat = codec.decode_backward(d_x_hat)

    d_frozen = weights.lambda_a * d_q_hat
    d_perturbed = None
    if adapt_tape is not None:
        adapt_grads = state.backward(weights.lambda_c * d_q_adapt, adapt_tape)
        _add_into(grads, adapt_grads.params)
        d_frozen = d_frozen - weights.lambda_c * d_q_adapt
        d_perturbed = adapt_grads.latent

    frozen_latent = state.backward(d_frozen, frozen_tape).latent
    d_perturbed = frozen_latent if d_perturbed is None else d_perturbed + frozen_latent

    if not detach_align:
        d_z_hat = d_z_hat + scheduler.alpha(pair.t) * d_perturbed

    _add_into(grads, state.backward(-sigma_g * d_z_hat, restore_tape).params)

    return ObjectiveResult(parts, total, grads, pair.t)


def clip_grad_norm(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """
    Rescales the gradients in place so their global L2 norm is at most max_norm; returns the norm before clipping.
    """
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / (norm + 1e-6)
        for name in grads:
            grads[name] = grads[name] * factor

    return norm


class AdamW:
    """
    Adam with decoupled weight decay over named tensors that are updated in place.
    """
    lr: float
    step_count: int

    def __init__(self, lr: float, betas: Tuple[float, float], eps: float, weight_decay: float):
        self.lr = lr
        self.__beta1, self.__beta2 = betas
        self.__eps = eps
        self.__weight_decay = weight_decay
        self.__m: Dict[str, np.ndarray] = {}
        self.__v: Dict[str, np.ndarray] = {}
        self.step_count = 0

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
        """
        Raises:
            ValueError: If a gradient has no matching parameter.
        """
        unknown = set(grads) - set(params)
        if unknown:
            raise ValueError(f"Gradients for unknown parameters: {', '.join(sorted(unknown))}")

        self.step_count += 1
        bias1 = 1.0 - self.__beta1 ** self.step_count
        bias2 = 1.0 - self.__beta2 ** self.step_count

        for name, grad in grads.items():
            param = params[name]
            m = self.__m.setdefault(name, np.zeros_like(param))
            v = self.__v.setdefault(name, np.zeros_like(param))

            m *= self.__beta1
            m += (1.0 - self.__beta1) * grad
            v *= self.__beta2
            v += (1.0 - self.__beta2) * grad * grad

            param *= 1.0 - self.lr * self.__weight_decay
            param -= (self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.__eps)).astype(param.dtype, copy=False)


class AdapterEma:
    """
    Exponential moving average of the adapter factors; starts equal to them.
    """
    decay: float
    shadow: LoraSet

    def __init__(self, adapters: LoraSet, decay: float):
        self.decay = decay
        self.shadow = adapters.copy()

    def update(self, adapters: LoraSet):
        for name, value in adapters.named_parameters():
            shadow = self.shadow.get(name)
            shadow *= self.decay
            shadow += (1.0 - self.decay) * value


def tag_source(x_L: np.ndarray, x_H: np.ndarray, prompts: PromptEngine) -> np.ndarray:
    return x_H if prompts.cfg.tags_from_hq else x_L


def train_step(state: LinearDiT, batch: Tuple[np.ndarray, np.ndarray], components: Components, cfg: TrainConfig,
               optimizer: AdamW, ema: Optional[AdapterEma], rng: Rng, step: int = 0) -> LossRecord:
    """
    Prompt build, dual encode, one-step restore, decode, one (t, eps) draw, three losses, clipped AdamW update
    of the adapter factors only, then the EMA update.

    Raises:
        RuntimeError: If the backbone carries no adapters.
        FloatingPointError: On a non-finite loss; no parameter is touched in that case.
    """
    if state.adapters is None:
        raise RuntimeError("train_step needs injected LoRA adapters")

    x_L, x_H = batch
    cond = components.prompts.build_condition_batch(tag_source(x_L, x_H, components.prompts))
    weights = cfg.weights.for_objective(cfg.objective)

    result = compute_objective(state, components, weights, x_L, x_H, cond, rng, cfg.sched.tau_g, cfg.eps_stat,
                               detach_align=cfg.detach_align)

    grad_norm = clip_grad_norm(result.grads, cfg.grad_clip)
    optimizer.step(state.trainable_parameters(), result.grads)
    if ema is not None:
        ema.update(state.adapters)

    return LossRecord(step, result.parts.rec, result.parts.align, result.parts.cons, result.total, result.t,
                      grad_norm, optimizer.lr)


@dataclass
class TrainResult:
    """
    Attributes:
        state (LinearDiT): Backbone carrying the exported adapters (best validation PSNR when validated).
        ema (Optional[LoraSet]): Final EMA adapters.
        history (List[LossRecord]): One record per completed step.
        evaluations (List[Tuple[int, MetricsRecord]]): Validation records by step.
        best_step (Optional[int]): Step of the exported adapters, None when never validated.
        stopped_early (bool): The stop event interrupted the loop.
    """
    state: LinearDiT
    ema: Optional[LoraSet]
    history: List[LossRecord] = field(default_factory=list)
    evaluations: List[Tuple[int, MetricsRecord]] = field(default_factory=list)
    best_step: Optional[int] = None
    stopped_early: bool = False


class Trainer:
    """
    Single-threaded training loop: per-step seeded streams, periodic logging, validation with the EMA adapters
    and best-PSNR export. A set stop event finishes the current step and returns.
    """
    cfg: TrainConfig

    def __init__(self, state: LinearDiT, components: Components, cfg: TrainConfig, dataset: PairedDataset,
                 val_pairs: Sequence[ImagePair], seed: int, stop_event: Optional[threading.Event] = None):
        if state.adapters is None:
            raise RuntimeError("Trainer needs a backbone with injected LoRA adapters")

        self.state = state
        self.components = components
        self.cfg = cfg
        self.dataset = dataset
        self.val_pairs = list(val_pairs)
        self.optimizer = AdamW(cfg.lr, cfg.betas, cfg.adam_eps, cfg.weight_decay)
        self.ema = AdapterEma(state.adapters, cfg.ema_decay)
        self.__seed = seed
        self.__stop_event = stop_event or threading.Event()

    def __export_adapters(self) -> LoraSet:
        return self.ema.shadow if self.cfg.use_ema_for_eval else self.state.adapters

    def validate(self) -> MetricsRecord:
        return evaluate(self.state.with_adapters(self.__export_adapters()), self.val_pairs, self.components.codec,
                        self.components.prompts, self.components.scheduler, self.cfg.sched.tau_g)

    def run(self) -> TrainResult:
        cfg = self.cfg
        result = TrainResult(self.state, None)
        best_psnr, best_adapters = -math.inf, None

        logging.info(f"Training {self.state.adapters.parameter_count()} adapter parameters for {cfg.steps} steps, "
                     f"batch {cfg.batch}, crop {cfg.crop}, objective {cfg.objective}")

        for step in range(1, cfg.steps + 1):
            batch = self.dataset.sample(step, cfg.batch, cfg.crop)
            record = train_step(self.state, batch, self.components, cfg, self.optimizer, self.ema,
                                Rng(self.__seed, (_STEP_KEY, step)), step)
            result.history.append(record)

            if step == 1 or step % cfg.log_every == 0:
                logging.info(f"step {step}/{cfg.steps}: total={record.total:.5f} rec={record.rec:.5f} "
                             f"align={record.align:.5f} cons={record.cons:.6f} t={record.t} "
                             f"grad_norm={record.grad_norm:.4f} lr={record.lr:g}")

            last = step == cfg.steps or self.__stop_event.is_set()
            if self.val_pairs and cfg.eval_every > 0 and (step % cfg.eval_every == 0 or last):
                metrics = self.validate()
                result.evaluations.append((step, metrics))
                if metrics.psnr_y > best_psnr:
                    best_psnr, best_adapters, result.best_step = metrics.psnr_y, self.__export_adapters().copy(), step
                    logging.info(f"New best validation PSNR-Y {best_psnr:.3f} dB at step {step}")

            if self.__stop_event.is_set():
                logging.warning(f"Training interrupted after step {step}")
                result.stopped_early = True
                break

        exported = best_adapters if best_adapters is not None else self.__export_adapters().copy()
        result.state = self.state.with_adapters(exported)
        result.ema = self.ema.shadow

        return result
