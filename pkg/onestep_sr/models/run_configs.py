from dataclasses import dataclass, field
from typing import Optional, Tuple

from onestep_sr.models.default_values_and_options import DefaultValuesAndOptions


@dataclass
class CodecConfig:
    """
    Frozen 32x latent codec settings.

    Attributes:
        patch (int): Spatial compression factor.
        latent_channels (int): Channels exposed to the backbone.
        seed (int): Seed of the orthogonal projection.
    """
    patch: int = DefaultValuesAndOptions.get_patch()
    latent_channels: int = DefaultValuesAndOptions.get_latent_channels()
    seed: int = DefaultValuesAndOptions.get_codec_seed()

    def __post_init__(self):
        full = 3 * self.patch * self.patch
        if self.patch <= 0:
            raise ValueError(f"Codec patch must be positive, got {self.patch}")
        if not 0 < self.latent_channels <= full:
            raise ValueError(f"latent_channels must lie in [1, {full}], got {self.latent_channels}")


@dataclass
class SchedulerConfig:
    """
    Attributes:
        sched_horizon (int): Scheduler horizon T.
        tau_g (int): Fixed one-step generation timestep.
        t_min (int): Lower bound of the alignment timestep range.
        t_max (int): Upper bound of the alignment timestep range (inclusive).
    """
    sched_horizon: int = DefaultValuesAndOptions.get_sched_horizon()
    tau_g: int = DefaultValuesAndOptions.get_prompt_protocol_options_data().default_value[1]
    t_min: int = DefaultValuesAndOptions.get_prompt_protocol_options_data().default_value[2]
    t_max: int = DefaultValuesAndOptions.get_prompt_protocol_options_data().default_value[3]

    def __post_init__(self):
        if not 0 <= self.t_min <= self.t_max <= self.sched_horizon:
            raise ValueError(f"Timestep range must satisfy 0 <= t_min <= t_max <= T, "
                             f"got [{self.t_min}, {self.t_max}] with T={self.sched_horizon}")
        if not 0 < self.tau_g <= self.sched_horizon:
            raise ValueError(f"tau_g must lie in (0, {self.sched_horizon}], got {self.tau_g}")

    @staticmethod
    def from_protocol(protocol: str, sched_horizon: int = DefaultValuesAndOptions.get_sched_horizon()
                      ) -> 'SchedulerConfig':
        _, tau_g, t_min, t_max = DefaultValuesAndOptions.get_prompt_protocol_options_data().get_value_by_key(protocol)

        return SchedulerConfig(sched_horizon, tau_g, t_min, t_max)


@dataclass
class LossWeights:
    lambda2: float = DefaultValuesAndOptions.get_loss_weights()[0]
    lambda_p: float = DefaultValuesAndOptions.get_loss_weights()[1]
    lambda_a: float = DefaultValuesAndOptions.get_loss_weights()[2]
    lambda_c: float = DefaultValuesAndOptions.get_loss_weights()[3]

    def __post_init__(self):
        if min(self.lambda2, self.lambda_p, self.lambda_a, self.lambda_c) < 0:
            raise ValueError(f"Loss weights must be nonnegative, got {self}")

    def for_objective(self, objective: str) -> 'LossWeights':
        """
        Returns the weights of a named training-objective variant ("full", "no_align", "no_cons", "no_perceptual").
        """
        DefaultValuesAndOptions.get_objective_options_data().get_value_by_key(objective)

        if objective == 'no_align':
            return LossWeights(self.lambda2, self.lambda_p, 0.0, self.lambda_c)
        if objective == 'no_cons':
            return LossWeights(self.lambda2, self.lambda_p, self.lambda_a, 0.0)
        if objective == 'no_perceptual':
            return LossWeights(self.lambda2, 0.0, self.lambda_a, self.lambda_c)

        return LossWeights(self.lambda2, self.lambda_p, self.lambda_a, self.lambda_c)


@dataclass
class DegradationConfig:
    """
    Simplified blur -> area downsample -> nearest re-upsample -> Gaussian noise pipeline.

    Attributes:
        blur_sigma_range (Tuple[float, float]): Gaussian blur sigma range in pixels.
        downscale (int): Downsampling factor (4 for 4x SR).
        noise_sigma_range (Tuple[float, float]): Additive noise sigma range on the [0, 1] scale.
        seed (int): Base seed; every sample derives its own stream from it.
    """
    blur_sigma_range: Tuple[float, float] = DefaultValuesAndOptions.get_blur_sigma_range()
    downscale: int = DefaultValuesAndOptions.get_downscale()
    noise_sigma_range: Tuple[float, float] = DefaultValuesAndOptions.get_noise_sigma_range()
    seed: int = DefaultValuesAndOptions.get_default_seed()

    def __post_init__(self):
        self.blur_sigma_range = tuple(self.blur_sigma_range)
        self.noise_sigma_range = tuple(self.noise_sigma_range)

        if self.downscale < 1:
            raise ValueError(f"downscale must be >= 1, got {self.downscale}")
        for name, (lo, hi) in (('blur_sigma_range', self.blur_sigma_range),
                               ('noise_sigma_range', self.noise_sigma_range)):
            if lo < 0 or hi < lo:
                raise ValueError(f"{name} must be a nonnegative [lo, hi] range, got {[lo, hi]}")


@dataclass
class PromptConfig:
    """
    Attributes:
        text_tokens (int): Padded prompt length T_tok.
        text_width (int): Embedding width d_t.
        vocab_size (int): Hash-bucket count V.
        vocab_seed (int): Seed of the frozen embedding table.
        template (str): Quality template appended to the tags.
        tags_from_hq (bool): Extract training tags from the HQ image instead of the degraded input.
        stoplist_path (Optional[str]): Override of the packaged degradation stoplist.
        tag_table_path (Optional[str]): Override of the packaged tag table.
    """
    text_tokens: int = DefaultValuesAndOptions.get_text_tokens()
    text_width: int = DefaultValuesAndOptions.get_text_width()
    vocab_size: int = DefaultValuesAndOptions.get_vocab_size()
    vocab_seed: int = DefaultValuesAndOptions.get_vocab_seed()
    template: str = DefaultValuesAndOptions.get_template_options_data().default_value
    tags_from_hq: bool = False
    stoplist_path: Optional[str] = None
    tag_table_path: Optional[str] = None

    def __post_init__(self):
        if self.text_tokens < 1 or self.text_width < 1 or self.vocab_size < 1:
            raise ValueError("Prompt token count, width and vocabulary size must be positive")


@dataclass
class TrainConfig:
    """
    Adapter training settings (AdamW over LoRA parameters only, EMA of the adapters).

    Attributes:
        steps (int): Optimization steps.
        batch (int): Pairs per step.
        crop (int): Random crop size; must be divisible by 32.
        lr (float): AdamW learning rate.
        weight_decay (float): Decoupled weight decay.
        betas (Tuple[float, float]): Adam moment decays.
        adam_eps (float): Adam denominator stabilizer.
        grad_clip (float): Global gradient-norm clip.
        ema_decay (float): EMA decay of the adapter weights.
        eps_stat (float): Variance stabilizer of the alignment loss.
        detach_align (bool): Stop the alignment-branch gradient at the restored latent.
        objective (str): Named objective variant.
        dataset_size (int): Procedural training images.
        image_size (Optional[int]): Side of the procedural HQ images; None uses the crop size.
        val_size (int): Held-out procedural images.
        eval_every (int): Validation period in steps (0 disables).
        log_every (int): Logging period in steps.
        use_ema_for_eval (bool): Evaluate and export the EMA adapters.
        weights (LossWeights): Loss weights.
        sched (SchedulerConfig): Scheduler settings.
    """
    steps: int = DefaultValuesAndOptions.get_steps()
    batch: int = DefaultValuesAndOptions.get_batch()
    crop: int = DefaultValuesAndOptions.get_crop()
    lr: float = DefaultValuesAndOptions.get_lr()
    weight_decay: float = DefaultValuesAndOptions.get_weight_decay()
    betas: Tuple[float, float] = DefaultValuesAndOptions.get_betas()
    adam_eps: float = DefaultValuesAndOptions.get_adam_eps()
    grad_clip: float = DefaultValuesAndOptions.get_grad_clip()
    ema_decay: float = DefaultValuesAndOptions.get_ema_decay()
    eps_stat: float = DefaultValuesAndOptions.get_eps_stat()
    detach_align: bool = False
    objective: str = DefaultValuesAndOptions.get_objective_options_data().default_value
    dataset_size: int = 64
    image_size: Optional[int] = None
    val_size: int = 8
    eval_every: int = DefaultValuesAndOptions.get_eval_every()
    log_every: int = DefaultValuesAndOptions.get_log_every()
    use_ema_for_eval: bool = True
    weights: LossWeights = field(default_factory=LossWeights)
    sched: SchedulerConfig = field(default_factory=SchedulerConfig)

    def __post_init__(self):
        self.betas = tuple(self.betas)

        if self.steps <= 0 or self.batch <= 0 or self.crop <= 0:
            raise ValueError("steps, batch and crop must be positive")
        if self.crop % DefaultValuesAndOptions.get_patch() != 0:
            raise ValueError(f"crop must be divisible by {DefaultValuesAndOptions.get_patch()}, got {self.crop}")
        if self.image_size is None:
            self.image_size = self.crop
        if self.image_size < self.crop:
            raise ValueError(f"image_size {self.image_size} is smaller than crop {self.crop}")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ValueError(f"ema_decay must lie in [0, 1], got {self.ema_decay}")
        DefaultValuesAndOptions.get_objective_options_data().get_value_by_key(self.objective)


@dataclass
class PruneConfig:
    """
    Calibration and block-selection settings.

    Attributes:
        calib_steps (int): Calibration iterations K.
        calib_batch (int): Pairs per calibration iteration.
        keep_ratio (float): Fraction of transformer blocks' parameters kept when no absolute budget is given.
        budget_params (Optional[int]): Absolute parameter budget P_star (overrides keep_ratio).
        eps_prune (float): Saliency stabilizer.
        drop_threshold (float): Relative metric drop tolerated by the validation gate.
        strategy (str): Block selector ("saliency", "tail", "random", "magnitude").
        calib_size (int): Procedural calibration images.
    """
    calib_steps: int = DefaultValuesAndOptions.get_calib_steps()
    calib_batch: int = DefaultValuesAndOptions.get_calib_batch()
    keep_ratio: float = DefaultValuesAndOptions.get_keep_ratio()
    budget_params: Optional[int] = None
    eps_prune: float = DefaultValuesAndOptions.get_eps_prune()
    drop_threshold: float = DefaultValuesAndOptions.get_drop_threshold()
    strategy: str = DefaultValuesAndOptions.get_prune_strategy_options_data().default_value
    calib_size: int = 16

    def __post_init__(self):
        if self.calib_steps <= 0 or self.calib_batch <= 0:
            raise ValueError("calib_steps and calib_batch must be positive")
        if not 0.0 < self.keep_ratio <= 1.0:
            raise ValueError(f"keep_ratio must lie in (0, 1], got {self.keep_ratio}")
        if self.eps_prune <= 0:
            raise ValueError(f"eps_prune must be positive, got {self.eps_prune}")
        DefaultValuesAndOptions.get_prune_strategy_options_data().get_value_by_key(self.strategy)
