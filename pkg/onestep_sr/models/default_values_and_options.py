from typing import Tuple, List

from onestep_sr.models.options_data_creater import OptionsData
import version


class DefaultValuesAndOptions:
    """
    Provides default configuration values and option presets for every part of the restoration pipeline.
    All config dataclasses, the CLI and the run-config parser read their defaults from here.

    Attributes:
        __PATCH (int): Spatial compression factor of the latent codec.
        __LATENT_CHANNELS (int): Latent channel width exposed to the backbone.
        __TEXT_TOKENS (int): Padded prompt length.
        __BLOCKS (int): Transformer block count of the toy backbone.
        __SCHED_HORIZON (int): Scheduler horizon T.
        __DEFAULT_PROMPT_PROTOCOL (list): Default prompt protocol preset.
        __PROMPT_PROTOCOL_OPTIONS (list of lists): Available prompt protocols.
        __DEFAULT_TEMPLATE (list): Default quality template preset.
        __TEMPLATE_OPTIONS (list of lists): Available quality templates.
    """
    __PATCH = 32
    __LATENT_CHANNELS = 32
    __CODEC_SEED = 0

    __TEXT_TOKENS = 32
    __TEXT_WIDTH = 64
    __VOCAB_SIZE = 4096
    __VOCAB_SEED = 0

    __BLOCKS = 8
    __WIDTH = 128
    __HEADS = 4
    __FFN_WIDTH = 256
    __EPS_ATT_FLOAT32 = 1e-6
    __EPS_ATT_FLOAT64 = 1e-12
    __EPS_NORM = 1e-6
    __PRIOR_SEED = 0

    __LORA_RANK = 64
    __LORA_ALPHA = 64.0
    __LORA_ATTENTION_TARGETS = ['self_attn.to_q', 'self_attn.to_k', 'self_attn.to_v', 'self_attn.to_out',
                                'cross_attn.to_q', 'cross_attn.to_k', 'cross_attn.to_v', 'cross_attn.to_out']
    __LORA_FFN_TARGETS = ['ffn.fc1', 'ffn.fc2']

    __SCHED_HORIZON = 1000

    __LAMBDA_2 = 1.0
    __LAMBDA_P = 2.0
    __LAMBDA_A = 1.0
    __LAMBDA_C = 1.0
    __EPS_STAT = 1e-6

    __BLUR_SIGMA_RANGE = (0.2, 1.5)
    __DOWNSCALE = 4
    __NOISE_SIGMA_RANGE = (0.0, 0.03)

    __STEPS = 2000
    __BATCH = 4
    __CROP = 512
    __LR = 5e-5
    __WEIGHT_DECAY = 1e-2
    __BETAS = (0.9, 0.999)
    __ADAM_EPS = 1e-8
    __GRAD_CLIP = 1.0
    __EMA_DECAY = 0.999
    __LOG_EVERY = 50
    __EVAL_EVERY = 250

    __CALIB_STEPS = 400
    __CALIB_BATCH = 1
    __KEEP_RATIO = 0.75
    __EPS_PRUNE = 1e-8
    __DROP_THRESHOLD = 0.03

    __WARMUP_REPS = 5
    __TIMED_REPS = 20
    __PSNR_CAP = 100.0
    __EVAL_CROP = 256

    __DEFAULT_WORKERS_COUNT = 1
    __DEFAULT_SEED = 0
    __DEFAULT_DTYPE = 'float32'

    CHECKPOINT_MAGIC = b'LDSR1\x00'
    CONFIG_TITLE = 'onestep_sr_run'
    STOPLIST_FILE = 'stoplist.txt'
    TAG_TABLE_FILE = 'tag_table.txt'

    __DEFAULT_PROMPT_PROTOCOL = [
        'HQ-prompt protocol (tau_g=900, alignment t in [70,650])',
        ('hq', 900, 70, 650)]
    __PROMPT_PROTOCOL_OPTIONS = [
        __DEFAULT_PROMPT_PROTOCOL,
        ['LQ-prompt protocol (tau_g=999, alignment t in [20,980])',
         ('lq', 999, 20, 980)]
    ]

    __DEFAULT_TEMPLATE = ['Short quality suffix', 'clean, sharp, best quality, detailed, 8K, high-resolution']
    __TEMPLATE_OPTIONS = [
        __DEFAULT_TEMPLATE,
        ['Extended quality suffix', 'clean, extremely detailed, best quality, sharp, high-resolution']
    ]

    __DEFAULT_IMAGE_FORMAT = ['Binary PPM (P6, maxval 255)', 'ppm']
    __IMAGE_FORMAT_OPTIONS = [
        __DEFAULT_IMAGE_FORMAT,
        ['Raw float32 planar with an 8-byte dims header', 'raw']
    ]

    __DEFAULT_PRUNE_STRATEGY = ['Prompt-aware curvature saliency', 'saliency']
    __PRUNE_STRATEGY_OPTIONS = [
        __DEFAULT_PRUNE_STRATEGY,
        ['Drop the last blocks', 'tail'],
        ['Seeded random blocks', 'random'],
        ['Rank blocks by weight magnitude, ignoring curvature', 'magnitude']
    ]

    __DEFAULT_OBJECTIVE = ['Full objective', 'full']
    __OBJECTIVE_OPTIONS = [
        __DEFAULT_OBJECTIVE,
        ['Without frozen-prior alignment', 'no_align'],
        ['Without adapter consistency', 'no_cons'],
        ['Without perceptual term', 'no_perceptual']
    ]

    @staticmethod
    def get_prompt_protocol_options_data() -> OptionsData:
        return OptionsData(
            DefaultValuesAndOptions.__DEFAULT_PROMPT_PROTOCOL,
            DefaultValuesAndOptions.__PROMPT_PROTOCOL_OPTIONS
        )

    @staticmethod
    def get_template_options_data() -> OptionsData:
        return OptionsData(
            DefaultValuesAndOptions.__DEFAULT_TEMPLATE,
            DefaultValuesAndOptions.__TEMPLATE_OPTIONS
        )

    @staticmethod
    def get_image_format_options_data() -> OptionsData:
        return OptionsData(
            DefaultValuesAndOptions.__DEFAULT_IMAGE_FORMAT,
            DefaultValuesAndOptions.__IMAGE_FORMAT_OPTIONS
        )

    @staticmethod
    def get_prune_strategy_options_data() -> OptionsData:
        return OptionsData(
            DefaultValuesAndOptions.__DEFAULT_PRUNE_STRATEGY,
            DefaultValuesAndOptions.__PRUNE_STRATEGY_OPTIONS
        )

    @staticmethod
    def get_objective_options_data() -> OptionsData:
        return OptionsData(
            DefaultValuesAndOptions.__DEFAULT_OBJECTIVE,
            DefaultValuesAndOptions.__OBJECTIVE_OPTIONS
        )

    @staticmethod
    def get_patch() -> int:
        return DefaultValuesAndOptions.__PATCH

    @staticmethod
    def get_latent_channels() -> int:
        return DefaultValuesAndOptions.__LATENT_CHANNELS

    @staticmethod
    def get_codec_seed() -> int:
        return DefaultValuesAndOptions.__CODEC_SEED

    @staticmethod
    def get_text_tokens() -> int:
        return DefaultValuesAndOptions.__TEXT_TOKENS

    @staticmethod
    def get_text_width() -> int:
        return DefaultValuesAndOptions.__TEXT_WIDTH

    @staticmethod
    def get_vocab_size() -> int:
        return DefaultValuesAndOptions.__VOCAB_SIZE

    @staticmethod
    def get_vocab_seed() -> int:
        return DefaultValuesAndOptions.__VOCAB_SEED

    @staticmethod
    def get_blocks() -> int:
        return DefaultValuesAndOptions.__BLOCKS

    @staticmethod
    def get_width() -> int:
        return DefaultValuesAndOptions.__WIDTH

    @staticmethod
    def get_heads() -> int:
        return DefaultValuesAndOptions.__HEADS

    @staticmethod
    def get_ffn_width() -> int:
        return DefaultValuesAndOptions.__FFN_WIDTH

    @staticmethod
    def get_eps_att(dtype: str) -> float:
        if dtype == 'float64':
            return DefaultValuesAndOptions.__EPS_ATT_FLOAT64

        return DefaultValuesAndOptions.__EPS_ATT_FLOAT32

    @staticmethod
    def get_eps_norm() -> float:
        return DefaultValuesAndOptions.__EPS_NORM

    @staticmethod
    def get_prior_seed() -> int:
        return DefaultValuesAndOptions.__PRIOR_SEED

    @staticmethod
    def get_lora_rank() -> int:
        return DefaultValuesAndOptions.__LORA_RANK

    @staticmethod
    def get_lora_alpha() -> float:
        return DefaultValuesAndOptions.__LORA_ALPHA

    @staticmethod
    def get_lora_targets(include_ffn: bool) -> List[str]:
        targets = list(DefaultValuesAndOptions.__LORA_ATTENTION_TARGETS)
        if include_ffn:
            targets.extend(DefaultValuesAndOptions.__LORA_FFN_TARGETS)

        return targets

    @staticmethod
    def get_sched_horizon() -> int:
        return DefaultValuesAndOptions.__SCHED_HORIZON

    @staticmethod
    def get_loss_weights() -> Tuple[float, float, float, float]:
        return (DefaultValuesAndOptions.__LAMBDA_2, DefaultValuesAndOptions.__LAMBDA_P,
                DefaultValuesAndOptions.__LAMBDA_A, DefaultValuesAndOptions.__LAMBDA_C)

    @staticmethod
    def get_eps_stat() -> float:
        return DefaultValuesAndOptions.__EPS_STAT

    @staticmethod
    def get_blur_sigma_range() -> Tuple[float, float]:
        return DefaultValuesAndOptions.__BLUR_SIGMA_RANGE

    @staticmethod
    def get_downscale() -> int:
        return DefaultValuesAndOptions.__DOWNSCALE

    @staticmethod
    def get_noise_sigma_range() -> Tuple[float, float]:
        return DefaultValuesAndOptions.__NOISE_SIGMA_RANGE

    @staticmethod
    def get_steps() -> int:
        return DefaultValuesAndOptions.__STEPS

    @staticmethod
    def get_batch() -> int:
        return DefaultValuesAndOptions.__BATCH

    @staticmethod
    def get_crop() -> int:
        return DefaultValuesAndOptions.__CROP

    @staticmethod
    def get_lr() -> float:
        return DefaultValuesAndOptions.__LR

    @staticmethod
    def get_weight_decay() -> float:
        return DefaultValuesAndOptions.__WEIGHT_DECAY

    @staticmethod
    def get_betas() -> Tuple[float, float]:
        return DefaultValuesAndOptions.__BETAS

    @staticmethod
    def get_adam_eps() -> float:
        return DefaultValuesAndOptions.__ADAM_EPS

    @staticmethod
    def get_grad_clip() -> float:
        return DefaultValuesAndOptions.__GRAD_CLIP

    @staticmethod
    def get_ema_decay() -> float:
        return DefaultValuesAndOptions.__EMA_DECAY

    @staticmethod
    def get_log_every() -> int:
        return DefaultValuesAndOptions.__LOG_EVERY

    @staticmethod
    def get_eval_every() -> int:
        return DefaultValuesAndOptions.__EVAL_EVERY

    @staticmethod
    def get_calib_steps() -> int:
        return DefaultValuesAndOptions.__CALIB_STEPS

    @staticmethod
    def get_calib_batch() -> int:
        return DefaultValuesAndOptions.__CALIB_BATCH

    @staticmethod
    def get_keep_ratio() -> float:
        return DefaultValuesAndOptions.__KEEP_RATIO

    @staticmethod
    def get_eps_prune() -> float:
        return DefaultValuesAndOptions.__EPS_PRUNE

    @staticmethod
    def get_drop_threshold() -> float:
        return DefaultValuesAndOptions.__DROP_THRESHOLD

    @staticmethod
    def get_warmup_reps() -> int:
        return DefaultValuesAndOptions.__WARMUP_REPS

    @staticmethod
    def get_timed_reps() -> int:
        return DefaultValuesAndOptions.__TIMED_REPS

    @staticmethod
    def get_psnr_cap() -> float:
        return DefaultValuesAndOptions.__PSNR_CAP

    @staticmethod
    def get_eval_crop() -> int:
        return DefaultValuesAndOptions.__EVAL_CROP

    @staticmethod
    def get_default_workers() -> int:
        return DefaultValuesAndOptions.__DEFAULT_WORKERS_COUNT

    @staticmethod
    def get_default_seed() -> int:
        return DefaultValuesAndOptions.__DEFAULT_SEED

    @staticmethod
    def get_default_dtype() -> str:
        return DefaultValuesAndOptions.__DEFAULT_DTYPE

    @staticmethod
    def get_util_comparability_version() -> str:
        return version.__comparability_version__

    @staticmethod
    def get_util_version() -> str:
        return version.__version__
