import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

from onestep_sr.models.backbone_config import BackboneConfig, LoraConfig
from onestep_sr.models.default_values_and_options import DefaultValuesAndOptions
from onestep_sr.models.run_configs import CodecConfig, DegradationConfig, PromptConfig, PruneConfig, TrainConfig


class Settings:
    """
    Resolved run settings shared by every subcommand.

    Attributes:
        backbone (BackboneConfig): Backbone topology.
        lora (LoraConfig): Adapter settings.
        degradation (DegradationConfig): Synthetic degradation settings.
        prompt (PromptConfig): Prompt engine settings.
        train (TrainConfig): Training loop settings, including loss weights and the scheduler.
        prune (PruneConfig): Calibration and block-selection settings.
        seed (int): Root seed of every random stream in the run.
        dtype (str): "float32" or "float64".
        workers (int): Worker threads for data synthesis.
        executor (ThreadPoolExecutor): Pool used for data synthesis, created on first use and released by shutdown().
        is_error_log (bool): Indicates if the warning file logger is enabled.
        stop_event (threading.Event): Set on SIGINT; loops finish the current step and return.
    """
    backbone: BackboneConfig
    lora: LoraConfig
    degradation: DegradationConfig
    prompt: PromptConfig
    train: TrainConfig
    prune: PruneConfig
    seed: int
    dtype: str
    workers: int
    is_error_log: bool
    stop_event: threading.Event

    def __init__(self, backbone: Optional[BackboneConfig] = None, lora: Optional[LoraConfig] = None,
                 degradation: Optional[DegradationConfig] = None, prompt: Optional[PromptConfig] = None,
                 train: Optional[TrainConfig] = None, prune: Optional[PruneConfig] = None,
                 seed: int = DefaultValuesAndOptions.get_default_seed(),
                 dtype: str = DefaultValuesAndOptions.get_default_dtype(),
                 workers: int = DefaultValuesAndOptions.get_default_workers(),
                 is_error_log: bool = False, stop_event: Optional[threading.Event] = None):
        self.backbone = backbone or BackboneConfig()
        self.lora = lora or LoraConfig()
        self.degradation = degradation or DegradationConfig()
        self.prompt = prompt or PromptConfig()
        self.train = train or TrainConfig()
        self.prune = prune or PruneConfig()
        self.seed = seed
        self.dtype = dtype
        self.workers = workers
        self.__executor: Optional[ThreadPoolExecutor] = None
        self.is_error_log = is_error_log
        self.stop_event = stop_event or threading.Event()

        if self.prompt.text_tokens != self.backbone.text_tokens or self.prompt.text_width != self.backbone.text_width:
            raise ValueError(f"Prompt shape ({self.prompt.text_tokens}, {self.prompt.text_width}) differs from the "
                             f"backbone text shape ({self.backbone.text_tokens}, {self.backbone.text_width})")
        if self.train.sched.sched_horizon != self.backbone.sched_horizon:
            raise ValueError(f"Scheduler horizon {self.train.sched.sched_horizon} differs from the backbone "
                             f"horizon {self.backbone.sched_horizon}")

    @property
    def codec(self) -> CodecConfig:
        return CodecConfig(latent_channels=self.backbone.latent_channels)

    @property
    def executor(self) -> ThreadPoolExecutor:
        if self.__executor is None:
            self.__executor = ThreadPoolExecutor(max_workers=self.workers)

        return self.__executor

    @property
    def has_executor(self) -> bool:
        return self.__executor is not None

    def shutdown(self):
        """
        Waits for pending synthesis tasks and releases the worker threads; a later use starts a new pool.
        """
        if self.__executor is not None:
            self.__executor.shutdown(wait=True)
            self.__executor = None

    def __enter__(self) -> 'Settings':
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        self.shutdown()
