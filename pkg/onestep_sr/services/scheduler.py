import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from onestep_sr.models.run_configs import SchedulerConfig
from onestep_sr.services.tensor_ops import Rng, gaussian_fill


@dataclass
class NoisePair:
    """
    Restored and reference latents perturbed with one shared noise draw at one shared timestep.
    """
    z_tilde_hat: np.ndarray
    z_tilde_H: np.ndarray
    t: int
    eps: np.ndarray


class Scheduler:
    """
    Linear schedule sigma_t = t / T with alpha_t = 1 - sigma_t, timestep sampling and the
    calibration weight omega(t).
    """
    cfg: SchedulerConfig

    def __init__(self, cfg: Optional[SchedulerConfig] = None):
        self.cfg = cfg or SchedulerConfig()

    @property
    def horizon(self) -> int:
        return self.cfg.sched_horizon

    def __check_t(self, t):
        if not 0 <= t <= self.cfg.sched_horizon:
            raise ValueError(f"Timestep {t} outside [0, {self.cfg.sched_horizon}]")

    def sigma(self, t) -> float:
        self.__check_t(t)

        return t / self.cfg.sched_horizon

    def alpha(self, t) -> float:
        return 1.0 - self.sigma(t)

    def perturb(self, z: np.ndarray, t, eps: np.ndarray) -> np.ndarray:
        if z.shape != eps.shape:
            raise ValueError(f"Noise shape {eps.shape} differs from latent shape {z.shape}")

        sigma = self.sigma(t)

        return ((1.0 - sigma) * z + sigma * eps).astype(z.dtype, copy=False)

    def sample_timestep(self, rng: Rng) -> int:
        return int(rng.integers(self.cfg.t_min, self.cfg.t_max))

    def omega(self, t) -> float:
        self.__check_t(t)
        log_horizon = math.log(self.cfg.sched_horizon + 1)

        return (log_horizon - math.log(t + 1)) / log_horizon

    def build_noise_pair(self, rng: Rng, z_hat: np.ndarray, z_H: np.ndarray) -> NoisePair:
        """
        Draws one timestep and one Gaussian tensor and applies both to the restored and the reference latent.
        """
        if z_hat.shape != z_H.shape:
            raise ValueError(f"Restored latent {z_hat.shape} and reference latent {z_H.shape} differ in shape")

        t = self.sample_timestep(rng)
        eps = gaussian_fill(rng, z_hat.shape, z_hat.dtype)

        return NoisePair(self.perturb(z_hat, t, eps), self.perturb(z_H, t, eps), t, eps)
