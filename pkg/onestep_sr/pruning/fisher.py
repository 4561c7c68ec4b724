import logging
from typing import Dict, Iterable, Optional, Tuple

import numpy as np


class CalibAccumulator:
    """
    Running sums of omega(t)-weighted squared calibration gradients, one tensor per prunable parameter.

    Attributes:
        sums (Dict[str, np.ndarray]): Unnormalized curvature sums (float64).
        steps (int): Accumulated calibration steps K.
    """
    sums: Dict[str, np.ndarray]
    steps: int

    def __init__(self, shapes: Dict[str, Tuple[int, ...]]):
        self.sums = {name: np.zeros(shape, dtype=np.float64) for name, shape in shapes.items()}
        self.steps = 0
        self.__fisher: Optional[Dict[str, np.ndarray]] = None

    @staticmethod
    def for_parameters(params: Dict[str, np.ndarray], names: Optional[Iterable[str]] = None) -> 'CalibAccumulator':
        names = list(names) if names is not None else list(params)

        return CalibAccumulator({name: params[name].shape for name in names})

    @property
    def is_finalized(self) -> bool:
        return self.__fisher is not None

    def accumulate(self, grads: Dict[str, np.ndarray], omega_t: float):
        """
        F_i += omega_t * g_i^2 for every parameter, then K += 1.

        Raises:
            ValueError: If the gradient names differ from the accumulated parameters or shapes disagree.
            RuntimeError: If the accumulator was already finalized.
        """
        if self.__fisher is not None:
            raise RuntimeError("Accumulator is finalized; start a new calibration run")

        unknown = sorted(set(grads) - set(self.sums))
        missing = sorted(set(self.sums) - set(grads))
        if unknown:
            raise ValueError(f"Unknown parameter names in calibration gradients: {', '.join(unknown)}")
        if missing:
            raise ValueError(f"Calibration gradients are missing parameters: {', '.join(missing)}")

        for name, grad in grads.items():
            if grad.shape != self.sums[name].shape:
                raise ValueError(f'Gradient "{name}" has shape {grad.shape}, expected {self.sums[name].shape}')
            self.sums[name] += omega_t * np.square(grad, dtype=np.float64)

        self.steps += 1

    def finalize(self) -> Dict[str, np.ndarray]:
        """
        Normalizes the sums by K and freezes the accumulator.

        Raises:
            RuntimeError: If nothing was accumulated.
        """
        if self.steps == 0:
            raise RuntimeError("Cannot finalize a calibration accumulator without steps")

        self.__fisher = {name: total / self.steps for name, total in self.sums.items()}
        logging.info(f"Curvature proxy finalized over K={self.steps} steps, {len(self.sums)} tensors")

        return self.__fisher

    @property
    def fisher(self) -> Dict[str, np.ndarray]:
        if self.__fisher is None:
            raise RuntimeError("Calibration accumulator is not finalized")

        return self.__fisher
