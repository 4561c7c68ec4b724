import logging
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

Shape = Union[int, Sequence[int]]

_DTYPES = {
    'float32': np.float32,
    'float64': np.float64,
}


def resolve_dtype(name: Union[str, np.dtype, type]) -> np.dtype:
    """
    Maps a configured dtype name ("float32" / "float64") to a numpy dtype.

    Raises:
        ValueError: If the dtype is not one of the supported float widths.
    """
    if isinstance(name, str):
        if name not in _DTYPES:
            raise ValueError(f'Unsupported dtype "{name}", valid values: {", ".join(_DTYPES)}')
        return np.dtype(_DTYPES[name])

    dtype = np.dtype(name)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"Unsupported dtype {dtype}")

    return dtype


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"Non-finite values produced by {where}")

    return x


class MacCounter:
    """
    Counts multiply-accumulate operations issued through `matmul` while active.

    Attributes:
        total (int): MACs counted since the context was entered.
    """
    _active: Optional['MacCounter'] = None

    total: int

    def __init__(self):
        self.total = 0
        self.__previous = None

    def __enter__(self) -> 'MacCounter':
        self.__previous = MacCounter._active
        MacCounter._active = self

        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        MacCounter._active = self.__previous

    @staticmethod
    def record(macs: int):
        if MacCounter._active is not None:
            MacCounter._active.total += int(macs)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Matrix product with optional leading batch dimensions, [..., M, K] @ [..., K, N].

    Args:
        a (np.ndarray): Left operand.
        b (np.ndarray): Right operand.

    Returns:
        np.ndarray: The [..., M, N] product.

    Raises:
        ValueError: If the operands are not at least 2-D or the inner dimensions disagree.
        FloatingPointError: If the product holds NaN or Inf.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul expects at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")

    out = np.matmul(a, b)

    if MacCounter._active is not None:
        batch = int(np.prod(out.shape[:-2], dtype=np.int64)) if out.ndim > 2 else 1
        MacCounter.record(batch * a.shape[-2] * a.shape[-1] * b.shape[-1])

    return check_finite(out, 'matmul')


class Rng:
    """
    Seeded counter-based generator (Philox) so every run is reproducible across platforms.

    Attributes:
        seed (int): 64-bit seed the stream was created from.
        gaussian_fills (int): Number of Gaussian tensors drawn, used to audit the matched-noise contract.
        integer_draws (int): Number of integer draws (timesteps, crops, seeds).
    """
    seed: int
    gaussian_fills: int
    integer_draws: int

    def __init__(self, seed: int, key: Tuple[int, ...] = ()):
        if seed < 0 or seed >= 2 ** 64:
            raise ValueError(f"Seed must be a 64-bit unsigned integer, got {seed}")

        self.seed = int(seed)
        self.__key = tuple(int(k) for k in key)
        self.__generator = np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, *self.__key])))

        self.gaussian_fills = 0
        self.integer_draws = 0

    def split(self, key: int) -> 'Rng':
        """
        Derives an independent child stream; the same (seed, key path) always yields the same stream.
        """
        return Rng(self.seed, self.__key + (int(key),))

    def normal(self, shape: Shape, dtype=np.float64) -> np.ndarray:
        self.gaussian_fills += 1

        return self.__generator.standard_normal(size=shape, dtype=np.float64).astype(dtype, copy=False)

    def uniform(self, shape: Shape, low: float = 0.0, high: float = 1.0, dtype=np.float64) -> np.ndarray:
        return self.__generator.uniform(low, high, size=shape).astype(dtype, copy=False)

    def integers(self, low: int, high_inclusive: int, size: Optional[Shape] = None):
        self.integer_draws += 1

        return self.__generator.integers(low, high_inclusive, size=size, endpoint=True)

    def permutation(self, n: int) -> np.ndarray:
        self.integer_draws += 1

        return self.__generator.permutation(n)


def gaussian_fill(rng: Rng, shape: Shape, dtype=np.float64) -> np.ndarray:
    """
    Draws i.i.d. standard normal samples from the seeded generator.

    Raises:
        ValueError: If any dimension is not positive.
    """
    dims = (shape,) if isinstance(shape, int) else tuple(shape)
    if len(dims) == 0 or any(d <= 0 for d in dims):
        raise ValueError(f"gaussian_fill needs a positive shape, got {dims}")

    return rng.normal(dims, dtype=dtype)


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """
    Central-difference gradient (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate of x.

    Args:
        f: Scalar-valued function of x.
        x (np.ndarray): float64 point to differentiate at; restored after each perturbation.
        h (float): Step size.

    Returns:
        np.ndarray: Gradient with the shape of x.

    Raises:
        ValueError: If x is not float64.
        FloatingPointError: If f returns a non-finite value.
    """
    if x.dtype != np.float64:
        raise ValueError(f"finite_diff_grad needs float64 input, got {x.dtype}")

    x = np.ascontiguousarray(x)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    grad_flat = grad.reshape(-1)

    for i in range(flat.size):
        original = flat[i]

        flat[i] = original + h
        f_plus = float(f(x))
        flat[i] = original - h
        f_minus = float(f(x))
        flat[i] = original

        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError(f"Non-finite function value at coordinate {i}")

        grad_flat[i] = (f_plus - f_minus) / (2.0 * h)

    logging.debug(f"Finite-difference gradient evaluated over {flat.size} coordinates")

    return grad
