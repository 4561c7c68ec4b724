import logging
import os
import struct
from typing import Optional

import numpy as np

from onestep_sr.models.default_values_and_options import DefaultValuesAndOptions

_EXTENSIONS = {'.ppm': 'ppm', '.raw': 'raw', '.f32': 'raw'}


def _resolve_format(path: str, fmt: Optional[str]) -> str:
    if fmt is None:
        fmt = _EXTENSIONS.get(os.path.splitext(path)[1].lower())
        if fmt is None:
            raise ValueError(f'Cannot infer the image format of "{path}", use .ppm, .raw or .f32')

    return DefaultValuesAndOptions.get_image_format_options_data().get_value_by_key(fmt)


def _ppm_tokens(data: bytes, count: int):
    """
    Reads `count` whitespace-separated header tokens (skipping # comments) and returns them with the offset
    of the byte following the single whitespace after the last token.
    """
    tokens, position = [], 0
    while len(tokens) < count:
        while position < len(data) and data[position:position + 1].isspace():
            position += 1
        if position < len(data) and data[position:position + 1] == b'#':
            while position < len(data) and data[position:position + 1] not in (b'\n', b'\r'):
                position += 1
            continue
        start = position
        while position < len(data) and not data[position:position + 1].isspace():
            position += 1
        if start == position:
            raise ValueError("Truncated PPM header")
        tokens.append(data[start:position])

    return tokens, position + 1


def read_image(path: str, fmt: Optional[str] = None) -> np.ndarray:
    """
    Loads a binary PPM (P6, maxval <= 255) or a raw float32 planar image as a [3, H, W] float32 array in [0, 1].

    Raises:
        ValueError: On malformed or truncated files.
    """
    fmt = _resolve_format(path, fmt)
    with open(path, 'rb') as file:
        data = file.read()

    if fmt == 'ppm':
        tokens, offset = _ppm_tokens(data, 4)
        if tokens[0] != b'P6':
            raise ValueError(f'"{path}" is not a binary PPM (P6) file')
        width, height, maxval = (int(token) for token in tokens[1:])
        if not 0 < maxval <= 255:
            raise ValueError(f"Unsupported PPM maxval {maxval}")

        pixels = np.frombuffer(data, dtype=np.uint8, count=-1, offset=offset)
        if pixels.size < 3 * width * height:
            raise ValueError(f'"{path}" is truncated: {pixels.size} of {3 * width * height} samples')

        image = pixels[:3 * width * height].reshape(height, width, 3).transpose(2, 0, 1)

        return (image.astype(np.float32) / maxval).astype(np.float32)

    if len(data) < 8:
        raise ValueError(f'"{path}" is too short for a raw image header')
    height, width = struct.unpack('<II', data[:8])
    expected = 3 * height * width * 4
    if len(data) - 8 < expected:
        raise ValueError(f'"{path}" is truncated: {len(data) - 8} of {expected} payload bytes')

    return np.frombuffer(data, dtype='<f4', count=3 * height * width, offset=8).reshape(3, height, width).copy()


def write_image(path: str, x: np.ndarray, fmt: Optional[str] = None):
    """
    Stores a [3, H, W] image in [0, 1] as PPM (rounded to 8 bits) or raw float32 planar.
    """
    if x.ndim != 3 or x.shape[0] != 3:
        raise ValueError(f"Expected a [3, H, W] image, got shape {x.shape}")

    fmt = _resolve_format(path, fmt)
    height, width = x.shape[1:]

    with open(path, 'wb') as file:
        if fmt == 'ppm':
            pixels = np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
            file.write(f'P6\n{width} {height}\n255\n'.encode('ascii'))
            file.write(pixels.tobytes())
        else:
            file.write(struct.pack('<II', height, width))
            file.write(np.ascontiguousarray(x, dtype='<f4').tobytes())

    logging.info(f'Image {width}x{height} written to "{path}"')
