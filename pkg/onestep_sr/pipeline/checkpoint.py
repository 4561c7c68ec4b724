import dataclasses
import hashlib
import json
import logging
import struct
from dataclasses import dataclass
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np

from onestep_sr.backbone.linear_dit import LinearDiT, parameter_shapes
from onestep_sr.backbone.lora import LoraSet, LORA_A_SUFFIX, LORA_B_SUFFIX
from onestep_sr.models.backbone_config import BackboneConfig
from onestep_sr.models.default_values_and_options import DefaultValuesAndOptions
from onestep_sr.services.tensor_ops import resolve_dtype

_U32 = struct.Struct('<I')
_SECTIONS = ('params', 'frozen', 'lora', 'ema')


@dataclass
class CheckpointContents:
    """
    Everything restored by `load_checkpoint`.

    Attributes:
        state (LinearDiT): Backbone with its frozen prior copy and, when saved, its adapters.
        ema (Optional[LoraSet]): EMA adapters, if the run tracked them.
        configs (Dict[str, Any]): Run configuration sections exactly as saved.
        prune_report (Optional[dict]): Block-selection report of a pruned checkpoint.
        digest (str): SHA-256 of the tensor payload.
    """
    state: LinearDiT
    ema: Optional[LoraSet]
    configs: Dict[str, Any]
    prune_report: Optional[dict]
    digest: str


def _lora_tensors(lora: LoraSet) -> Iterator[Tuple[str, np.ndarray]]:
    for prefix in lora.prefixes:
        yield f'{prefix}.{LORA_A_SUFFIX}', lora.a[prefix]
        yield f'{prefix}.{LORA_B_SUFFIX}', lora.b[prefix]


def _encode_record(name: str, tensor: np.ndarray, dtype: np.dtype) -> bytes:
    name_bytes = name.encode('utf-8')
    parts = [_U32.pack(len(name_bytes)), name_bytes, _U32.pack(tensor.ndim)]
    parts.extend(_U32.pack(dim) for dim in tensor.shape)
    parts.append(np.ascontiguousarray(tensor, dtype=dtype.newbyteorder('<')).tobytes())

    return b''.join(parts)


def save_checkpoint(path: str, state: LinearDiT, configs: Optional[Dict[str, Any]] = None,
                    ema: Optional[LoraSet] = None, prune_report: Optional[dict] = None) -> str:
    """
    Writes magic, a uint32 header length, a JSON header and the little-endian tensor records
    (name length, name, rank, dims, raw data) of the params, frozen, lora and ema sections.
    The header is key-sorted and carries no timestamps, so identical states give identical bytes.

    Returns:
        str: SHA-256 of the tensor payload.
    """
    dtype = state.dtype
    records: List[bytes] = []
    counts = {}

    sections = [('params', state.params.items()), ('frozen', state.frozen_copy.items())]
    if state.adapters is not None:
        sections.append(('lora', _lora_tensors(state.adapters)))
    if ema is not None:
        sections.append(('ema', _lora_tensors(ema)))

    for section, tensors in sections:
        count = 0
        for name, tensor in tensors:
            records.append(_encode_record(f'{section}/{name}', tensor, dtype))
            count += 1
        counts[section] = count

    payload = b''.join(records)
    digest = hashlib.sha256(payload).hexdigest()

    lora_source = state.adapters if state.adapters is not None else ema
    header = {
        'format_version': DefaultValuesAndOptions.get_util_comparability_version(),
        'version': DefaultValuesAndOptions.get_util_version(),
        'dtype': dtype.name,
        'backbone': dataclasses.asdict(state.cfg),
        'lora': None if lora_source is None else {'rank': lora_source.rank, 'alpha': lora_source.alpha},
        'kept_blocks': list(state.kept_blocks),
        'sections': counts,
        'configs': configs or {},
        'prune_report': prune_report,
        'payload_sha256': digest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode('utf-8')

    with open(path, 'wb') as file:
        file.write(DefaultValuesAndOptions.CHECKPOINT_MAGIC)
        file.write(_U32.pack(len(header_bytes)))
        file.write(header_bytes)
        file.write(payload)

    logging.info(f'Checkpoint saved to "{path}" ({len(records)} tensors, sha256 {digest[:12]})')

    return digest


class _Reader:
    def __init__(self, data: bytes, offset: int, path: str):
        self.data = data
        self.offset = offset
        self.path = path

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.data):
            raise ValueError(f'Checkpoint "{self.path}" is truncated at byte {self.offset}')
        chunk = self.data[self.offset:end]
        self.offset = end

        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def _read_records(reader: _Reader, count: int, dtype: np.dtype) -> List[Tuple[str, np.ndarray]]:
    records = []
    little = dtype.newbyteorder('<')
    for _ in range(count):
        name = reader.take(reader.u32()).decode('utf-8')
        rank = reader.u32()
        dims = tuple(reader.u32() for _ in range(rank))
        size = int(np.prod(dims, dtype=np.int64)) if dims else 1
        tensor = np.frombuffer(reader.take(size * little.itemsize), dtype=little).reshape(dims).astype(dtype)
        records.append((name, tensor))

    return records


def _check_dense(section: str, tensors: Dict[str, np.ndarray], shapes: Dict[str, Tuple[int, ...]]):
    if set(tensors) != set(shapes):
        missing = sorted(set(shapes) - set(tensors))
        extra = sorted(set(tensors) - set(shapes))
        raise ValueError(f"Checkpoint {section} tensors disagree with the backbone config "
                         f"(missing: {missing[:5]}, unexpected: {extra[:5]})")
    for name, tensor in tensors.items():
        if tensor.shape != shapes[name]:
            raise ValueError(f'Checkpoint tensor "{section}/{name}" has dims {tensor.shape}, expected {shapes[name]}')


def _build_lora(section: str, tensors: Dict[str, np.ndarray], shapes: Dict[str, Tuple[int, ...]],
                rank: int, alpha: float) -> LoraSet:
    lora = LoraSet(rank, alpha)
    for name, tensor in tensors.items():
        prefix, suffix = name.rsplit('.', 1)
        weight_shape = shapes.get(f'{prefix}.weight')
        if weight_shape is None:
            raise ValueError(f'Checkpoint adapter "{section}/{name}" targets an unknown projection')

        d_out, d_in = weight_shape
        if suffix == LORA_A_SUFFIX:
            expected, target = (rank, d_in), lora.a
        elif suffix == LORA_B_SUFFIX:
            expected, target = (d_out, rank), lora.b
        else:
            raise ValueError(f'Checkpoint adapter "{section}/{name}" has an unknown suffix')
        if tensor.shape != expected:
            raise ValueError(f'Checkpoint tensor "{section}/{name}" has dims {tensor.shape}, expected {expected}')
        target[prefix] = tensor

    if set(lora.a) != set(lora.b):
        raise ValueError(f"Checkpoint {section} adapters have unpaired A/B factors")

    return lora


def load_checkpoint(path: str) -> CheckpointContents:
    """
    Reads a checkpoint written by `save_checkpoint` and rebuilds the (possibly pruned) backbone.
    Nothing is constructed before the magic, version, digest and every record have been validated.

    Raises:
        ValueError: On bad magic, unknown format version, truncation, digest mismatch or dimension mismatch.
    """
    with open(path, 'rb') as file:
        data = file.read()

    magic = DefaultValuesAndOptions.CHECKPOINT_MAGIC
    if data[:len(magic)] != magic:
        raise ValueError(f'"{path}" is not a checkpoint (bad magic {data[:len(magic)]!r})')

    reader = _Reader(data, len(magic), path)
    try:
        header = json.loads(reader.take(reader.u32()).decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValueError(f'Checkpoint "{path}" has a corrupt header: {e}')

    expected_version = DefaultValuesAndOptions.get_util_comparability_version()
    if header.get('format_version') != expected_version:
        raise ValueError(f'Checkpoint "{path}" has format version {header.get("format_version")}, '
                         f'expected {expected_version}')

    payload = data[reader.offset:]
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header['payload_sha256']:
        raise ValueError(f'Checkpoint "{path}" payload digest mismatch, the file is truncated or corrupt')

    dtype = resolve_dtype(header['dtype'])
    records = _read_records(reader, sum(header['sections'].values()), dtype)
    if reader.offset != len(data):
        raise ValueError(f'Checkpoint "{path}" has {len(data) - reader.offset} trailing bytes')

    grouped: Dict[str, Dict[str, np.ndarray]] = {section: {} for section in _SECTIONS}
    for name, tensor in records:
        section, _, tensor_name = name.partition('/')
        if section not in grouped:
            raise ValueError(f'Checkpoint record "{name}" belongs to an unknown section')
        grouped[section][tensor_name] = tensor

    cfg = BackboneConfig(**header['backbone'])
    shapes = parameter_shapes(cfg)
    _check_dense('params', grouped['params'], shapes)
    _check_dense('frozen', grouped['frozen'], shapes)

    lora_header = header['lora']
    adapters = ema = None
    if grouped['lora'] or grouped['ema']:
        if lora_header is None:
            raise ValueError(f'Checkpoint "{path}" holds adapters but no adapter rank')
        rank, alpha = int(lora_header['rank']), float(lora_header['alpha'])
        if grouped['lora']:
            adapters = _build_lora('lora', grouped['lora'], shapes, rank, alpha)
        if grouped['ema']:
            ema = _build_lora('ema', grouped['ema'], shapes, rank, alpha)

    frozen = {}
    for name in shapes:
        tensor = grouped['frozen'][name]
        tensor.setflags(write=False)
        frozen[name] = tensor

    params = {name: grouped['params'][name] for name in shapes}
    state = LinearDiT(cfg, dtype.name, params, frozen, adapters, header['kept_blocks'])
    logging.info(f'Checkpoint loaded from "{path}": {state.parameter_count()} params, '
                 f'blocks {list(state.kept_blocks)}')

    return CheckpointContents(state, ema, header['configs'], header['prune_report'], digest)
