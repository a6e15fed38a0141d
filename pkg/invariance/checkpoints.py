"""
RINV tensor container.

    b"RINV" | u32 version | u32 tensor count
    per tensor: u32 name length | UTF-8 name | u32 rank | rank x u64 dims |
                u8 dtype tag | little-endian payload
    optional:   b"CONF" | u64 length | UTF-8 JSON

All integers are little-endian.
"""
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from .exceptions import FormatError

logger = logging.getLogger(__name__)

MAGIC = b'RINV'
CONFIG_MAGIC = b'CONF'
VERSION = 1
DTYPE_TAGS = {0: np.dtype('<f4'), 1: np.dtype('<f8'), 2: np.dtype('<i8'), 3: np.dtype('u1')}
TAG_OF = {dtype.str: tag for tag, dtype in DTYPE_TAGS.items()}


@dataclass
class Checkpoint:
    tensors: Dict[str, np.ndarray]
    config: Optional[Dict] = field(default=None)


def _u32(value: int) -> bytes:
    return int(value).to_bytes(4, 'little')


def _u64(value: int) -> bytes:
    return int(value).to_bytes(8, 'little')


def encode(tensors: Dict[str, np.ndarray], config: Optional[Dict] = None) -> bytes:
    chunks = [MAGIC, _u32(VERSION), _u32(len(tensors))]
    for name, array in tensors.items():
        array = np.asarray(array)
        dtype = array.dtype.newbyteorder('<') if array.dtype.byteorder == '>' else array.dtype
        tag = TAG_OF.get(np.dtype(dtype).str)
        if tag is None:
            raise FormatError(f"{name}: unsupported dtype {array.dtype}")
        encoded = name.encode('utf-8')
        chunks += [_u32(len(encoded)), encoded, _u32(array.ndim)]
        chunks += [_u64(d) for d in array.shape]
        chunks += [bytes([tag]), np.ascontiguousarray(array, dtype=DTYPE_TAGS[tag]).tobytes()]
    if config is not None:
        payload = json.dumps(config, sort_keys=True).encode('utf-8')
        chunks += [CONFIG_MAGIC, _u64(len(payload)), payload]
    return b''.join(chunks)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw, self.pos = raw, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(f"truncated {what}: need {n} bytes, {len(self.raw) - self.pos} left", offset=self.pos)
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def int(self, n: int, what: str) -> int:
        return int.from_bytes(self.take(n, what), 'little')

    @property
    def done(self) -> bool:
        return self.pos == len(self.raw)


def decode(raw: bytes) -> Checkpoint:
    reader = _Reader(raw)
    if reader.take(4, 'magic') != MAGIC:
        raise FormatError("not a RINV container", offset=0)
    version = reader.int(4, 'version')
    if version != VERSION:
        raise FormatError(f"unsupported RINV version {version}", offset=4)
    count = reader.int(4, 'tensor count')
    tensors = {}
    for _ in range(count):
        start = reader.pos
        name = reader.take(reader.int(4, 'name length'), 'name')
        try:
            name = name.decode('utf-8')
        except UnicodeDecodeError as exc:
            raise FormatError("tensor name is not UTF-8", offset=start + 4) from exc
        rank = reader.int(4, 'rank')
        dims = tuple(reader.int(8, 'dimension') for _ in range(rank))
        tag_offset = reader.pos
        tag = reader.int(1, 'dtype tag')
        if tag not in DTYPE_TAGS:
            raise FormatError(f"{name}: unknown dtype tag {tag}", offset=tag_offset)
        dtype = DTYPE_TAGS[tag]
        payload = reader.take(int(np.prod(dims, dtype=np.int64)) * dtype.itemsize, f"payload of {name}")
        tensors[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).astype(dtype.newbyteorder('='))
    config = None
    if not reader.done:
        offset = reader.pos
        if reader.take(4, 'config magic') != CONFIG_MAGIC:
            raise FormatError("unexpected bytes after the tensor records", offset=offset)
        text = reader.take(reader.int(8, 'config length'), 'config section')
        try:
            config = json.loads(text.decode('utf-8'))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError("config section is not valid JSON", offset=offset + 12) from exc
        if not reader.done:
            raise FormatError("trailing bytes after the config section", offset=reader.pos)
    return Checkpoint(tensors, config)


def save_checkpoint(path: Union[str, Path], tensors: Dict[str, np.ndarray], config: Optional[Dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    staging = path.with_name(path.name + '.tmp')
    staging.write_bytes(encode(tensors, config))
    os.replace(staging, path)
    logger.debug("wrote %d tensors to %s", len(tensors), path)
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    return decode(Path(path).read_bytes())
