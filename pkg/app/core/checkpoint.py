"""
Binary checkpoint format.

  magic     4 bytes  b"APLA"
  version   u16
  hash      64 bytes ASCII SHA-256 of the training config text
  meta      u32 length + UTF-8 JSON (step, update counts, RNG state, config)
  count     u32 number of blobs
  blob      u16 name length, name, u8 dtype code, u16 rank, u32 extents,
            little-endian payload

Everything is little-endian. Blobs keep their insertion order so that
save -> load -> save reproduces the same bytes.
"""
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from app.core.errors import FormatError

MAGIC = b"APLA"
VERSION = 1
HASH_BYTES = 64
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


@dataclass
class Checkpoint:
    config_hash: str
    meta: dict = field(default_factory=dict)
    blobs: dict = field(default_factory=dict)

    def section(self, prefix: str) -> dict:
        """Blobs whose name starts with `prefix`, with the prefix stripped."""
        return {name[len(prefix):]: value for name, value in self.blobs.items() if name.startswith(prefix)}


def to_bytes(ckpt: Checkpoint) -> bytes:
    hash_bytes = ckpt.config_hash.encode("ascii")
    if len(hash_bytes) != HASH_BYTES:
        raise FormatError(f"config hash must be {HASH_BYTES} hex characters")
    meta = json.dumps(ckpt.meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<H", VERSION), hash_bytes, struct.pack("<I", len(meta)), meta,
             struct.pack("<I", len(ckpt.blobs))]
    for name, value in ckpt.blobs.items():
        array = np.asarray(value)
        if array.dtype not in _CODES:
            raise FormatError(f"blob '{name}' has unsupported dtype {array.dtype}")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BH", _CODES[array.dtype], array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(array.astype(_DTYPES[_CODES[array.dtype]]).tobytes(order="C"))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"checkpoint truncated at byte {self.pos} (needed {n} more)")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(data: bytes) -> Checkpoint:
    reader = _Reader(data)
    if reader.take(4) != MAGIC:
        raise FormatError("not an APLA checkpoint (bad magic)")
    (version,) = reader.unpack("<H")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    config_hash = reader.take(HASH_BYTES).decode("ascii")
    (meta_len,) = reader.unpack("<I")
    try:
        meta = json.loads(reader.take(meta_len).decode("utf-8"))
    except ValueError as e:
        raise FormatError(f"corrupt checkpoint metadata: {e}") from e
    (count,) = reader.unpack("<I")
    blobs = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        code, rank = reader.unpack("<BH")
        if code not in _DTYPES:
            raise FormatError(f"blob '{name}' has unknown dtype code {code}")
        shape = reader.unpack(f"<{rank}I")
        dtype = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        blobs[name] = np.frombuffer(reader.take(nbytes), dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    if reader.pos != len(data):
        raise FormatError(f"{len(data) - reader.pos} trailing bytes after the last blob")
    return Checkpoint(config_hash=config_hash, meta=meta, blobs=blobs)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        path.write_bytes(to_bytes(ckpt))
    except OSError as e:
        raise OSError(f"could not write checkpoint '{path}': {e}") from e
    print(f"[SUCCESS]: Checkpoint saved to {path}")
    return str(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise OSError(f"could not read checkpoint '{path}': {e}") from e
    return from_bytes(data)


def checkpoint_digest(ckpt: Checkpoint) -> str:
    return hashlib.sha256(to_bytes(ckpt)).hexdigest()
