"""
Checkpoint files.

Layout (all integers little-endian):

    magic       b"HYPELAB-CKPT\\0"
    version     u32
    config      u32 length + UTF-8 JSON (sorted keys)
    count       u32
    per parameter, in declaration order:
        name    u16 length + UTF-8
        shape   u8 ndim + ndim * u32
        data    float64 little-endian, row-major
"""

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError, OutputError, VersionError
from .model import ModelConfig, ModelState, param_shapes
from .tensor import Tensor

MAGIC = b"HYPELAB-CKPT\0"
FORMAT_VERSION = 1


def dumps(state: ModelState) -> bytes:
    config = json.dumps(state.config.to_dict(), sort_keys=True).encode("utf-8")
    out = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(config)), config, struct.pack("<I", len(state.params))]
    for name, tensor in state.params.items():
        encoded = name.encode("utf-8")
        out.append(struct.pack("<H", len(encoded)) + encoded)
        out.append(struct.pack(f"<B{tensor.ndim}I", tensor.ndim, *tensor.shape))
        out.append(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, blob: bytes, path: str | None):
        self.blob = blob
        self.offset = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.blob):
            raise FormatError("checkpoint is truncated", path=self.path)
        chunk = self.blob[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(blob: bytes, path: str | None = None) -> ModelState:
    r = _Reader(blob, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError("not a hypelab checkpoint (bad magic)", path=path)
    (version,) = r.unpack("<I")
    if version > FORMAT_VERSION:
        raise VersionError(
            f"checkpoint format version {version} is newer than supported version {FORMAT_VERSION}", path=path
        )
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint format version {version}", path=path)

    (length,) = r.unpack("<I")
    try:
        config = ModelConfig.from_dict(json.loads(r.take(length).decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError) as e:
        raise FormatError(f"corrupt config record ({e})", path=path)
    except InputError as e:
        raise FormatError(f"invalid config record: {e.message}", path=path)

    expected = param_shapes(config)
    (count,) = r.unpack("<I")
    if count != len(expected):
        raise FormatError(f"checkpoint holds {count} parameters, config declares {len(expected)}", path=path)

    params: dict[str, Tensor] = {}
    for want_name, want_shape in expected.items():
        (n,) = r.unpack("<H")
        name = r.take(n).decode("utf-8", errors="replace")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        if name != want_name or tuple(shape) != want_shape:
            raise FormatError(
                f"parameter '{name}' {list(shape)} does not match declared '{want_name}' {list(want_shape)}", path=path
            )
        size = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
        params[name] = Tensor(data, requires_grad=True, name=name)

    if r.offset != len(blob):
        raise FormatError(f"{len(blob) - r.offset} trailing bytes after last parameter", path=path)
    return ModelState(config, params)


def save_checkpoint(state: ModelState, path: str | Path) -> str:
    """
    Write `state` atomically and return the sha256 of the file contents,
    which serves as the checkpoint id in reports.
    """
    path = Path(path)
    blob = dumps(state)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except OSError as e:
        raise OutputError(f"cannot write checkpoint '{path}': {e.strerror}")
    return hashlib.sha256(blob).hexdigest()


def load_checkpoint(path: str | Path) -> ModelState:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise OutputError(f"cannot read checkpoint '{path}': {e.strerror}")
    return loads(blob, str(path))


def checkpoint_id(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
