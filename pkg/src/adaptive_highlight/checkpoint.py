"""Binary parameter container.

Layout (all integers little-endian u32)::

    b"AHLM" version
    config_len  config JSON (utf-8, sorted keys)
    count
    repeated count times:
        name_len name ndim dims[ndim] payload (f32 little-endian, row-major)
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .autograd import Value
from .networks import HighlightDetector, ModelConfig, parameter_shapes

MAGIC = b"AHLM"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(cfg, params):
    out = [MAGIC, struct.pack("<I", VERSION)]
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    out += [struct.pack("<I", len(blob)), blob, struct.pack("<I", len(params))]
    for name, p in params.items():
        data = p.data if isinstance(p, Value) else np.asarray(p)
        encoded = name.encode()
        out.append(struct.pack("<I", len(encoded)) + encoded)
        out.append(struct.pack(f"<I{data.ndim}I", data.ndim, *data.shape))
        out.append(np.ascontiguousarray(data, dtype="<f4").tobytes())
    return b"".join(out)


def loads(buf):
    view = memoryview(buf)
    pos = 0

    def read(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"truncated checkpoint at byte {pos}")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    def u32():
        return struct.unpack("<I", read(4))[0]

    if bytes(read(4)) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version = u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    cfg = ModelConfig.from_dict(json.loads(bytes(read(u32())).decode()))
    params = {}
    for _ in range(u32()):
        name = bytes(read(u32())).decode()
        shape = tuple(u32() for _ in range(u32()))
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(read(4 * count), dtype="<f4").astype(np.float32).reshape(shape)
        params[name] = Value(data, requires_grad=True, name=name)
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after parameters")
    expected = parameter_shapes(cfg)
    if list(params) != list(expected):
        raise CheckpointError("parameter names do not match the embedded config")
    return cfg, params


def save_model(model, path):
    Path(path).write_bytes(dumps(model.cfg, model.params))


def load_model(path):
    cfg, params = loads(Path(path).read_bytes())
    return HighlightDetector(cfg, params)
