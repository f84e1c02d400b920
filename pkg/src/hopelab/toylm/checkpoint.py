"""Binary parameter files.

Layout (all integers little-endian)::

    8 bytes   magic b"HOPELAB1"
    4 bytes   uint32 header length H
    H bytes   UTF-8 JSON header: {"model_config", "params": [[name, shape], ...],
              "crc32": <crc of payload>, "extra": {...}}
    payload   float32 little-endian values, parameters in header order
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..numerics import Tensor
from .model import ModelConfig, ToyLM

__all__ = ["MAGIC", "ModelFileError", "save_model", "load_model"]

MAGIC = b"HOPELAB1"


class ModelFileError(ValueError):
    pass


def save_model(model: ToyLM, path, extra: dict | None = None) -> Path:
    names = list(model.params)
    payload = b"".join(np.ascontiguousarray(model.params[n].data, dtype="<f4").tobytes()
                       for n in names)
    header = json.dumps({
        "model_config": model.config.to_dict(),
        "params": [[n, list(model.params[n].shape)] for n in names],
        "crc32": zlib.crc32(payload),
        "extra": extra or {},
    }, sort_keys=True).encode()
    path = Path(path)
    path.write_bytes(MAGIC + struct.pack("<I", len(header)) + header + payload)
    return path


def load_model(path) -> tuple[ToyLM, dict]:
    """Parameters come back as float32; returns ``(model, extra)``."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise ModelFileError(f"{path}: not a model file (bad magic)")
    if len(raw) < 12:
        raise ModelFileError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"{path}: corrupt header") from exc
    payload = raw[12 + hlen:]
    expected = 4 * sum(int(np.prod(s)) for _, s in header["params"])
    if len(payload) != expected:
        raise ModelFileError(f"{path}: payload has {len(payload)} bytes, shapes need {expected}")
    if zlib.crc32(payload) != header["crc32"]:
        raise ModelFileError(f"{path}: checksum mismatch")
    flat = np.frombuffer(payload, dtype="<f4")
    arrays, off = {}, 0
    for name, shape in header["params"]:
        n = int(np.prod(shape))
        arrays[name] = flat[off:off + n].reshape(shape).astype(np.float32)
        off += n
    config = ModelConfig.from_dict(header["model_config"])
    model = ToyLM(config, {k: Tensor(v, requires_grad=True) for k, v in arrays.items()})
    return model, header.get("extra", {})
