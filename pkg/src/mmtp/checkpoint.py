"""Binary checkpoint format.

Layout: magic "MMTP", format version (u16 LE), config JSON blob
(u32 LE length + UTF-8 bytes), then one entry per tensor until EOF:
name length (u32), name (UTF-8), rank (u32), extents (u32 each), raw
little-endian float32 values, row-major.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from mmtp.errors import CheckpointError

MAGIC = b"MMTP"
VERSION = 1


def save_checkpoint(path: str, config_doc: dict, params: dict) -> None:
    """Write named tensors (Tensor or ndarray values) with a config header."""
    blob = json.dumps(config_doc, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name, value in params.items():
            data = np.asarray(getattr(value, "data", value), dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes(order="C"))


def load_checkpoint(path: str) -> tuple:
    """Read (config_doc, {name: float32 ndarray})."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes {raw[:4]!r}")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (blob_len,) = struct.unpack_from("<I", raw, 6)
    offset = 10
    config_doc = json.loads(raw[offset:offset + blob_len].decode("utf-8"))
    offset += blob_len
    tensors = {}
    total = len(raw)
    while offset < total:
        (name_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        shape = struct.unpack_from(f"<{rank}I", raw, offset)
        offset += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        end = offset + 4 * count
        if end > total:
            raise CheckpointError(f"{path}: truncated tensor data for {name!r}")
        tensors[name] = np.frombuffer(raw[offset:end], dtype="<f4").reshape(shape).copy()
        offset = end
    return config_doc, tensors


def apply_parameters(model, tensors: dict) -> None:
    """Load checkpoint tensors into a model's parameters, checking shapes."""
    params = model.parameters()
    missing = sorted(set(params) - set(tensors))
    extra = sorted(set(tensors) - set(params))
    if missing or extra:
        raise CheckpointError(
            f"parameter names do not match the model (missing={missing[:5]}, extra={extra[:5]})")
    for name, param in params.items():
        value = tensors[name]
        if tuple(value.shape) != tuple(param.shape):
            raise CheckpointError(
                f"shape mismatch for {name!r}: checkpoint {value.shape} vs model {param.shape}")
        param.data = value.astype(param.data.dtype)
