"""ZTC checkpoint container.

Little-endian layout::

    b"ZTC1" | u32 meta_len | meta_len bytes UTF-8 JSON
    then per tensor: u16 name_len | name | u8 dtype (0 = f32) | u8 rank | u32 dims[rank] | f32 data

Tensors run until end of file. Metadata is dumped with sorted keys so
identical inputs always give identical bytes.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .arch import ArchConfig, GeneratingFactors, ModelState

MAGIC = b"ZTC1"
DTYPE_F32 = 0


class FormatError(ValueError):
    pass


def encode(tensors: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    meta_raw = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(meta_raw)), meta_raw]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f4", order="C")
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF or arr.ndim > 0xFF:
            raise FormatError(f"tensor {name!r} cannot be encoded")
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack("<BB", DTYPE_F32, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise FormatError("not a ZTC1 checkpoint (bad magic)")
    (meta_len,) = struct.unpack_from("<I", blob, 4)
    pos = 8 + meta_len
    if pos > len(blob):
        raise FormatError("truncated metadata block")
    meta = json.loads(blob[8:pos].decode("utf-8"))
    tensors: dict[str, np.ndarray] = {}
    end = len(blob)
    while pos < end:
        if pos + 2 > end:
            raise FormatError("truncated tensor header")
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        if pos + nlen + 2 > end:
            raise FormatError("truncated tensor header")
        name = blob[pos : pos + nlen].decode("utf-8")
        pos += nlen
        dtype, rank = struct.unpack_from("<BB", blob, pos)
        pos += 2
        if dtype != DTYPE_F32:
            raise FormatError(f"tensor {name!r}: unsupported dtype code {dtype}")
        if pos + 4 * rank > end:
            raise FormatError(f"tensor {name!r}: truncated dims")
        dims = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        count = 1
        for d in dims:
            count *= d
        nbytes = 4 * count
        if count > (end - pos) // 4 or pos + nbytes > end:
            raise FormatError(f"tensor {name!r}: dims {dims} overflow the remaining {end - pos} bytes")
        tensors[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(dims).astype(np.float32)
        pos += nbytes
    return tensors, meta


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(tensors, meta))
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    return decode(Path(path).read_bytes())


def save_state(path, state: ModelState, extra: dict[str, np.ndarray] | None = None, **meta) -> Path:
    """Write a model state plus optional extra tensors (e.g. ``layer_i.log_alpha``)."""
    tensors = dict(state.params)
    if extra:
        tensors.update(extra)
    header = {"arch": state.arch.to_dict(), "factors": state.factors.to_dict(), **meta}
    return save_checkpoint(path, tensors, header)


def load_state(path) -> tuple[ModelState, dict[str, np.ndarray], dict]:
    """Inverse of :func:`save_state`: ``(state, extra_tensors, meta)``."""
    tensors, meta = load_checkpoint(path)
    arch = ArchConfig.from_dict(meta["arch"])
    names = [n for n, _ in arch.param_shapes()]
    missing = [n for n in names if n not in tensors]
    if missing:
        raise FormatError(f"{path}: missing parameters {missing}")
    params = {n: tensors.pop(n) for n in names}
    state = ModelState(arch, params, GeneratingFactors.from_dict(meta["factors"]))
    return state, tensors, meta
