"""Versioned binary container for model parameters and training checkpoints.

Layout (all integers little-endian)::

    8 bytes   magic  b"NLNSPRM\\x00"
    u32       format version (currently 1)
    u32       header length H
    H bytes   UTF-8 JSON header: {"kind", "d_h", "meta", "tensors": [[name, shape], ...]}
    ...       tensor data, float64 little-endian, C order, in header order
    u32       CRC-32 of the tensor data
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .policy import Params

MAGIC = b"NLNSPRM\x00"
VERSION = 1
_DTYPE = np.dtype("<f8")


class ParamFileError(ValueError):
    """The file is not a readable parameter container."""


def write_container(path, kind: str, tensors: dict, d_h: int, meta: dict | None = None) -> None:
    header = {
        "kind": kind,
        "d_h": int(d_h),
        "meta": meta or {},
        "tensors": [[name, list(np.shape(t))] for name, t in tensors.items()],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    data = b"".join(np.ascontiguousarray(t, dtype=_DTYPE).tobytes() for t in tensors.values())
    blob = b"".join([
        MAGIC,
        struct.pack("<II", VERSION, len(hbytes)),
        hbytes,
        data,
        struct.pack("<I", zlib.crc32(data) & 0xFFFFFFFF),
    ])
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def read_container(path):
    """Returns ``(kind, d_h, tensors, meta)``."""
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise ParamFileError(f"{path}: not a parameter file")
    version, hlen = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise ParamFileError(f"{path}: unsupported format version {version}")
    if len(blob) < 16 + hlen:
        raise ParamFileError(f"{path}: truncated header")
    try:
        header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParamFileError(f"{path}: corrupt header ({exc})") from None
    offset = 16 + hlen
    sizes = [(name, tuple(shape), int(np.prod(shape, dtype=np.int64))) for name, shape in header["tensors"]]
    nbytes = sum(s for _, _, s in sizes) * _DTYPE.itemsize
    if len(blob) != offset + nbytes + 4:
        raise ParamFileError(
            f"{path}: expected {offset + nbytes + 4} bytes, found {len(blob)} (truncated?)"
        )
    data = blob[offset:offset + nbytes]
    (crc,) = struct.unpack_from("<I", blob, offset + nbytes)
    if crc != zlib.crc32(data) & 0xFFFFFFFF:
        raise ParamFileError(f"{path}: checksum mismatch")
    tensors = {}
    pos = 0
    for name, shape, size in sizes:
        arr = np.frombuffer(data, dtype=_DTYPE, count=size, offset=pos).reshape(shape)
        tensors[name] = arr.astype(np.float64)
        pos += size * _DTYPE.itemsize
    return header["kind"], int(header["d_h"]), tensors, header["meta"]


def save_params(params: Params, path, kind: str = "policy") -> None:
    write_container(path, kind, params.tensors, params.d_h, params.meta)


def load_params(path, kind: str = "policy", expect_d_h: int | None = None) -> Params:
    from .policy import _shapes
    from .training import _critic_shapes

    file_kind, d_h, tensors, meta = read_container(path)
    if file_kind != kind:
        raise ParamFileError(f"{path}: holds {file_kind!r} parameters, expected {kind!r}")
    if expect_d_h is not None and d_h != expect_d_h:
        raise ParamFileError(f"{path}: d_h={d_h}, expected {expect_d_h}")
    shapes = _shapes(d_h) if kind == "policy" else _critic_shapes(d_h)
    for name, shape in shapes.items():
        if name not in tensors:
            raise ParamFileError(f"{path}: missing tensor {name}")
        if tensors[name].shape != shape:
            raise ParamFileError(
                f"{path}: tensor {name} has shape {tensors[name].shape}, expected {shape}"
            )
    extra = set(tensors) - set(shapes)
    if extra:
        raise ParamFileError(f"{path}: unexpected tensors {sorted(extra)}")
    return Params(d_h, {k: tensors[k] for k in shapes}, meta)
