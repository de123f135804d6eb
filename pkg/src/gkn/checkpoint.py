"""Versioned binary checkpoints with a trailing integrity checksum.

Layout: magic ``GKNC``, little-endian u32 format version, u64 header
length, canonical-JSON header (metadata plus array manifest), raw array
payload in manifest order, then a sha256 over everything before it.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"GKNC"
FORMAT_VERSION = 1
_DTYPES = {"float64": "<f8", "float32": "<f4", "int64": "<i8"}


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("utf-8")


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write named arrays plus JSON-serializable metadata; byte-deterministic."""
    manifest = []
    payload = bytearray()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype == np.float64:
            dtype = "float64"
        elif arr.dtype == np.float32:
            dtype = "float32"
        elif arr.dtype.kind in "iu":
            arr = arr.astype(np.int64)
            dtype = "int64"
        else:
            raise CheckpointError(f"array {name!r} has unsupported dtype {arr.dtype}")
        arr = arr.astype(_DTYPES[dtype])
        manifest.append({"name": name, "dtype": dtype, "shape": list(arr.shape)})
        payload.extend(arr.tobytes())
    header = _canonical_json({"format_version": FORMAT_VERSION, "meta": meta, "arrays": manifest})
    body = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(header)) + header + bytes(payload)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(hashlib.sha256(body).digest())


def load_checkpoint(path, expect_dtype: str | None = None) -> tuple[dict[str, np.ndarray], dict]:
    """Read arrays and metadata; verifies checksum, version, and (optionally)
    the floating-point precision of the stored parameters. No silent casts."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 48 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupted)")
    version, header_len = struct.unpack_from("<IQ", body, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(body[16:16 + header_len].decode("utf-8"))
    arrays = {}
    offset = 16 + header_len
    for entry in header["arrays"]:
        dtype = entry["dtype"]
        if expect_dtype is not None and dtype in ("float32", "float64") and dtype != expect_dtype:
            raise CheckpointError(
                f"{path}: array {entry['name']!r} stored as {dtype}, caller requires {expect_dtype}")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        itemsize = np.dtype(_DTYPES[dtype]).itemsize
        raw = body[offset:offset + count * itemsize]
        if len(raw) != count * itemsize:
            raise CheckpointError(f"{path}: payload shorter than the manifest promises")
        arrays[entry["name"]] = np.frombuffer(raw, dtype=_DTYPES[dtype]).reshape(shape).copy()
        offset += count * itemsize
    if offset != len(body):
        raise CheckpointError(f"{path}: trailing bytes after the declared payload")
    return arrays, header["meta"]
