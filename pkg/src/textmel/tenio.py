"""Binary tensor I/O.

TEN1 file layout:
    bytes 0..3   magic "TEN1"
    byte  4      dtype code (0 = float32)
    byte  5      ndim
    next ndim*4  u32 little-endian dims
    rest         row-major little-endian payload

Checkpoint container layout:
    u32 little-endian header length
    UTF-8 JSON header {"meta": {...}, "tensors": {name: {"offset": int, "shape": [...]}}}
    concatenated TEN1 records; offsets are relative to the end of the header
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpoint

MAGIC = b"TEN1"
_DTYPE_F32 = 0


def ten1_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<BB", _DTYPE_F32, arr.ndim))
    for d in arr.shape:
        out.write(struct.pack("<I", d))
    out.write(arr.tobytes())
    return out.getvalue()


def write_ten1(path: str | Path, arr: np.ndarray) -> None:
    Path(path).write_bytes(ten1_bytes(arr))


def ten1_from_bytes(data: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one TEN1 record; returns (array, bytes consumed)."""
    if data[offset:offset + 4] != MAGIC:
        raise CorruptCheckpoint("bad TEN1 magic")
    dtype_code, ndim = struct.unpack_from("<BB", data, offset + 4)
    if dtype_code != _DTYPE_F32:
        raise CorruptCheckpoint(f"unknown dtype code {dtype_code}")
    dims = struct.unpack_from(f"<{ndim}I", data, offset + 6)
    header = 6 + 4 * ndim
    count = int(np.prod(dims)) if ndim else 1
    payload = data[offset + header:offset + header + 4 * count]
    if len(payload) != 4 * count:
        raise CorruptCheckpoint("truncated TEN1 payload")
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    return arr, header + 4 * count


def read_ten1(path: str | Path) -> np.ndarray:
    arr, _ = ten1_from_bytes(Path(path).read_bytes())
    return arr


def write_container(path: str | Path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    blobs: list[bytes] = []
    index: dict[str, dict] = {}
    offset = 0
    for name, arr in tensors.items():
        blob = ten1_bytes(arr)
        index[name] = {"offset": offset, "shape": list(np.shape(arr))}
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"meta": meta, "tensors": index}).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_container(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise CorruptCheckpoint("file too short for header")
    (hlen,) = struct.unpack_from("<I", data, 0)
    if len(data) < 4 + hlen:
        raise CorruptCheckpoint("truncated header")
    try:
        header = json.loads(data[4:4 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"unreadable header: {exc}") from exc
    base = 4 + hlen
    tensors: dict[str, np.ndarray] = {}
    for name, entry in header["tensors"].items():
        arr, _ = ten1_from_bytes(data, base + entry["offset"])
        if list(arr.shape) != list(entry["shape"]):
            raise CorruptCheckpoint(f"shape mismatch for {name}")
        tensors[name] = arr
    return tensors, header["meta"]
