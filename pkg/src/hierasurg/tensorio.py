"""Binary tensor container (.hstn) and the named-tensor checkpoint file.

Container layout, little-endian throughout:

    magic   4 bytes  b"HSTN"
    version u8       currently 1
    dtype   u8       0=f32, 1=f64, 2=u8, 3=u16
    ndim    u8
    dims    ndim * u32
    data    row-major raw values

A checkpoint is a u32 length-prefixed JSON header followed by a sequence
of (u16 name length, name utf-8, container bytes) records. Round trips
are bit-exact; readers verify sizes and raise IntegrityError on mismatch.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import IntegrityError

MAGIC = b"HSTN"
VERSION = 1

_DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("u1"): 2,
    np.dtype("<u2"): 3,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    shape = arr.shape  # ascontiguousarray promotes 0-d to 1-d, so keep the true shape
    arr = np.ascontiguousarray(arr)
    dt = arr.dtype.newbyteorder("<")
    if dt not in _DTYPE_CODES:
        raise IntegrityError(f"unsupported dtype {arr.dtype} for container")
    header = MAGIC + struct.pack("<BBB", VERSION, _DTYPE_CODES[dt], len(shape))
    dims = struct.pack(f"<{len(shape)}I", *shape) if shape else b""
    return header + dims + arr.astype(dt, copy=False).tobytes()


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one container starting at `offset`; returns (array, next offset)."""
    if buf[offset : offset + 4] != MAGIC:
        raise IntegrityError("bad magic; not a tensor container")
    version, code, ndim = struct.unpack_from("<BBB", buf, offset + 4)
    if version != VERSION:
        raise IntegrityError(f"unsupported container version {version}")
    if code not in _CODE_DTYPES:
        raise IntegrityError(f"unknown dtype code {code}")
    pos = offset + 7
    dims = struct.unpack_from(f"<{ndim}I", buf, pos)
    pos += 4 * ndim
    dtype = _CODE_DTYPES[code]
    nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
    end = pos + nbytes
    if end > len(buf):
        raise IntegrityError("container truncated: data shorter than header implies")
    arr = np.frombuffer(buf[pos:end], dtype=dtype).reshape(dims)
    return arr.copy(), end


def write_tensor(path: str | Path, arr: np.ndarray) -> None:
    _atomic_write(Path(path), tensor_to_bytes(arr))


def read_tensor(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = tensor_from_bytes(buf)
    if end != len(buf):
        raise IntegrityError(f"{path}: trailing bytes after tensor data")
    return arr


def crc32_of(path: str | Path) -> int:
    return zlib.crc32(Path(path).read_bytes()) & 0xFFFFFFFF


def write_checkpoint(path: str | Path, header: dict, tensors: dict[str, np.ndarray]) -> None:
    """Write a checkpoint: JSON header plus named float32/u16/u8 arrays."""
    head = dict(header)
    head["tensor_names"] = list(tensors.keys())
    head_bytes = json.dumps(head, sort_keys=True).encode("utf-8")
    parts = [struct.pack("<I", len(head_bytes)), head_bytes]
    for name, arr in tensors.items():
        name_b = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_b)))
        parts.append(name_b)
        parts.append(tensor_to_bytes(arr))
    _atomic_write(Path(path), b"".join(parts))


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if len(buf) < 4:
        raise IntegrityError(f"{path}: truncated checkpoint")
    (head_len,) = struct.unpack_from("<I", buf, 0)
    pos = 4 + head_len
    try:
        header = json.loads(buf[4:pos].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"{path}: corrupt checkpoint header: {exc}") from exc
    tensors: dict[str, np.ndarray] = {}
    for expected in header.get("tensor_names", []):
        if pos + 2 > len(buf):
            raise IntegrityError(f"{path}: checkpoint truncated before tensor {expected!r}")
        (name_len,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos : pos + name_len].decode("utf-8")
        pos += name_len
        if name != expected:
            raise IntegrityError(f"{path}: tensor order mismatch ({name!r} != {expected!r})")
        arr, pos = tensor_from_bytes(buf, pos)
        tensors[name] = arr
    if pos != len(buf):
        raise IntegrityError(f"{path}: trailing bytes after last tensor")
    return header, tensors


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
