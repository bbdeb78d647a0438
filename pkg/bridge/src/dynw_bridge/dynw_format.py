"""Writer/reader for the portable DYNW weight container.

Implemented from the format definition (the engine's external interface);
this package never imports the engine itself.

    magic b"DYNW" | u16 version=1 | u16 flags | u32 header length
    | UTF-8 JSON header | u32 tensor count
    | per tensor: u16 name length | name | u8 dtype (0 = float32)
    | u8 rank | u32 dims[rank] | raw float32 values, row-major
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

MAGIC = b"DYNW"
VERSION = 1
DTYPE_F32 = 0


class FormatError(ValueError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def spec_fingerprint(spec: dict) -> str:
    return hashlib.sha256(canonical_json(spec).encode()).hexdigest()


def write(path, header: dict, tensors: dict[str, np.ndarray]):
    for name, arr in tensors.items():
        if arr.dtype != np.float32:
            raise FormatError(f"{name}: dtype {arr.dtype} is not float32")
    hdr = canonical_json(header).encode()
    parts = [MAGIC, struct.pack("<HH", VERSION, 0),
             struct.pack("<I", len(hdr)), hdr,
             struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        nb = name.encode()
        arr = np.ascontiguousarray(arr)
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<BB", DTYPE_F32, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def read(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic")
    version, _ = struct.unpack("<HH", data[4:8])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + hlen].decode())
    pos = 12 + hlen
    (count,) = struct.unpack("<I", data[pos:pos + 4])
    pos += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", data[pos:pos + 2])
        pos += 2
        name = data[pos:pos + nlen].decode()
        pos += nlen
        code, rank = struct.unpack("<BB", data[pos:pos + 2])
        pos += 2
        if code != DTYPE_F32:
            raise FormatError(f"{path}: tensor {name!r} has dtype code {code}")
        dims = struct.unpack(f"<{rank}I", data[pos:pos + 4 * rank])
        pos += 4 * rank
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        tensors[name] = np.frombuffer(data, "<f4", count=n, offset=pos).reshape(dims).copy()
        pos += 4 * n
    if pos != len(data):
        raise FormatError(f"{path}: trailing bytes")
    return header, tensors
