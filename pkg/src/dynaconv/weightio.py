"""Portable weight container (bit-exact round trips).

Layout, little-endian throughout:

    magic b"DYNW" | u16 version=1 | u16 flags
    u32 header length | UTF-8 JSON header (carries the spec fingerprint)
    u32 tensor count
    per tensor: u16 name length | name UTF-8 | u8 dtype code (0 = float32)
                | u8 rank | u32 dims[rank] | raw values, row-major

The same container also serializes datasets (images/labels as named
tensors) with a ``kind`` marker in the header.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (FingerprintError, MagicError, TruncationError,
                     VersionError)

MAGIC = b"DYNW"
VERSION = 1
DTYPE_F32 = 0


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def fingerprint(spec_dict: dict) -> str:
    return hashlib.sha256(canonical_json(spec_dict).encode()).hexdigest()


@dataclass
class WeightStore:
    """Ordered name -> float32 tensor map plus its JSON header."""

    header: dict
    tensors: dict[str, np.ndarray]

    @property
    def fingerprint(self) -> str:
        return self.header.get("fingerprint", "")


def write_container(path, header: dict, tensors: dict[str, np.ndarray]):
    hdr = canonical_json(header).encode()
    parts = [MAGIC, struct.pack("<HH", VERSION, 0),
             struct.pack("<I", len(hdr)), hdr,
             struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<BB", DTYPE_F32, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncationError(
                f"container truncated: needed {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))


def read_container(path) -> WeightStore:
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise MagicError(f"{path}: not a DYNW container")
    version, _flags = r.unpack("HH")
    if version != VERSION:
        raise VersionError(f"{path}: unsupported container version {version}")
    (hlen,) = r.unpack("I")
    try:
        header = json.loads(r.take(hlen).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise TruncationError(f"{path}: corrupt JSON header: {e}") from None
    (count,) = r.unpack("I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.unpack("H")
        name = r.take(nlen).decode()
        code, rank = r.unpack("BB")
        if code != DTYPE_F32:
            raise VersionError(f"{path}: unsupported dtype code {code} for {name!r}")
        dims = r.unpack(f"{rank}I") if rank else ()
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = r.take(4 * n)
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    if r.pos != len(data):
        raise TruncationError(f"{path}: {len(data) - r.pos} trailing bytes after content")
    return WeightStore(header=header, tensors=tensors)


# ---------------------------------------------------------------------------
# model checkpoints

def save_model(model, path):
    spec_dict = model.spec.to_dict()
    header = {"kind": "model-weights",
              "spec": spec_dict,
              "fingerprint": fingerprint(spec_dict)}
    state = {name: arr.astype(np.float32) for name, arr in model.state().items()}
    write_container(path, header, state)


def load_model(path, dtype=np.float32):
    """Rebuild the model recorded in a checkpoint."""
    from .model import ModelSpec, build

    store = read_container(path)
    if store.header.get("kind") != "model-weights":
        raise FingerprintError(f"{path}: container is not a model checkpoint")
    spec = ModelSpec.from_dict(store.header["spec"])
    if fingerprint(spec.to_dict()) != store.fingerprint:
        raise FingerprintError(f"{path}: fingerprint does not match embedded spec")
    m = build(spec, seed=0, dtype=dtype)
    m.load_state(store.tensors)
    return m


def load_weights_for(model, path):
    """Load a checkpoint into an existing model, enforcing spec identity."""
    store = read_container(path)
    expect = fingerprint(model.spec.to_dict())
    if store.fingerprint != expect:
        raise FingerprintError(
            f"{path}: fingerprint {store.fingerprint[:12]}... does not match "
            f"model spec {expect[:12]}...")
    model.load_state(store.tensors)
    return store
