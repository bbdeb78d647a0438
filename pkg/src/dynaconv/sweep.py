"""Permutation enumeration and the comprehensive evaluation sweep.

A permutation assigns one option per active (slot, attribute) pair; the
dense index follows lexicographic order over slots A->D, then attribute
order (stride, dilation, size), option values ascending.  The sweep runs
every sample through every permutation and records the argmax prediction
plus the true-class softmax confidence per cell.

Sweeps share stage-prefix computations between permutations that agree on
a leading slot configuration; this is bit-identical to forwarding each
permutation independently (``strategy="direct"``) because the reused
values are produced by the same operations on the same inputs.  Repeat
runs with the same chunking are bitwise reproducible; changing the sample
chunk size changes BLAS blocking and so may move confidences by float
rounding.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import struct
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ConfigError, DataFormatError, TruncationError
from .model import ATTRIBUTES, Model, ModelSpec, SLOTS
from .tensor import Tensor, softmax

SWEEP_MAGIC = b"DYNS"
SWEEP_VERSION = 1
DEFAULT_AREA_GUARD = 16.0
DEFAULT_CHUNK_BYTES = 256 << 20


@dataclass(frozen=True)
class Permutation:
    """One full assignment: values[slot_i][attr_j] for the active axes."""

    slots: tuple
    attrs: tuple
    values: tuple   # tuple of per-slot tuples, aligned with attrs
    index: int

    def assignment(self) -> dict:
        return {slot: dict(zip(self.attrs, vals))
                for slot, vals in zip(self.slots, self.values)}

    def key(self) -> tuple:
        return self.values

    def option(self, slot: str, attr: str):
        return self.values[self.slots.index(slot)][self.attrs.index(attr)]


def _ordered(seq, allowed) -> tuple:
    out = tuple(s for s in allowed if s in seq)
    if len(out) != len(set(seq)) or not out:
        bad = set(seq) - set(allowed)
        raise ConfigError(f"invalid entries {sorted(bad)}; must be among {allowed}")
    return out


def default_values(spec: ModelSpec, slots, attrs) -> tuple:
    defaults = {"stride": dict(zip(SLOTS, spec.default_strides)),
                "dilation": {s: 1 for s in SLOTS},
                "size": {s: 3 for s in SLOTS}}
    return tuple(tuple(defaults[a][s] for a in attrs) for s in slots)


def predicted_areas(spec: ModelSpec, perm: Permutation, input_hw=None):
    """Feature-map areas after each stage under a permutation (inactive
    slots pinned to defaults)."""
    from .convops import output_shape

    if input_hw is None:
        h = w = spec.input_size
    else:
        h, w = input_hw
    assignment = perm.assignment()
    areas = []
    for i, slot in enumerate(SLOTS):
        cfg = spec.slot_config(i, assignment.get(slot), groups=1)
        h, w = output_shape(h, w, cfg)
        areas.append(h * w)
    return areas


def enumerate_permutations(spec: ModelSpec, attrs, slots=SLOTS,
                           area_guard: float | None = DEFAULT_AREA_GUARD,
                           input_hw=None) -> list[Permutation]:
    """Cartesian product of per-slot options over active slots, with
    inactive slots pinned to defaults and a feature-map area guard."""
    attrs = _ordered(attrs, ATTRIBUTES)
    slots = _ordered(slots, SLOTS)
    axes = []
    for slot in slots:
        per_attr = []
        for attr in attrs:
            per_attr.append(spec.options[slot].values(attr))
        axes.append(per_attr)
    flat_axes = [vals for per_attr in axes for vals in per_attr]
    n_attr = len(attrs)
    input_area = (spec.input_size ** 2 if input_hw is None
                  else input_hw[0] * input_hw[1])
    perms = []
    for combo in itertools.product(*flat_axes):
        values = tuple(combo[i * n_attr:(i + 1) * n_attr] for i in range(len(slots)))
        perm = Permutation(slots, attrs, values, index=len(perms))
        if area_guard is not None:
            if max(predicted_areas(spec, perm, input_hw)) > area_guard * input_area:
                continue
        perms.append(perm)
    if not perms:
        raise ConfigError("no permutation survives the area guard")
    return perms


def default_permutation(spec: ModelSpec, attrs, slots=SLOTS) -> Permutation:
    attrs = _ordered(attrs, ATTRIBUTES)
    slots = _ordered(slots, SLOTS)
    return Permutation(slots, attrs, default_values(spec, slots, attrs), index=-1)


def find_permutation(perms: list[Permutation], values) -> int:
    """Index of a value assignment within an enumerated list (-1 if absent)."""
    for p in perms:
        if p.values == tuple(tuple(v) for v in values):
            return p.index
    return -1


# ---------------------------------------------------------------------------
# sweep result

def dataset_fingerprint(ds: Dataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(ds.images).tobytes())
    h.update(np.ascontiguousarray(ds.labels).tobytes())
    return h.hexdigest()


@dataclass
class SweepResult:
    perms: list[Permutation]
    labels: np.ndarray            # (n,) int64
    preds: np.ndarray             # (n, M) uint16
    confs: np.ndarray             # (n, M) float32, true-class confidence
    macs: np.ndarray              # (M,) int64, analytic per-sample model MACs
    ds_fingerprint: str = ""
    input_hw: tuple = (0, 0)

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def m(self) -> int:
        return len(self.perms)

    def correct(self) -> np.ndarray:
        return self.preds == self.labels[:, None]

    def quality(self) -> np.ndarray:
        """Per-cell quality: true-class confidence, +1 when the argmax
        prediction is correct."""
        return self.confs + self.correct().astype(self.confs.dtype)

    def static_accuracies(self) -> np.ndarray:
        return self.correct().mean(axis=0)


def save_sweep(path, sr: SweepResult):
    header = {
        "n": int(sr.n), "m": int(sr.m),
        "slots": list(sr.perms[0].slots), "attrs": list(sr.perms[0].attrs),
        "perm_values": [[list(v) for v in p.values] for p in sr.perms],
        "macs": [int(v) for v in sr.macs],
        "dataset_fingerprint": sr.ds_fingerprint,
        "input_hw": list(sr.input_hw),
    }
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(SWEEP_MAGIC)
        f.write(struct.pack("<HH", SWEEP_VERSION, 0))
        f.write(struct.pack("<I", len(hdr)))
        f.write(hdr)
        f.write(sr.labels.astype("<u2").tobytes())
        f.write(sr.preds.astype("<u2").tobytes())
        f.write(sr.confs.astype("<f4").tobytes())


def load_sweep(path) -> SweepResult:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != SWEEP_MAGIC:
        raise DataFormatError(f"{path}: not a sweep result file")
    version, _ = struct.unpack("<HH", data[4:8])
    if version != SWEEP_VERSION:
        raise DataFormatError(f"{path}: unsupported sweep version {version}")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + hlen].decode())
    n, m = header["n"], header["m"]
    pos = 12 + hlen
    need = n * 2 + n * m * 2 + n * m * 4
    if len(data) - pos != need:
        raise TruncationError(f"{path}: body has {len(data) - pos} bytes, expected {need}")
    labels = np.frombuffer(data, dtype="<u2", count=n, offset=pos).astype(np.int64)
    pos += n * 2
    preds = np.frombuffer(data, dtype="<u2", count=n * m, offset=pos).reshape(n, m).copy()
    pos += n * m * 2
    confs = np.frombuffer(data, dtype="<f4", count=n * m, offset=pos).reshape(n, m).copy()
    slots, attrs = tuple(header["slots"]), tuple(header["attrs"])
    perms = [Permutation(slots, attrs,
                         tuple(tuple(v) for v in values), index=i)
             for i, values in enumerate(header["perm_values"])]
    return SweepResult(perms=perms, labels=labels, preds=preds, confs=confs,
                       macs=np.asarray(header["macs"], dtype=np.int64),
                       ds_fingerprint=header["dataset_fingerprint"],
                       input_hw=tuple(header["input_hw"]))


# ---------------------------------------------------------------------------
# the comprehensive evaluation

def _resolve_all(model: Model, perms) -> list[list]:
    cfgs = []
    for p in perms:
        try:
            cfgs.append(model.resolve_configs(p.assignment()))
        except ConfigError as e:
            raise ConfigError(f"permutation {p.index}: {e}") from None
    return cfgs

def _max_cell_bytes(model: Model, perms, input_hw) -> int:
    widest = max(model.spec.stem_channels, *(s.width for s in model.spec.stages))
    worst_area = input_hw[0] * input_hw[1]
    for p in perms:
        worst_area = max(worst_area, *predicted_areas(model.spec, p, input_hw))
    return worst_area * widest * 4


def _chunk_size(model, perms, input_hw, n, chunk_bytes) -> int:
    per_sample = _max_cell_bytes(model, perms, input_hw)
    return max(1, min(n, chunk_bytes // max(1, per_sample)))


def comprehensive_sweep(model: Model, ds: Dataset, perms,
                        strategy: str = "prefix",
                        chunk_bytes: int = DEFAULT_CHUNK_BYTES) -> SweepResult:
    """Forward every sample under every permutation; cell order does not
    affect the recorded values."""
    if strategy not in ("prefix", "direct"):
        raise ValueError(f"unknown sweep strategy {strategy!r}")
    n, m = len(ds), len(perms)
    cfg_table = _resolve_all(model, perms)
    preds = np.zeros((n, m), dtype=np.uint16)
    confs = np.zeros((n, m), dtype=np.float32)
    labels = ds.labels.astype(np.int64)
    input_hw = ds.images.shape[2:]
    chunk = _chunk_size(model, perms, input_hw, n, chunk_bytes)
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        x = Tensor(ds.images[lo:hi].astype(model.dtype))
        y = labels[lo:hi]
        if strategy == "direct":
            for j, cfgs in enumerate(cfg_table):
                feat = model.stem(x)
                for si in range(4):
                    feat = model.stage(si, feat, cfgs[si])
                _fill(model, feat, y, preds, confs, lo, [j])
        else:
            stem_out = model.stem(x)
            _prefix_walk(model, stem_out, y, list(range(m)), cfg_table, 0,
                         preds, confs, lo)
    macs = np.array([model.plan_macs(p.assignment(), input_hw) for p in perms],
                    dtype=np.int64)
    return SweepResult(perms=list(perms), labels=labels, preds=preds, confs=confs,
                       macs=macs, ds_fingerprint=dataset_fingerprint(ds),
                       input_hw=tuple(input_hw))


def _fill(model, feat, y, preds, confs, lo, perm_indices):
    logits = model.head_forward(feat).data
    probs = softmax(logits)
    p = probs.argmax(axis=1).astype(np.uint16)
    c = probs[np.arange(len(y)), y].astype(np.float32)
    for j in perm_indices:
        preds[lo:lo + len(y), j] = p
        confs[lo:lo + len(y), j] = c


def _prefix_walk(model, feat, y, items, cfg_table, stage_i, preds, confs, lo):
    if stage_i == 4:
        _fill(model, feat, y, preds, confs, lo, items)
        return
    groups: dict = {}
    for j in items:
        key = cfg_table[j][stage_i]
        groups.setdefault(key, []).append(j)
    for key, sub in groups.items():
        out = model.stage(stage_i, feat, key)
        _prefix_walk(model, out, y, sub, cfg_table, stage_i + 1, preds, confs, lo)
