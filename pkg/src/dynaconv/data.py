"""Dataset ingestion, the scale/context probe transforms, and a synthetic
scale-controlled shape dataset for directional preference tests."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .convops import resize_matrix
from .errors import DataFormatError
from .weightio import read_container, write_container

CIFAR_RECORD = 3073  # 1 label byte + 3 channel planes of 1024 bytes
SCALE_FACTORS = (0.25, 0.5, 1.0, 2.0, 4.0)

SHAPES = ("square", "disk", "cross", "triangle", "ring", "diamond", "hbar", "vbar")


@dataclass
class Dataset:
    images: np.ndarray          # (n, 3, h, w) float32, [0,1] or standardized
    labels: np.ndarray          # (n,) int64
    split: str = ""
    normalized: bool = False
    norm_mean: tuple | None = None
    norm_std: tuple | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[0] == 0:
            raise DataFormatError(f"images must be (n,3,h,w) with n>0, got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise DataFormatError("labels must align with images")
        if self.labels.min() < 0:
            raise DataFormatError("negative label")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def class_count(self) -> int:
        return int(self.labels.max()) + 1

    def subset(self, idx) -> "Dataset":
        meta = {k: v[idx] for k, v in self.meta.items()}
        return replace(self, images=self.images[idx], labels=self.labels[idx], meta=meta)


def standardize(ds: Dataset, mean=None, std=None) -> Dataset:
    """Per-channel normalization; constants default to dataset statistics."""
    if ds.normalized:
        return ds
    if mean is None:
        mean = ds.images.mean(axis=(0, 2, 3))
    if std is None:
        std = ds.images.std(axis=(0, 2, 3))
    mean = np.asarray(mean, dtype=ds.images.dtype)
    std = np.asarray(std, dtype=ds.images.dtype)
    if np.any(std <= 0):
        raise DataFormatError("zero channel variance; cannot standardize")
    imgs = (ds.images - mean[None, :, None, None]) / std[None, :, None, None]
    return replace(ds, images=imgs, normalized=True,
                   norm_mean=tuple(float(v) for v in mean),
                   norm_std=tuple(float(v) for v in std))


# ---------------------------------------------------------------------------
# CIFAR-10 binary batches

def _read_cifar_file(path) -> tuple[np.ndarray, np.ndarray]:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD != 0:
        raise DataFormatError(
            f"{path}: size {raw.size} is not a multiple of {CIFAR_RECORD}")
    rec = raw.reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise DataFormatError(f"{path}: label byte {labels.max()} out of range [0, 10)")
    images = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return images, labels


def load_cifar10(directory, split: str = "train") -> Dataset:
    """Read standard CIFAR-10 binary batch files from a directory."""
    if split == "train":
        names = [f"data_batch_{i}.bin" for i in range(1, 6)]
        names = [n for n in names if os.path.exists(os.path.join(directory, n))]
        if not names:
            raise DataFormatError(f"no data_batch_*.bin files under {directory}")
    elif split == "test":
        names = ["test_batch.bin"]
    else:
        raise ValueError(f"split must be train or test, got {split!r}")
    images, labels = [], []
    for name in names:
        path = os.path.join(directory, name)
        if not os.path.exists(path):
            raise DataFormatError(f"missing CIFAR-10 batch file {path}")
        im, lb = _read_cifar_file(path)
        images.append(im)
        labels.append(lb)
    return Dataset(np.concatenate(images), np.concatenate(labels), split=split)


# ---------------------------------------------------------------------------
# IDX (images magic 2051, labels magic 2049, big-endian)

def load_idx(images_path, labels_path) -> Dataset:
    with open(images_path, "rb") as f:
        raw = f.read()
    if len(raw) < 16:
        raise DataFormatError(f"{images_path}: too short for an IDX image header")
    magic, n, h, w = struct.unpack(">IIII", raw[:16])
    if magic != 0x00000803:
        raise DataFormatError(f"{images_path}: bad IDX image magic {magic:#010x}")
    if len(raw) != 16 + n * h * w:
        raise DataFormatError(f"{images_path}: payload does not match header dims")
    gray = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, 1, h, w)
    with open(labels_path, "rb") as f:
        lraw = f.read()
    if len(lraw) < 8:
        raise DataFormatError(f"{labels_path}: too short for an IDX label header")
    lmagic, ln = struct.unpack(">II", lraw[:8])
    if lmagic != 0x00000801:
        raise DataFormatError(f"{labels_path}: bad IDX label magic {lmagic:#010x}")
    if ln != n:
        raise DataFormatError(f"label count {ln} != image count {n}")
    if len(lraw) != 8 + ln:
        raise DataFormatError(f"{labels_path}: payload does not match header count")
    labels = np.frombuffer(lraw, dtype=np.uint8, offset=8).astype(np.int64)
    images = np.repeat(gray, 3, axis=1).astype(np.float32) / 255.0
    return Dataset(images, labels)


# ---------------------------------------------------------------------------
# synthetic scale-controlled shapes

def _shape_mask(kind: str, canvas: int, scale: int, cy: int, cx: int) -> np.ndarray:
    yy, xx = np.mgrid[0:canvas, 0:canvas]
    y0 = cy - scale // 2
    x0 = cx - scale // 2
    iy = yy - y0
    ix = xx - x0
    inside = (iy >= 0) & (iy < scale) & (ix >= 0) & (ix < scale)
    c = (scale - 1) / 2.0
    r = scale / 2.0
    dy = iy - c
    dx = ix - c
    if kind == "square":
        return inside
    if kind == "disk":
        return dy * dy + dx * dx <= r * r
    if kind == "cross":
        bar = max(1, scale // 3)
        return inside & ((np.abs(dy) <= bar / 2) | (np.abs(dx) <= bar / 2))
    if kind == "triangle":
        return inside & (np.abs(dx) * 2 <= iy)
    if kind == "ring":
        outer = dy * dy + dx * dx <= r * r
        inner_r = max(r - max(1.0, scale / 4.0), 0.0)
        return outer & (dy * dy + dx * dx >= inner_r * inner_r)
    if kind == "diamond":
        # half-integer centers (even scale) need the extra half step so the
        # extreme rows/columns stay populated
        return np.abs(dy) + np.abs(dx) <= (c if scale % 2 else c + 0.5)
    if kind == "hbar":
        bar = max(1, scale // 3)
        return inside & (np.abs(dy) <= bar / 2)
    if kind == "vbar":
        bar = max(1, scale // 3)
        return inside & (np.abs(dx) <= bar / 2)
    raise ValueError(f"unknown shape {kind!r}")


def gen_scale_synthetic(n: int, class_count: int, scale_range: tuple, seed: int,
                        canvas: int = 32) -> Dataset:
    """Shapes rendered at controlled pixel scale on a noise background.

    Per-sample ground-truth scale (bounding-box extent) is kept in
    ``meta['scale']``.
    """
    if not 1 <= class_count <= len(SHAPES):
        raise ValueError(f"class_count must be in [1, {len(SHAPES)}]")
    lo, hi = int(scale_range[0]), int(scale_range[1])
    if lo < 3 or hi > canvas:
        raise ValueError(f"scale range [{lo}, {hi}] exceeds canvas {canvas}")
    rng = np.random.default_rng(seed)
    labels = np.arange(n, dtype=np.int64) % class_count
    rng.shuffle(labels)
    images = np.empty((n, 3, canvas, canvas), dtype=np.float32)
    scales = np.empty(n, dtype=np.int64)
    for i in range(n):
        scale = int(rng.integers(lo, hi + 1))
        margin = (canvas - scale) // 2
        jitter = min(2, margin)
        cy = canvas // 2 + int(rng.integers(-jitter, jitter + 1))
        cx = canvas // 2 + int(rng.integers(-jitter, jitter + 1))
        mask = _shape_mask(SHAPES[labels[i]], canvas, scale, cy, cx)
        bg = rng.uniform(0.0, 0.35, size=(3, canvas, canvas)).astype(np.float32)
        color = rng.uniform(0.65, 1.0, size=3).astype(np.float32)
        img = bg
        img[:, mask] = color[:, None]
        images[i] = img
        scales[i] = scale
    return Dataset(images, labels, split="synthetic", meta={"scale": scales})


# ---------------------------------------------------------------------------
# probe transforms

@dataclass(frozen=True)
class ProbeTransform:
    kind: str                 # "scale" | "context"
    factor: float = 1.0       # scale probe: resize factor
    crop: int = 0             # context probe: center-crop extent
    reference: int = 40       # context probe: resize-to extent before cropping

    def __post_init__(self):
        if self.kind == "scale":
            if self.factor not in SCALE_FACTORS:
                raise ValueError(f"scale factor {self.factor} not in {SCALE_FACTORS}")
        elif self.kind == "context":
            if self.crop < 1 or self.crop > self.reference:
                raise ValueError(
                    f"crop {self.crop} outside (0, reference {self.reference}]")
        else:
            raise ValueError(f"probe kind must be scale or context, got {self.kind!r}")


def _bilinear_resize(images: np.ndarray, oh: int, ow: int) -> np.ndarray:
    h, w = images.shape[2], images.shape[3]
    if (oh, ow) == (h, w):
        return images
    mh = resize_matrix(h, oh, dtype=images.dtype)
    mw = resize_matrix(w, ow, dtype=images.dtype)
    return np.einsum("ah,nchw,bw->ncab", mh, images, mw, optimize=True)


def apply_probe(ds: Dataset, t: ProbeTransform) -> Dataset:
    """Scale probe: resize by the factor.  Context probe: resize to the
    reference extent then center-crop (fed to the model without re-resize)."""
    h, w = ds.images.shape[2], ds.images.shape[3]
    if t.kind == "scale":
        oh = int(round(h * t.factor))
        ow = int(round(w * t.factor))
        if oh < 1 or ow < 1:
            raise ValueError(f"scale factor {t.factor} collapses {h}x{w} input")
        out = _bilinear_resize(ds.images, oh, ow)
    else:
        resized = _bilinear_resize(ds.images, t.reference, t.reference)
        off = (t.reference - t.crop) // 2
        out = resized[:, :, off:off + t.crop, off:off + t.crop]
    return replace(ds, images=np.ascontiguousarray(out))


# ---------------------------------------------------------------------------
# container round trip (portable weight format)

def save_dataset(path, ds: Dataset):
    header = {
        "kind": "dataset",
        "split": ds.split,
        "normalized": ds.normalized,
        "norm_mean": list(ds.norm_mean) if ds.norm_mean else None,
        "norm_std": list(ds.norm_std) if ds.norm_std else None,
        "meta_keys": sorted(ds.meta),
    }
    tensors = {"images": ds.images.astype(np.float32),
               "labels": ds.labels.astype(np.float32)}
    for k in sorted(ds.meta):
        tensors[f"meta.{k}"] = ds.meta[k].astype(np.float32)
    write_container(path, header, tensors)


def load_dataset(path) -> Dataset:
    store = read_container(path)
    if store.header.get("kind") != "dataset":
        raise DataFormatError(f"{path}: container is not a dataset")
    h = store.header
    meta = {k: store.tensors[f"meta.{k}"].astype(np.int64) for k in h.get("meta_keys", [])}
    return Dataset(
        images=store.tensors["images"],
        labels=store.tensors["labels"].astype(np.int64),
        split=h.get("split", ""),
        normalized=h.get("normalized", False),
        norm_mean=tuple(h["norm_mean"]) if h.get("norm_mean") else None,
        norm_std=tuple(h["norm_std"]) if h.get("norm_std") else None,
        meta=meta)
