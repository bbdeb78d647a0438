"""Miniature scale-decreasing CNNs with four dynamic layers at the stage
transitions (slots A-D).

Every stage's first block carries the dynamic 3x3 (or depthwise 3x3)
convolution and always projects its skip path with a stride-matched 1x1
convolution, so any legal option permutation is well-formed.  The global
average-pool head accepts whatever resolution a permutation produces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .convops import (ConvConfig, ConvWeights, DILATION_OPTIONS, SIZE_OPTIONS,
                      STRIDE_OPTIONS, count_macs, dyn_conv, output_shape)
from .errors import ConfigError, ShapeError
from .tensor import Tensor, record_op

SLOTS = ("A", "B", "C", "D")
ATTRIBUTES = ("stride", "dilation", "size")
BLOCK_TYPES = ("basic", "bottleneck", "depthwise")

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class OptionSet:
    """Allowed option values of one dynamic slot, per attribute."""

    stride: tuple = (1, 2, 3, 4)
    dilation: tuple = DILATION_OPTIONS
    size: tuple = SIZE_OPTIONS

    def __post_init__(self):
        for name, allowed in (("stride", STRIDE_OPTIONS),
                              ("dilation", DILATION_OPTIONS),
                              ("size", SIZE_OPTIONS)):
            vals = getattr(self, name)
            if not vals or any(v not in allowed for v in vals):
                raise ConfigError(f"{name} options {vals} not a subset of {allowed}")
        object.__setattr__(self, "stride", tuple(sorted(self.stride)))
        object.__setattr__(self, "dilation", tuple(sorted(self.dilation)))
        object.__setattr__(self, "size", tuple(sorted(self.size)))

    def allowed(self, attr: str, value) -> bool:
        return value in getattr(self, attr)

    def values(self, attr: str) -> tuple:
        return getattr(self, attr)


def default_options() -> dict:
    """Factory option sets; upsampling stays excluded from the shallow A and B slots."""
    return {
        "A": OptionSet(stride=(1, 2, 3, 4)),
        "B": OptionSet(stride=(1, 2, 3, 4)),
        "C": OptionSet(stride=(0.5, 1, 2, 3, 4)),
        "D": OptionSet(stride=(0.5, 1, 2, 3, 4)),
    }


@dataclass(frozen=True)
class StageSpec:
    block: str
    blocks: int
    width: int

    def __post_init__(self):
        if self.block not in BLOCK_TYPES:
            raise ConfigError(f"block type {self.block!r} not in {BLOCK_TYPES}")
        if self.blocks < 1 or self.width < 1:
            raise ConfigError("stage needs blocks >= 1 and width >= 1")


@dataclass(frozen=True)
class ModelSpec:
    input_size: int = 32
    class_count: int = 10
    stem_channels: int = 16
    stages: tuple = (StageSpec("basic", 1, 16), StageSpec("basic", 1, 32),
                     StageSpec("basic", 1, 64), StageSpec("basic", 1, 128))
    default_strides: tuple = (1, 2, 2, 2)
    options: dict = field(default_factory=default_options)
    norm_mean: tuple = (0.0, 0.0, 0.0)
    norm_std: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if len(self.stages) != 4:
            raise ConfigError("exactly 4 stages (one dynamic slot per stage)")
        if set(self.options) != set(SLOTS):
            raise ConfigError(f"options must cover slots {SLOTS}")
        for slot, s in zip(SLOTS, self.default_strides):
            if not self.options[slot].allowed("stride", s):
                raise ConfigError(f"default stride {s} not allowed in slot {slot}")

    def to_dict(self) -> dict:
        return {
            "input_size": self.input_size,
            "class_count": self.class_count,
            "stem_channels": self.stem_channels,
            "stages": [[s.block, s.blocks, s.width] for s in self.stages],
            "default_strides": list(self.default_strides),
            "options": {slot: {a: list(self.options[slot].values(a)) for a in ATTRIBUTES}
                        for slot in SLOTS},
            "norm_mean": list(self.norm_mean),
            "norm_std": list(self.norm_std),
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        return ModelSpec(
            input_size=d["input_size"],
            class_count=d["class_count"],
            stem_channels=d["stem_channels"],
            stages=tuple(StageSpec(b, n, w) for b, n, w in d["stages"]),
            default_strides=tuple(d["default_strides"]),
            options={slot: OptionSet(tuple(o["stride"]), tuple(o["dilation"]), tuple(o["size"]))
                     for slot, o in d["options"].items()},
            norm_mean=tuple(d["norm_mean"]),
            norm_std=tuple(d["norm_std"]),
        )

    def slot_config(self, slot_idx: int, setting: dict | None, groups: int) -> ConvConfig:
        """Resolve one slot's active configuration, validating every option."""
        slot = SLOTS[slot_idx]
        opts = self.options[slot]
        stride = self.default_strides[slot_idx]
        dilation, size = 1, 3
        if setting:
            for attr, value in setting.items():
                if attr not in ATTRIBUTES:
                    raise ConfigError(f"unknown attribute {attr!r}")
                if not opts.allowed(attr, value):
                    raise ConfigError(f"option {attr}={value} not allowed in slot {slot}")
            stride = setting.get("stride", stride)
            dilation = setting.get("dilation", dilation)
            size = setting.get("size", size)
        return ConvConfig(stride=stride, dilation=dilation, kernel_size=size, groups=groups)


# ---------------------------------------------------------------------------
# layers

def upsample_nearest2x(x: Tensor) -> Tensor:
    y = x.data.repeat(2, axis=2).repeat(2, axis=3)
    n, c, h, w = x.data.shape
    out = Tensor(y)

    def backward(g):
        return [g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))]

    return record_op((x,), out, backward)


class Conv:
    def __init__(self, name, cin, cout, k0, groups, params, rng, dtype):
        fan_in = (cin // groups) * k0 * k0
        kern = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                          size=(cout, cin // groups, k0, k0)).astype(dtype)
        self.weights = ConvWeights(kernel=Tensor(kern, requires_grad=True, name=f"{name}.kernel"))
        self.groups = groups
        params[f"{name}.kernel"] = self.weights.kernel

    def __call__(self, x: Tensor, cfg: ConvConfig) -> Tensor:
        return dyn_conv(x, self.weights, cfg)


class BatchNorm:
    def __init__(self, name, c, params, buffers, dtype):
        self.gamma = Tensor(np.ones(c, dtype=dtype), requires_grad=True, name=f"{name}.gamma")
        self.beta = Tensor(np.zeros(c, dtype=dtype), requires_grad=True, name=f"{name}.beta")
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)
        params[f"{name}.gamma"] = self.gamma
        params[f"{name}.beta"] = self.beta
        buffers[f"{name}.running_mean"] = self.running_mean
        buffers[f"{name}.running_var"] = self.running_var
        self.frozen = False

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        xd = x.data
        if training:
            mu = xd.mean(axis=(0, 2, 3))
            var = xd.var(axis=(0, 2, 3))
            if not self.frozen:
                self.running_mean += BN_MOMENTUM * (mu - self.running_mean)
                self.running_var += BN_MOMENTUM * (var - self.running_var)
        else:
            mu, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (xd - mu[None, :, None, None]) * inv[None, :, None, None]
        y = self.gamma.data[None, :, None, None] * xhat + self.beta.data[None, :, None, None]
        out = Tensor(y)
        gamma, beta = self.gamma, self.beta
        m = xd.shape[0] * xd.shape[2] * xd.shape[3]

        def backward(g):
            dgamma = (g * xhat).sum(axis=(0, 2, 3))
            dbeta = g.sum(axis=(0, 2, 3))
            gi = g * gamma.data[None, :, None, None] * inv[None, :, None, None]
            if training:
                dx = gi - gi.mean(axis=(0, 2, 3), keepdims=True) \
                    - xhat * (gi * xhat).sum(axis=(0, 2, 3), keepdims=True) / m
            else:
                dx = gi
            return [dx, dgamma, dbeta]

        return record_op((x, gamma, beta), out, backward)


class Linear:
    def __init__(self, name, fin, fout, params, rng, dtype):
        w = rng.normal(0.0, np.sqrt(2.0 / fin), size=(fin, fout)).astype(dtype)
        self.w = Tensor(w, requires_grad=True, name=f"{name}.w")
        self.b = Tensor(np.zeros(fout, dtype=dtype), requires_grad=True, name=f"{name}.b")
        params[f"{name}.w"] = self.w
        params[f"{name}.b"] = self.b

    def __call__(self, x: Tensor) -> Tensor:
        return T.add_row_bias(T.matmul(x, self.w), self.b)


# ---------------------------------------------------------------------------
# blocks

def _static_cfg(groups=1):
    return ConvConfig(stride=1, dilation=1, kernel_size=3, groups=groups)


def _skip_cfg(stride):
    return ConvConfig(stride=1 if stride == 0.5 else stride, dilation=1,
                      kernel_size=1, groups=1)


class _BlockBase:
    """Shared skip handling: first blocks always project at matching stride."""

    def _skip(self, x: Tensor, cfg: ConvConfig, training: bool) -> Tensor:
        if not self.project:
            return x
        if cfg.fractional:
            x = upsample_nearest2x(x)
        y = self.skip_conv(x, _skip_cfg(cfg.stride))
        return self.skip_bn(y, training)

    def _skip_plan(self, cin, h, w, cfg):
        if not self.project:
            return 0
        if cfg.fractional:
            h, w = 2 * h, 2 * w
        return count_macs((h, w), (self.cout, cin), _skip_cfg(cfg.stride))


class BasicBlock(_BlockBase):
    def __init__(self, name, cin, cout, dynamic, params, buffers, rng, dtype):
        self.cin, self.cout, self.dynamic = cin, cout, dynamic
        self.project = dynamic  # first block of the stage
        self.conv1 = Conv(f"{name}.conv1", cin, cout, 3, 1, params, rng, dtype)
        self.bn1 = BatchNorm(f"{name}.bn1", cout, params, buffers, dtype)
        self.conv2 = Conv(f"{name}.conv2", cout, cout, 3, 1, params, rng, dtype)
        self.bn2 = BatchNorm(f"{name}.bn2", cout, params, buffers, dtype)
        if self.project:
            self.skip_conv = Conv(f"{name}.skip", cin, cout, 1, 1, params, rng, dtype)
            self.skip_bn = BatchNorm(f"{name}.skip_bn", cout, params, buffers, dtype)

    def forward(self, x: Tensor, cfg: ConvConfig, training: bool) -> Tensor:
        y = T.relu(self.bn1(self.conv1(x, cfg), training))
        y = self.bn2(self.conv2(y, _static_cfg()), training)
        return T.relu(T.add(y, self._skip(x, cfg, training)))

    def plan(self, h, w, cfg):
        macs = count_macs((h, w), (self.cout, self.cin), cfg)
        oh, ow = output_shape(h, w, cfg)
        macs += count_macs((oh, ow), (self.cout, self.cout), _static_cfg())
        macs += self._skip_plan(self.cin, h, w, cfg)
        return macs, (oh, ow)


class BottleneckBlock(_BlockBase):
    def __init__(self, name, cin, cout, dynamic, params, buffers, rng, dtype):
        self.cin, self.cout, self.dynamic = cin, cout, dynamic
        self.mid = max(1, cout // 2)
        self.project = dynamic
        self.reduce = Conv(f"{name}.reduce", cin, self.mid, 1, 1, params, rng, dtype)
        self.bn1 = BatchNorm(f"{name}.bn1", self.mid, params, buffers, dtype)
        self.conv = Conv(f"{name}.conv", self.mid, self.mid, 3, 1, params, rng, dtype)
        self.bn2 = BatchNorm(f"{name}.bn2", self.mid, params, buffers, dtype)
        self.expand = Conv(f"{name}.expand", self.mid, cout, 1, 1, params, rng, dtype)
        self.bn3 = BatchNorm(f"{name}.bn3", cout, params, buffers, dtype)
        if self.project:
            self.skip_conv = Conv(f"{name}.skip", cin, cout, 1, 1, params, rng, dtype)
            self.skip_bn = BatchNorm(f"{name}.skip_bn", cout, params, buffers, dtype)

    def forward(self, x: Tensor, cfg: ConvConfig, training: bool) -> Tensor:
        y = T.relu(self.bn1(self.reduce(x, _skip_cfg(1)), training))
        y = T.relu(self.bn2(self.conv(y, cfg), training))
        y = self.bn3(self.expand(y, _skip_cfg(1)), training)
        return T.relu(T.add(y, self._skip(x, cfg, training)))

    def plan(self, h, w, cfg):
        macs = count_macs((h, w), (self.mid, self.cin), _skip_cfg(1))
        macs += count_macs((h, w), (self.mid, self.mid), cfg)
        oh, ow = output_shape(h, w, cfg)
        macs += count_macs((oh, ow), (self.cout, self.mid), _skip_cfg(1))
        macs += self._skip_plan(self.cin, h, w, cfg)
        return macs, (oh, ow)


class DepthwiseBlock(_BlockBase):
    """Depthwise 3x3 (the dynamic conv, groups = channels) then pointwise 1x1."""

    def __init__(self, name, cin, cout, dynamic, params, buffers, rng, dtype):
        self.cin, self.cout, self.dynamic = cin, cout, dynamic
        self.project = dynamic
        self.dw = Conv(f"{name}.dw", cin, cin, 3, cin, params, rng, dtype)
        self.bn1 = BatchNorm(f"{name}.bn1", cin, params, buffers, dtype)
        self.pw = Conv(f"{name}.pw", cin, cout, 1, 1, params, rng, dtype)
        self.bn2 = BatchNorm(f"{name}.bn2", cout, params, buffers, dtype)
        if self.project:
            self.skip_conv = Conv(f"{name}.skip", cin, cout, 1, 1, params, rng, dtype)
            self.skip_bn = BatchNorm(f"{name}.skip_bn", cout, params, buffers, dtype)

    def forward(self, x: Tensor, cfg: ConvConfig, training: bool) -> Tensor:
        y = T.relu(self.bn1(self.dw(x, cfg), training))
        y = self.bn2(self.pw(y, _skip_cfg(1)), training)
        return T.relu(T.add(y, self._skip(x, cfg, training)))

    def plan(self, h, w, cfg):
        macs = count_macs((h, w), (self.cin, 1), cfg)
        oh, ow = output_shape(h, w, cfg)
        macs += count_macs((oh, ow), (self.cout, self.cin), _skip_cfg(1))
        macs += self._skip_plan(self.cin, h, w, cfg)
        return macs, (oh, ow)


_BLOCK_CLASSES = {"basic": BasicBlock, "bottleneck": BottleneckBlock,
                  "depthwise": DepthwiseBlock}


class Model:
    """A built network: ordered parameters, buffers, and a configurable
    forward pass.  Stage boundaries are exposed for prefix-cached sweeps."""

    def __init__(self, spec: ModelSpec, seed: int, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.stem_conv = Conv("stem.conv", 3, spec.stem_channels, 3, 1, self.params, rng, self.dtype)
        self.stem_bn = BatchNorm("stem.bn", spec.stem_channels, self.params, self.buffers, self.dtype)
        self.stages = []
        cin = spec.stem_channels
        for si, st in enumerate(spec.stages):
            blocks = []
            cls = _BLOCK_CLASSES[st.block]
            for bi in range(st.blocks):
                blocks.append(cls(f"s{si}.b{bi}", cin if bi == 0 else st.width, st.width,
                                  dynamic=bi == 0, params=self.params,
                                  buffers=self.buffers, rng=rng, dtype=self.dtype))
            cin = st.width
            self.stages.append(blocks)
        self.head = Linear("head", cin, spec.class_count, self.params, rng, self.dtype)

    # -- configuration ------------------------------------------------------

    def _dyn_groups(self, slot_idx: int) -> int:
        block = self.stages[slot_idx][0]
        return block.cin if isinstance(block, DepthwiseBlock) else 1

    def resolve_configs(self, assignment: dict | None) -> list[ConvConfig]:
        """Per-slot active configs; assignment maps slot name -> {attr: value}."""
        assignment = assignment or {}
        unknown = set(assignment) - set(SLOTS)
        if unknown:
            raise ConfigError(f"unknown slots {sorted(unknown)}")
        return [self.spec.slot_config(i, assignment.get(SLOTS[i]), self._dyn_groups(i))
                for i in range(4)]

    # -- forward ------------------------------------------------------------

    def stem(self, x: Tensor, training: bool = False) -> Tensor:
        return T.relu(self.stem_bn(self.stem_conv(x, _static_cfg()), training))

    def stage(self, i: int, x: Tensor, cfg: ConvConfig, training: bool = False) -> Tensor:
        blocks = self.stages[i]
        y = blocks[0].forward(x, cfg, training)
        for b in blocks[1:]:
            groups = b.cin if isinstance(b, DepthwiseBlock) else 1
            y = b.forward(y, _static_cfg(groups), training)
        return y

    def head_forward(self, x: Tensor) -> Tensor:
        pooled = T.reduce_mean(x, (2, 3))
        flat = T.reshape(pooled, (x.data.shape[0], x.data.shape[1]))
        return self.head(flat)

    def forward(self, x, assignment: dict | None = None, training: bool = False) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if x.data.ndim != 4 or x.data.shape[1] != 3:
            raise ShapeError(f"expected (n, 3, h, w) input, got {x.data.shape}")
        cfgs = self.resolve_configs(assignment)
        y = self.stem(x, training)
        for i in range(4):
            y = self.stage(i, y, cfgs[i], training)
        return self.head_forward(y)

    # -- shape / cost algebra -----------------------------------------------

    def stage_output_shapes(self, assignment: dict | None, h: int | None = None):
        """Spatial extents after the stem and each stage (stem keeps h)."""
        cfgs = self.resolve_configs(assignment)
        h = w = self.spec.input_size if h is None else h
        shapes = []
        for i in range(4):
            h, w = output_shape(h, w, cfgs[i])
            shapes.append((h, w))
        return shapes

    def plan_macs(self, assignment: dict | None, input_hw=None) -> int:
        """Analytic MAC total (convolutions + linear head) for one permutation."""
        cfgs = self.resolve_configs(assignment)
        h, w = (self.spec.input_size,) * 2 if input_hw is None else input_hw
        total = count_macs((h, w), (self.spec.stem_channels, 3), _static_cfg())
        for i in range(4):
            blocks = self.stages[i]
            macs, (h, w) = blocks[0].plan(h, w, cfgs[i])
            total += macs
            for b in blocks[1:]:
                groups = b.cin if isinstance(b, DepthwiseBlock) else 1
                m2, (h, w) = b.plan(h, w, _static_cfg(groups))
                total += m2
        total += self.spec.stages[-1].width * self.spec.class_count
        return total

    # -- state --------------------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def state(self) -> dict[str, np.ndarray]:
        out = {name: t.data for name, t in self.params.items()}
        out.update(self.buffers)
        return out

    def load_state(self, arrays: dict[str, np.ndarray]):
        mine = self.state()
        missing = set(mine) - set(arrays)
        extra = set(arrays) - set(mine)
        if missing or extra:
            raise ShapeError(f"state mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, t in self.params.items():
            if arrays[name].shape != t.data.shape:
                raise ShapeError(f"{name}: shape {arrays[name].shape} != {t.data.shape}")
            t.data = arrays[name].astype(self.dtype)
        for name in self.buffers:
            self.buffers[name][...] = arrays[name].astype(self.dtype)

    def set_bn_frozen(self, frozen: bool):
        for stage in self.stages:
            for b in stage:
                for attr in vars(b).values():
                    if isinstance(attr, BatchNorm):
                        attr.frozen = frozen
        self.stem_bn.frozen = frozen


def build(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> Model:
    """Deterministic construction: the same seed yields bit-identical weights."""
    return Model(spec, seed, dtype)
