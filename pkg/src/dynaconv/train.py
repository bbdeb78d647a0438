"""Static training and Random Option Fine-tuning (ROF).

The optimizer is momentum SGD with decoupled-from-nothing classic weight
decay folded into the gradient:

    g   <- grad + weight_decay * param
    v   <- momentum * v + g
    p   <- p - lr * v

ROF draws one permutation uniformly per batch from a dedicated seeded
stream, so data order and option order vary independently.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ConfigError, StateError
from .model import Model
from .sweep import comprehensive_sweep
from .tensor import Tape, Tensor, softmax_cross_entropy
from .weightio import save_model

SAMPLING_MODES = ("fixed-default", "uniform-random-per-batch")


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    decay_factor: float = 0.1
    decay_epoch: int | None = None     # epoch index at which lr *= decay_factor
    seed: int = 0
    sampling: str = "fixed-default"
    freeze_bn: bool = False
    checkpoint_every: int = 0          # save weights every N epochs (0 = never)
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.sampling not in SAMPLING_MODES:
            raise ConfigError(f"sampling must be one of {SAMPLING_MODES}")
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("need lr >= 0, batch_size >= 1, epochs >= 0")
        if self.decay_epoch is not None and self.decay_epoch > self.epochs:
            raise ConfigError("decay epoch beyond total epochs")
        if self.checkpoint_every and not self.checkpoint_dir:
            raise ConfigError("checkpoint_every needs checkpoint_dir")

    def lr_at(self, epoch: int) -> float:
        if self.decay_epoch is not None and epoch >= self.decay_epoch:
            return self.lr * self.decay_factor
        return self.lr


@dataclass
class TrainLog:
    epoch_loss: list = field(default_factory=list)
    rows: list = field(default_factory=list)   # (epoch, batch, loss, lr, perm_index)

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "batch", "loss", "lr", "perm_index"])
            for row in self.rows:
                w.writerow([row[0], row[1], f"{row[2]:.6f}", f"{row[3]:.6g}", row[4]])


def rof_perm_stream(seed: int) -> np.random.Generator:
    """Dedicated permutation-sampling stream, independent of data order."""
    return np.random.default_rng([seed, 17])


class _SGD:
    def __init__(self, params, momentum, weight_decay):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self, lr):
        for name, t in self.params.items():
            if t.grad is None:
                continue
            g = t.grad + self.weight_decay * t.data
            v = self.velocity[name]
            v *= self.momentum
            v += g
            t.data = t.data - lr * v
            t.grad = None


def _epoch_batches(n, batch_size, rng):
    order = rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield order[lo:lo + batch_size]


def _run_training(model: Model, ds: Dataset, cfg: TrainConfig, perms, perm_rng) -> TrainLog:
    if cfg.freeze_bn:
        model.set_bn_frozen(True)
    data_rng = np.random.default_rng([cfg.seed, 0])
    opt = _SGD(model.parameters(), cfg.momentum, cfg.weight_decay)
    log = TrainLog()
    default_assignment = None
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        losses = []
        for bi, idx in enumerate(_epoch_batches(len(ds), cfg.batch_size, data_rng)):
            if perms is None:
                assignment, pidx = default_assignment, -1
            else:
                pidx = int(perm_rng.integers(0, len(perms)))
                assignment = perms[pidx].assignment()
            x = Tensor(ds.images[idx].astype(model.dtype))
            y = ds.labels[idx]
            with Tape() as tape:
                logits = model.forward(x, assignment, training=True)
                loss, _ = softmax_cross_entropy(logits, y)
                if not np.isfinite(loss.data):
                    raise StateError(f"training diverged at epoch {epoch} batch {bi}")
                tape.backward(loss)
            opt.step(lr)
            losses.append(float(loss.data))
            log.rows.append((epoch, bi, losses[-1], lr, pidx))
        log.epoch_loss.append(float(np.mean(losses)) if losses else 0.0)
        if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            os.makedirs(cfg.checkpoint_dir, exist_ok=True)
            save_model(model, os.path.join(cfg.checkpoint_dir,
                                           f"checkpoint_epoch{epoch + 1:03d}.dynw"))
    if cfg.freeze_bn:
        model.set_bn_frozen(False)
    return log


def train_static(model: Model, ds: Dataset, cfg: TrainConfig) -> TrainLog:
    """Baseline training under the default permutation."""
    if cfg.sampling != "fixed-default":
        raise ConfigError("train_static requires fixed-default sampling")
    return _run_training(model, ds, cfg, perms=None, perm_rng=None)


@dataclass
class VolatilityReport:
    pre: tuple        # (worst, median, best)
    post: tuple

    @property
    def pre_volatility(self) -> float:
        return self.pre[2] - self.pre[0]

    @property
    def post_volatility(self) -> float:
        return self.post[2] - self.post[0]


def rof_finetune(model: Model, ds: Dataset, cfg: TrainConfig, perms,
                 eval_ds: Dataset | None = None,
                 eval_perms=None):
    """Fine-tune with one uniformly random permutation per batch.

    Validates every permutation against the model's option sets before any
    step.  When an evaluation dataset is given, runs comprehensive sweeps
    before and after fine-tuning and returns the volatility comparison."""
    if cfg.sampling != "uniform-random-per-batch":
        raise ConfigError("rof_finetune requires uniform-random-per-batch sampling")
    if not perms:
        raise ConfigError("rof_finetune needs a non-empty permutation list")
    for p in perms:
        model.resolve_configs(p.assignment())
    report = None
    pre_sweep = post_sweep = None
    if eval_ds is not None:
        from .analyses import bounds
        eval_perms = perms if eval_perms is None else eval_perms
        pre_sweep = comprehensive_sweep(model, eval_ds, eval_perms)
        pre_b = bounds(pre_sweep)
    log = _run_training(model, ds, cfg, perms=perms, perm_rng=rof_perm_stream(cfg.seed))
    if eval_ds is not None:
        from .analyses import bounds
        post_sweep = comprehensive_sweep(model, eval_ds, eval_perms)
        post_b = bounds(post_sweep)
        report = VolatilityReport(pre=(pre_b.worst, pre_b.median, pre_b.best),
                                  post=(post_b.worst, post_b.median, post_b.best))
    return model, log, report, pre_sweep, post_sweep
