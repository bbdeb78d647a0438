import warnings

import numpy as np
import pytest

from dynaconv.data import gen_scale_synthetic, standardize
from dynaconv.model import ModelSpec, OptionSet, StageSpec, build
from dynaconv.sweep import comprehensive_sweep, enumerate_permutations
from dynaconv.train import TrainConfig, train_static

warnings.filterwarnings("ignore", message=".*TBB.*")

# Desk-scale experiment shared by the acceptance and integration tests:
# a small residual net trained on the synthetic scale dataset.
DESK = dict(classes=5, scale_range=(8, 26), data_seed=42, model_seed=1,
            n_train=2400, n_eval=300, stem=8, widths=(8, 16, 24, 48),
            static=TrainConfig(epochs=6, batch_size=32, lr=0.02,
                               decay_epoch=4, seed=5),
            area_guard=8.0)


@pytest.fixture(scope="session")
def desk_experiment():
    """Train the desk model once per session; returns everything the
    desk-scale criteria need."""
    cfgs = DESK
    raw = gen_scale_synthetic(cfgs["n_train"] + cfgs["n_eval"], cfgs["classes"],
                              cfgs["scale_range"], seed=cfgs["data_seed"])
    train = standardize(raw.subset(np.arange(cfgs["n_train"])))
    spec = ModelSpec(
        input_size=32, class_count=cfgs["classes"], stem_channels=cfgs["stem"],
        stages=tuple(StageSpec("basic", 1, w) for w in cfgs["widths"]),
        default_strides=(1, 2, 2, 2),
        norm_mean=train.norm_mean, norm_std=train.norm_std)
    eval_ds = standardize(raw.subset(np.arange(cfgs["n_train"],
                                               cfgs["n_train"] + cfgs["n_eval"])),
                          train.norm_mean, train.norm_std)
    net = build(spec, seed=cfgs["model_seed"])
    train_static(net, train, cfgs["static"])
    hits = 0
    for lo in range(0, len(eval_ds), 100):
        logits = net.forward(eval_ds.images[lo:lo + 100]).data
        hits += int((logits.argmax(1) == eval_ds.labels[lo:lo + 100]).sum())
    return {"spec": spec, "state": net.state(), "train_ds": train,
            "eval_ds": eval_ds, "static_acc": hits / len(eval_ds)}


@pytest.fixture(scope="session")
def desk_stride_sweep(desk_experiment):
    """Comprehensive stride-ABCD sweep of the trained desk model."""
    spec = desk_experiment["spec"]
    net = build(spec, seed=DESK["model_seed"])
    net.load_state(desk_experiment["state"])
    perms = enumerate_permutations(spec, ("stride",), area_guard=DESK["area_guard"])
    sr = comprehensive_sweep(net, desk_experiment["eval_ds"], perms)
    return perms, sr


def tiny_spec(**kw):
    """A small model reused across tests: 16x16 input, narrow widths."""
    defaults = dict(
        input_size=16, class_count=4, stem_channels=4,
        stages=(StageSpec("basic", 1, 4), StageSpec("basic", 1, 8),
                StageSpec("basic", 1, 8), StageSpec("basic", 1, 16)),
        default_strides=(1, 2, 2, 2),
        options={"A": OptionSet(stride=(1, 2, 3, 4)),
                 "B": OptionSet(stride=(1, 2, 3, 4)),
                 "C": OptionSet(stride=(0.5, 1, 2, 3, 4)),
                 "D": OptionSet(stride=(0.5, 1, 2, 3, 4))})
    defaults.update(kw)
    return ModelSpec(**defaults)


@pytest.fixture(scope="session")
def tiny_model():
    return build(tiny_spec(), seed=7)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
