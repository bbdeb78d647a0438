"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Fast numeric criteria run on synthetic fixtures.  The desk-scale
experiments share session fixtures: a small residual model trained on the
synthetic scale dataset drives the ROF, efficiency, and probe criteria.
The dominance experiment requires real CIFAR-10 binary batches (directory
from $DYNACONV_CIFAR10 or ./data/cifar-10-batches-bin); without the data
it fails with a diagnostic, because no substitute dataset can stand in
for it.

Run: pytest tests/test_acceptance.py -v -s
"""

import os
import time
from dataclasses import replace

import numpy as np
import pytest

from dynaconv import analyses as A
from dynaconv import convops as C
from dynaconv.data import (ProbeTransform, apply_probe, load_cifar10,
                           standardize)
from dynaconv.errors import DataFormatError
from dynaconv.model import ModelSpec, OptionSet, SLOTS, StageSpec, build
from dynaconv.sweep import (comprehensive_sweep, default_values,
                            enumerate_permutations, find_permutation)
from dynaconv.tensor import Tensor, grad_check, reduce_mean
from dynaconv.train import TrainConfig, rof_finetune, train_static

from oracles import (counted_conv_macs, exhaustive_best_subset, naive_conv2d)
from test_analyses import random_toy, toy_sweep

CIFAR_DIR = os.environ.get("DYNACONV_CIFAR10",
                           os.path.join(os.path.dirname(__file__), "..",
                                        "data", "cifar-10-batches-bin"))


def report(name, ok, detail=""):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# criterion: numerics suite (< 2 min)

class TestNumericsSuite:
    def test_gradients_and_identities(self, rng):
        t0 = time.time()
        x = Tensor(rng.normal(size=(2, 2, 6, 6)), requires_grad=True, dtype=np.float64)
        w = C.ConvWeights(Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True,
                                 dtype=np.float64),
                          Tensor(rng.normal(size=3), requires_grad=True,
                                 dtype=np.float64))
        paths = ([C.ConvConfig()]
                 + [C.ConvConfig(dilation=d) for d in (2, 3, 4, 5)]
                 + [C.ConvConfig(kernel_size=k) for k in (1, 5, 7, 9)]
                 + [C.ConvConfig(stride=0.5), C.ConvConfig(stride=0.5, kernel_size=5)])
        worst = 0.0
        for cfg in paths:
            def f():
                return reduce_mean(C.dyn_conv(x, w, cfg), (0, 1, 2, 3))
            rep = grad_check(f, {"x": x, "k": w.kernel, "b": w.bias},
                             tol=1e-4, max_coords=12)
            assert rep.passed, (cfg, rep.failures[:2])
            worst = max(worst, max((fl.rel_err for fl in rep.failures), default=0.0))

        # dilation zero-insertion equivalence, 64-bit, 1e-10
        xa = rng.normal(size=(1, 2, 12, 12))
        kern = rng.normal(size=(3, 2, 3, 3))
        dil_err = 0.0
        for d in (2, 3, 4, 5):
            cfg = C.ConvConfig(dilation=d)
            got = C.conv_forward(Tensor(xa), C.ConvWeights(Tensor(kern)), cfg).data
            span = 2 * d + 1
            zk = np.zeros((3, 2, span, span))
            zk[:, :, ::d, ::d] = kern
            want = naive_conv2d(xa, zk, 1, cfg.padding, 1, 1)
            dil_err = max(dil_err, float(np.abs(got - want).max()))
        assert dil_err <= 1e-10

        # transposed-conv adjoint dot-product identity, 1e-10
        ones = np.ones((1, 1, 3, 3))
        xs = rng.normal(size=(1, 1, 8, 8))
        fwd = C.conv_forward(Tensor(xs), C.ConvWeights(Tensor(ones)),
                             C.ConvConfig(stride=2)).data
        ys = rng.normal(size=fwd.shape)
        back = C.fractional_forward(Tensor(ys), C.ConvWeights(Tensor(ones)),
                                    C.ConvConfig(stride=0.5)).data
        adj_err = abs(float((fwd * ys).sum()) - float((xs * back).sum()))
        assert adj_err <= 1e-10

        took = time.time() - t0
        report("numerics suite",
               took < 120,
               f"{len(paths)} gradient paths at 1e-4, dilation equivalence "
               f"{dil_err:.1e}, adjoint identity {adj_err:.1e}, {took:.1f}s")


# ---------------------------------------------------------------------------
# criterion: shape / cost oracles (< 2 min)

class TestShapeCostOracles:
    def test_shapes_and_macs(self):
        t0 = time.time()
        rng = np.random.default_rng(7)
        checked = 0
        for _ in range(1000):
            s = rng.choice([0.5, 1, 2, 3, 4])
            cfg = C.ConvConfig(stride=float(s) if s == 0.5 else int(s),
                               dilation=int(rng.choice([1, 2, 3, 4, 5])),
                               kernel_size=int(rng.choice([1, 3, 5, 7, 9])))
            h = int(rng.integers(2, 20))
            wd = int(rng.integers(2, 20))
            x = Tensor(rng.normal(size=(1, 2, h, wd)).astype(np.float32))
            w = C.ConvWeights(Tensor(rng.normal(size=(2, 2, 3, 3)).astype(np.float32)))
            y = C.dyn_conv(x, w, cfg)
            assert y.data.shape[2:] == C.output_shape(h, wd, cfg), cfg
            checked += 1

        macs_checked = 0
        for seed in range(6):
            r2 = np.random.default_rng(seed)
            cfg = C.ConvConfig(stride=int(r2.choice([1, 2, 3, 4])),
                               dilation=int(r2.choice([1, 2, 3, 4, 5])),
                               kernel_size=int(r2.choice([1, 3, 5, 7, 9])),
                               groups=int(r2.choice([1, 2])))
            cin, cout, h = 4, 6, int(r2.integers(6, 14))
            analytic = C.count_macs((h, h), (cout, cin // cfg.groups), cfg)
            counted = counted_conv_macs((h, h), cout, cin // cfg.groups,
                                        int(cfg.stride), cfg.padding,
                                        cfg.dilation, cfg.kernel_size)
            assert analytic == counted, cfg
            macs_checked += 1

        took = time.time() - t0
        report("shape/cost oracles", took < 120,
               f"{checked} random shapes exact, {macs_checked} instrumented "
               f"MAC counts exact, {took:.1f}s")


# ---------------------------------------------------------------------------
# criterion: quality-score / bounds suite (< 1 min)

class TestQualityBoundsSuite:
    def test_quality_and_bounds(self):
        t0 = time.time()
        grid = np.linspace(0.0, 1.0, 1001)
        for t in grid:
            assert A.quality(float(t), True) == pytest.approx(t + 1.0, abs=1e-12)
            assert A.quality(float(t), False) == pytest.approx(t, abs=1e-12)

        rng = np.random.default_rng(3)
        for _ in range(25):
            sr = random_toy(rng, n=30, m=9)
            b = A.bounds(sr)
            statics = sr.static_accuracies()
            assert b.best >= statics.max() - 1e-12
            assert b.worst <= statics.min() + 1e-12
            q = sr.quality()
            for i in range(sr.n):
                order = sorted(range(sr.m), key=lambda j: (q[i, j], j))
                assert b.median_pick[i] == order[(sr.m - 1) // 2]

        took = time.time() - t0
        report("quality/bounds suite", took < 60,
               f"2002-point quality grid exact, dominance and median sort oracle "
               f"on 25 random sweeps, {took:.1f}s")


# ---------------------------------------------------------------------------
# criterion: combined-space budget arithmetic

class TestBudgetArithmetic:
    def test_reference_budget_rows(self):
        p3 = A.budget(3, 625)
        p2 = A.budget(2, 625)
        p1 = A.budget(1, 625)
        ok = (p3.per_attribute, p3.total) == (8, 512) \
            and (p2.per_attribute, p2.total) == (25, 625) \
            and p1.per_attribute == 625
        report("budget arithmetic", ok,
               f"3 attrs -> R={p3.per_attribute}/total={p3.total}, "
               f"2 attrs -> R={p2.per_attribute}/total={p2.total}, "
               f"1 attr -> R={p1.per_attribute}")


# ---------------------------------------------------------------------------
# criterion: greedy suite (< 1 min)

class TestGreedySuite:
    def test_greedy_properties(self):
        t0 = time.time()
        rng = np.random.default_rng(11)
        for _ in range(10):
            sr = random_toy(rng, n=24, m=8)
            curve = A.greedy_accumulate(sr)
            accs = [s.accuracy for s in curve]
            assert all(b >= a - 1e-12 for a, b in zip(accs, accs[1:]))
            assert accs[-1] == pytest.approx(A.bounds(sr).best)
            correct = sr.correct()
            for step in curve:
                assert step.accuracy <= exhaustive_best_subset(correct, step.k) + 1e-12

        # disjoint coverage: greedy equals the exhaustive optimum at every k
        n, m = 12, 4
        preds = np.zeros((n, m), dtype=np.uint16)
        for j in range(m):
            preds[j * 3:(j + 1) * 3, j] = 1
        sr = toy_sweep(preds, np.full((n, m), 0.5), np.ones(n, dtype=np.int64))
        for step in A.greedy_accumulate(sr):
            assert step.accuracy == pytest.approx(
                exhaustive_best_subset(sr.correct(), step.k))

        took = time.time() - t0
        report("greedy suite", took < 60,
               f"monotone, endpoint exact, never above exhaustive optimum "
               f"(10 random + 1 disjoint toy), {took:.1f}s")


# ---------------------------------------------------------------------------
# criterion: desk-scale dominance on CIFAR-10 (<= 60 min on a desktop CPU)

class TestDeskScaleDominance:
    def test_cifar10_dominance(self):
        t0 = time.time()
        try:
            train_raw = load_cifar10(CIFAR_DIR, "train")
            test_raw = load_cifar10(CIFAR_DIR, "test")
        except DataFormatError:
            report("desk-scale dominance (CIFAR-10)", False,
                   f"CIFAR-10 binary batches not found under {CIFAR_DIR!r} "
                   "(set DYNACONV_CIFAR10); this criterion requires the real "
                   "dataset and this environment has no way to fetch it "
                   "(package-managers-only network) - see notes in README")
        train_raw = train_raw.subset(np.arange(10000))
        test_raw = test_raw.subset(np.arange(400))
        train = standardize(train_raw)
        spec = ModelSpec(
            input_size=32, class_count=10, stem_channels=16,
            stages=(StageSpec("basic", 1, 16), StageSpec("basic", 1, 32),
                    StageSpec("basic", 1, 64), StageSpec("basic", 1, 128)),
            default_strides=(1, 2, 2, 2),
            norm_mean=train.norm_mean, norm_std=train.norm_std)
        eval_ds = standardize(test_raw, train.norm_mean, train.norm_std)
        net = build(spec, seed=0)
        train_static(net, train, TrainConfig(epochs=12, batch_size=64, lr=0.02,
                                             decay_epoch=9, seed=0))
        hits = 0
        for lo in range(0, len(eval_ds), 100):
            logits = net.forward(eval_ds.images[lo:lo + 100]).data
            hits += int((logits.argmax(1) == eval_ds.labels[lo:lo + 100]).sum())
        static_acc = hits / len(eval_ds)
        perms = enumerate_permutations(spec, ("stride",), area_guard=16.0)
        sr = comprehensive_sweep(net, eval_ds, perms)
        b = A.bounds(sr)
        took = time.time() - t0
        ok = (static_acc >= 0.60 and b.best >= static_acc + 0.05
              and b.worst <= static_acc - 0.15 and took <= 3600)
        report("desk-scale dominance (CIFAR-10)", ok,
               f"static={static_acc:.3f} best={b.best:.3f} worst={b.worst:.3f} "
               f"M={len(perms)} n={sr.n} {took:.0f}s")


# ---------------------------------------------------------------------------
# criterion: ROF directional analog (<= 60 min)

class TestRofDirectional:
    def test_volatility_median_unique_directions(self, desk_experiment):
        # a comprehensive 4-slot space whose worst chain still ends at a
        # 2x2 map (strides {1,2} at A-C, {1,2,3} at D): fine-tuning can
        # actually robustify every configuration, so the worst-case bound
        # has room to move at this input size
        t0 = time.time()
        spec = desk_experiment["spec"]
        rof_options = {"A": OptionSet(stride=(1, 2)), "B": OptionSet(stride=(1, 2)),
                       "C": OptionSet(stride=(1, 2)), "D": OptionSet(stride=(1, 2, 3))}
        rspec = replace(spec, options=rof_options)
        net = build(rspec, seed=1)
        net.load_state(desk_experiment["state"])
        perms = enumerate_permutations(rspec, ("stride",), area_guard=8.0)
        pre = comprehensive_sweep(net, desk_experiment["eval_ds"], perms)
        pre_b = A.bounds(pre)
        pre_unique = A.mean_unique_predictions(pre)
        cfg = TrainConfig(epochs=24, batch_size=16, lr=0.005, decay_epoch=16,
                          seed=9, sampling="uniform-random-per-batch")
        rof_finetune(net, desk_experiment["train_ds"], cfg, perms)
        post = comprehensive_sweep(net, desk_experiment["eval_ds"], perms)
        post_b = A.bounds(post)
        post_unique = A.mean_unique_predictions(post)
        took = time.time() - t0
        ok = (post_b.volatility < pre_b.volatility
              and post_b.median > pre_b.median
              and post_unique < pre_unique
              and took <= 3600)
        report("ROF directional analog", ok,
               f"volatility {pre_b.volatility:.4f}->{post_b.volatility:.4f}, "
               f"median {pre_b.median:.4f}->{post_b.median:.4f}, "
               f"mean unique {pre_unique:.3f}->{post_unique:.3f}, "
               f"M={len(perms)} n={pre.n} {took:.0f}s")


# ---------------------------------------------------------------------------
# criterion: efficiency oracle exactness (toys + desk-scale option set)

class TestEfficiencyOracle:
    def test_toy_and_desk_scale(self, desk_experiment):
        from dynaconv.efficiency import cost_table, efficiency_oracle
        t0 = time.time()

        rng = np.random.default_rng(2)
        for _ in range(10):
            sr = random_toy(rng, n=25, m=6)
            costs = rng.integers(1, 1000, size=6).astype(np.int64)
            ref = int(rng.integers(6))
            res = efficiency_oracle(sr, costs, sr.preds[:, ref],
                                    np.full(sr.n, costs[ref]))
            assert res.accuracy == float((sr.preds[:, ref] == sr.labels).mean())
            assert (costs[res.choice] <= costs[ref]).all()

        spec = desk_experiment["spec"]
        eff_options = {s: OptionSet(stride=(1, 2, 3, 4), dilation=(1,),
                                    size=(1, 3)) for s in SLOTS}
        espec = replace(spec, options=eff_options)
        net = build(espec, seed=1)
        net.load_state(desk_experiment["state"])
        eval_ds = desk_experiment["eval_ds"].subset(np.arange(96))
        perms = enumerate_permutations(espec, ("stride", "size"), area_guard=None)
        sr = comprehensive_sweep(net, eval_ds, perms)
        costs = cost_table(net, perms)
        dflt = find_permutation(perms, default_values(espec, tuple(SLOTS),
                                                      ("stride", "size")))
        assert dflt >= 0
        res = efficiency_oracle(sr, costs, sr.preds[:, dflt],
                                np.full(sr.n, costs[dflt]))
        ref_acc = float((sr.preds[:, dflt] == sr.labels).mean())
        acc_exact = res.accuracy == ref_acc
        cheap = res.avg_macs <= res.reference_avg_macs
        per_sample = (costs[res.choice] <= costs[dflt]).all()
        took = time.time() - t0
        ok = acc_exact and cheap and bool(per_sample)
        report("efficiency oracle", ok,
               f"desk M={len(perms)}: accuracy preserved exactly "
               f"({res.accuracy:.4f}), MACs {res.reference_avg_macs / 1e6:.2f}M"
               f"->{res.avg_macs / 1e6:.2f}M ({res.speedup:.2f}x), "
               f"10 toy sweeps exact, {took:.0f}s")


# ---------------------------------------------------------------------------
# criterion: scale-probe directional check

class TestScaleProbeDirectional:
    def test_slot_d_stride_tracks_input_scale(self, desk_experiment):
        from scipy.stats import spearmanr
        from dynaconv.analyses import mean_preferred_option, preference_report
        t0 = time.time()
        spec = desk_experiment["spec"]
        probe_options = {s: OptionSet(stride=(1, 2, 3, 4)) for s in SLOTS}
        pspec = replace(spec, options=probe_options)
        net = build(pspec, seed=1)
        net.load_state(desk_experiment["state"])
        eval_ds = desk_experiment["eval_ds"].subset(np.arange(120))
        levels = (0.25, 0.5, 1.0, 2.0, 4.0)
        means = []
        for f in levels:
            probed = apply_probe(eval_ds, ProbeTransform("scale", factor=f))
            perms = enumerate_permutations(pspec, ("stride",), area_guard=16.0,
                                           input_hw=probed.images.shape[2:])
            sr = comprehensive_sweep(net, probed, perms)
            rep = preference_report(sr)
            means.append(mean_preferred_option(rep, "D", "stride"))
        rho = float(spearmanr(levels, means).statistic)
        took = time.time() - t0
        report("scale-probe directional", rho > 0,
               f"mean preferred slot-D stride per level "
               f"{['%.2f' % m for m in means]}, spearman rho={rho:.3f}, "
               f"{took:.0f}s")
