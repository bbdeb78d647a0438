import numpy as np
import pytest

from dynaconv import train as TR
from dynaconv.data import Dataset, gen_scale_synthetic, standardize
from dynaconv.errors import ConfigError, StateError
from dynaconv.model import StageSpec, build
from dynaconv.sweep import enumerate_permutations
from dynaconv.tensor import Tensor

from conftest import tiny_spec


def micro_spec():
    return tiny_spec(input_size=8, class_count=3, stem_channels=2,
                     stages=(StageSpec("basic", 1, 2), StageSpec("basic", 1, 4),
                             StageSpec("basic", 1, 4), StageSpec("basic", 1, 8)))


@pytest.fixture(scope="module")
def micro_data():
    rng = np.random.default_rng(4)
    imgs = rng.random((24, 3, 8, 8), dtype=np.float32)
    labels = (np.arange(24) % 3).astype(np.int64)
    return standardize(Dataset(imgs, labels))


class TestSGDRule:
    def test_two_step_hand_reference(self):
        # p0=1, grad always 0.5, lr=0.1, mu=0.9, wd=0.01
        p = Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
        opt = TR._SGD({"p": p}, momentum=0.9, weight_decay=0.01)
        lr, g = 0.1, 0.5

        # step 1: v1 = g + wd*p0 = 0.51 ; p1 = 1 - 0.1*0.51 = 0.949
        p.grad = np.array([g], dtype=np.float32)
        opt.step(lr)
        assert p.data[0] == pytest.approx(0.949, abs=1e-7)

        # step 2: v2 = 0.9*0.51 + (0.5 + 0.01*0.949) = 0.96849
        #         p2 = 0.949 - 0.096849 = 0.852151
        p.grad = np.array([g], dtype=np.float32)
        opt.step(lr)
        assert p.data[0] == pytest.approx(0.852151, abs=1e-6)

    def test_unused_param_skipped(self):
        p = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
        opt = TR._SGD({"p": p}, 0.9, 0.0)
        opt.step(0.5)
        assert (p.data == 1.0).all()


class TestTrainStatic:
    def test_zero_lr_keeps_weights(self, micro_data):
        net = build(micro_spec(), seed=1)
        before = {k: v.data.copy() for k, v in net.parameters().items()}
        TR.train_static(net, micro_data, TR.TrainConfig(epochs=1, batch_size=8, lr=0.0))
        for k, t in net.parameters().items():
            assert (t.data == before[k]).all(), k

    def test_single_batch_overfit(self):
        ds = standardize(gen_scale_synthetic(8, 3, (3, 6), seed=5, canvas=8))
        net = build(micro_spec(), seed=3)
        cfg = TR.TrainConfig(epochs=200, batch_size=8, lr=0.05, weight_decay=0.0)
        log = TR.train_static(net, ds, cfg)
        assert min(log.epoch_loss) < 0.01

    def test_seed_determinism(self, micro_data):
        def run():
            net = build(micro_spec(), seed=2)
            TR.train_static(net, micro_data,
                            TR.TrainConfig(epochs=2, batch_size=8, lr=0.01, seed=9))
            return net.state()

        a, b = run(), run()
        for k in a:
            assert (a[k] == b[k]).all(), k

    def test_divergence_aborts_with_location(self, micro_data):
        net = build(micro_spec(), seed=1)
        with pytest.raises(StateError, match="epoch 0 batch"):
            TR.train_static(net, micro_data,
                            TR.TrainConfig(epochs=1, batch_size=8, lr=1e18))

    def test_lr_schedule(self):
        cfg = TR.TrainConfig(epochs=15, lr=0.001, decay_factor=0.1, decay_epoch=10)
        assert cfg.lr_at(0) == pytest.approx(0.001)
        assert cfg.lr_at(9) == pytest.approx(0.001)
        assert cfg.lr_at(10) == pytest.approx(0.0001)
        assert cfg.lr_at(14) == pytest.approx(0.0001)

    def test_rejects_rof_mode(self, micro_data):
        net = build(micro_spec(), seed=1)
        with pytest.raises(ConfigError):
            TR.train_static(net, micro_data,
                            TR.TrainConfig(sampling="uniform-random-per-batch"))

    def test_periodic_checkpoints(self, micro_data, tmp_path):
        from dynaconv.weightio import load_model
        net = build(micro_spec(), seed=1)
        cfg = TR.TrainConfig(epochs=4, batch_size=8, lr=0.001,
                             checkpoint_every=2, checkpoint_dir=str(tmp_path))
        TR.train_static(net, micro_data, cfg)
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["checkpoint_epoch002.dynw", "checkpoint_epoch004.dynw"]
        final = load_model(tmp_path / "checkpoint_epoch004.dynw")
        for k, v in net.state().items():
            assert (final.state()[k] == v.astype(np.float32)).all(), k

    def test_schedule_validation(self):
        with pytest.raises(ConfigError):
            TR.TrainConfig(epochs=5, decay_epoch=9)
        with pytest.raises(ConfigError):
            TR.TrainConfig(lr=-0.1)
        with pytest.raises(ConfigError):
            TR.TrainConfig(sampling="sometimes")


class TestRof:
    def test_default_only_matches_static(self, micro_data):
        spec = micro_spec()
        perms = enumerate_permutations(spec, ("stride",), slots=("D",),
                                       area_guard=None)
        default_only = [p for p in perms if p.values == ((2,),)]
        assert len(default_only) == 1

        net_a = build(spec, seed=6)
        TR.train_static(net_a, micro_data,
                        TR.TrainConfig(epochs=2, batch_size=8, lr=0.01, seed=3))
        net_b = build(spec, seed=6)
        TR.rof_finetune(net_b, micro_data,
                        TR.TrainConfig(epochs=2, batch_size=8, lr=0.01, seed=3,
                                       sampling="uniform-random-per-batch"),
                        default_only)
        a, b = net_a.state(), net_b.state()
        for k in a:
            assert (a[k] == b[k]).all(), k

    def test_sampling_stream_reproducible_and_logged(self, micro_data):
        spec = micro_spec()
        perms = enumerate_permutations(spec, ("stride",), slots=("C", "D"),
                                       area_guard=None)
        net = build(spec, seed=0)
        cfg = TR.TrainConfig(epochs=2, batch_size=8, lr=0.001, seed=42,
                             sampling="uniform-random-per-batch")
        _, log, _, _, _ = TR.rof_finetune(net, micro_data, cfg, perms)
        stream = TR.rof_perm_stream(42)
        want = [int(stream.integers(0, len(perms))) for _ in range(len(log.rows))]
        assert [r[4] for r in log.rows] == want

    def test_sampling_uniform(self):
        # the dedicated stream used per batch: 10000 draws over M options
        m, n = 20, 10000
        stream = TR.rof_perm_stream(7)
        draws = stream.integers(0, m, size=n)
        counts = np.bincount(draws, minlength=m)
        expect = n / m
        sigma = np.sqrt(n * (1 / m) * (1 - 1 / m))
        assert (np.abs(counts - expect) < 5 * sigma).all()

    def test_invalid_perm_rejected_before_any_step(self, micro_data):
        from dynaconv.sweep import Permutation
        spec = micro_spec()
        net = build(spec, seed=0)
        before = {k: v.copy() for k, v in net.state().items()}
        bad = [Permutation(("A",), ("stride",), ((0.5,),), 0)]
        with pytest.raises(ConfigError):
            TR.rof_finetune(net, micro_data,
                            TR.TrainConfig(sampling="uniform-random-per-batch"),
                            bad)
        for k, v in net.state().items():
            assert (v == before[k]).all()

    def test_empty_perms_rejected(self, micro_data):
        net = build(micro_spec(), seed=0)
        with pytest.raises(ConfigError):
            TR.rof_finetune(net, micro_data,
                            TR.TrainConfig(sampling="uniform-random-per-batch"), [])

    def test_volatility_report_produced(self, micro_data):
        spec = micro_spec()
        perms = enumerate_permutations(spec, ("stride",), slots=("D",),
                                       area_guard=None)
        net = build(spec, seed=1)
        cfg = TR.TrainConfig(epochs=1, batch_size=8, lr=0.001, seed=1,
                             sampling="uniform-random-per-batch")
        _, _, report, pre, post = TR.rof_finetune(net, micro_data, cfg, perms,
                                                  eval_ds=micro_data)
        assert report is not None
        assert 0.0 <= report.pre_volatility <= 1.0
        assert pre.m == post.m == len(perms)

    def test_bn_freeze_flag(self, micro_data):
        net = build(micro_spec(), seed=1)
        stats_before = {k: v.copy() for k, v in net.buffers.items()}
        perms = enumerate_permutations(net.spec, ("stride",), slots=("D",),
                                       area_guard=None)
        cfg = TR.TrainConfig(epochs=1, batch_size=8, lr=0.0, seed=1, freeze_bn=True,
                             sampling="uniform-random-per-batch")
        TR.rof_finetune(net, micro_data, cfg, perms)
        for k, v in net.buffers.items():
            assert (v == stats_before[k]).all(), k
