"""
Acceptance suite: one test per criterion, each at its stated tolerance and
runtime budget. Run standalone with ``python3 tests/test_acceptance.py``; the
terminal summary prints one PASS/FAIL line per criterion.
"""

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from oracles import direct_convolution, direct_dft_frames, eer_sweep_oracle, gradient_check, measured_snr_db
from tlsej.augment import (
    TEST_CONDITIONS,
    TEST_ROOM_RANGE,
    TEST_RT60S,
    CorruptionRecord,
    NoiseClip,
    NoiseInventory,
    RoomSpec,
    corrupt,
    estimate_rt60,
    simulate_rir,
)
from tlsej.backends import (
    LCNN,
    AttentiveStatsPool,
    ConformerBlock,
    ConformerConfig,
    MFAConformer,
    ResidualUnit,
    SEResNet18,
    mfm,
)
from tlsej.backends.lcnn import MFM
from tlsej.backends.weights import export_manifest, load_pretrained, write_manifest
from tlsej.cli import main as cli_main
from tlsej.dumenet import DUMENet, DumenetConfig
from tlsej.errors import ShapeError
from tlsej.evaluate import compute_eer, score_dataset
from tlsej.protocol import read_manifest
from tlsej.signal import StftParams, Waveform, _window, convolve, istft, read_wav, stft
from tlsej.trainer import TrainConfig, Trainer, train


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        if exc[0] is None:
            assert self.elapsed < self.seconds, f"took {self.elapsed:.1f} s, budget {self.seconds} s"


def _rel_err(got, ref):
    return float(np.max(np.abs(got - ref)) / np.max(np.abs(ref)))


# 1 -------------------------------------------------------------------------


def test_criterion_01_dsp_oracles():
    with Budget(30):
        rng = np.random.default_rng(100)
        p = StftParams()
        for n in (1024, 5000, 16000):
            x = rng.standard_normal(n)
            ref = direct_dft_frames(x, 1024, 128, 1024, _window("hamming", 1024))
            assert _rel_err(stft(Waveform(x), p).complex, ref) <= 1e-6
        for n, m in ((3000, 400), (16000, 2000), (100, 300)):
            x, h = rng.standard_normal(n), rng.standard_normal(m)
            assert _rel_err(convolve(Waveform(x), Waveform(h)).samples, direct_convolution(x, h)) <= 1e-6
        x = rng.uniform(-1, 1, 16000)
        y = istft(stft(Waveform(x), p)).samples
        end = ((16000 - 1024) // 128) * 128 + 1024
        assert np.max(np.abs(y[1024:end - 1024] - x[1024:end - 1024])) <= 1e-4


# 2 -------------------------------------------------------------------------


def test_criterion_02_snr_exactness():
    with Budget(60):
        rng = np.random.default_rng(200)
        errors = []
        for i in range(1000):
            n = int(rng.integers(1600, 32000))
            clean = Waveform(rng.uniform(0.01, 0.5) * rng.standard_normal(n))
            noise = rng.uniform(0.01, 2.0) * rng.standard_normal(int(rng.integers(800, 48000)))
            inv = NoiseInventory()
            inv.clips["environmental"].append(NoiseClip("environmental/x", Waveform(noise)))
            snr = float(rng.uniform(0, 20))
            rec = CorruptionRecord(f"u{i}", "noise", int(rng.integers(2**62)), ["environmental/x"], snr)
            y = corrupt(clean, rec, inv)
            errors.append(abs(measured_snr_db(clean.samples, y.samples / rec.scale) - snr))
        assert max(errors) <= 0.1, f"worst SNR error {max(errors):.4f} dB"


# 3 -------------------------------------------------------------------------


def test_criterion_03_rir_fidelity():
    with Budget(300):
        rng = np.random.default_rng(300)
        ok = []
        for i in range(50):
            rt60 = float(TEST_RT60S[i % 4])
            spec = RoomSpec.random(rng, TEST_ROOM_RANGE, rt60)
            est = estimate_rt60(simulate_rir(spec))
            ok.append(abs(est - rt60) <= 0.2 * rt60)
        assert np.mean(ok) >= 0.9, f"{np.mean(ok):.2%} within 20%"


# 4 -------------------------------------------------------------------------


def test_criterion_04_eer_oracle_equivalence():
    with Budget(60):
        rng = np.random.default_rng(400)
        for _ in range(500):
            n = int(rng.integers(2, 201))
            labels = rng.integers(0, 2, n)
            labels[0], labels[1] = 0, 1
            grid = rng.choice([0.5, 0.1, 0.0])  # coarse grids force ties
            scores = rng.standard_normal(n)
            if grid:
                scores = np.round(scores / grid) * grid
            assert compute_eer(scores, labels) == eer_sweep_oracle(scores, labels)
        assert compute_eer([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])[0] == 0.0
        assert compute_eer([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1])[0] == 1.0
        eer, theta = compute_eer([0.6, 0.4, 0.5, 0.3], [1, 1, 0, 0])
        assert eer == 0.5 and 0.4 <= theta <= 0.5


# 5 -------------------------------------------------------------------------


def test_criterion_05_architecture_invariants():
    with Budget(120):
        rng = np.random.default_rng(500)
        for i in range(20):
            torch.manual_seed(i)
            net = DUMENet(DumenetConfig(encoder_channels=[4, 8, 16])).eval()
            b, t = int(rng.integers(1, 5)), int(rng.integers(1, 200))
            with torch.no_grad():
                m = net(torch.randn(b, t, 80) * float(rng.uniform(0.1, 10)))
            assert m.shape == (b, t, 80) and bool(((m > 0) & (m < 1)).all())

        net = MFAConformer(ConformerConfig()).eval()
        assert net.config.mfa_dim == 2816
        with torch.no_grad():
            assert net.frame_features(torch.randn(1, 40, 80)).shape[-1] == 2816

        pool = AttentiveStatsPool(3, 4)
        const = torch.ones(2, 9, 3) * torch.tensor([0.5, -1.0, 2.0])
        assert torch.all(pool(const)[:, 3:] == 0)
        pool = AttentiveStatsPool(1, 2)
        with torch.no_grad():
            for p in pool.parameters():
                p.zero_()
        out = pool(torch.tensor([[[1.0], [2.0], [3.0]]]))
        assert abs(out[0, 1].item() - math.sqrt(2 / 3)) <= 1e-6

        lcnn = LCNN().eval()
        halvings = 0
        with torch.no_grad():
            h = torch.randn(1, 1, 80, 128)
            for layer in lcnn.cnn:
                before = h.shape[1]
                h = layer(h)
                if isinstance(layer, MFM):
                    assert h.shape[1] == before // 2
                    halvings += 1
            assert tuple(h.shape[1:]) == (32, 5, 8)
        assert halvings == 9
        assert mfm(torch.randn(1, 8, 2, 2)).shape[1] == 4

        res = SEResNet18().eval()
        with torch.no_grad():
            outs = res.stage_outputs(torch.randn(1, 128, 80))
        assert [tuple(o.shape[1:]) for o in outs] == [
            (16, 80, 128), (16, 80, 128), (32, 40, 64), (64, 20, 32), (128, 10, 16)
        ]


# 6 -------------------------------------------------------------------------


def _fd_pass_rate(module, x, seed=0):
    module = module.double().eval()
    x = x.double()
    params = [p for p in module.parameters() if p.requires_grad]
    with torch.no_grad():
        r = torch.randn_like(module(x))
    errs = gradient_check(lambda _: (module(x) * r).sum(), params, n_coords=80, seed=seed)
    return float(np.mean(np.array(errs) <= 1e-3))


def test_criterion_06_gradient_checks():
    with Budget(300):
        torch.manual_seed(6)
        rates = {
            "dumenet": _fd_pass_rate(DUMENet(DumenetConfig(encoder_channels=[2, 4], n_mels=8)),
                                     torch.randn(1, 4, 8)),
            "conformer_block": _fd_pass_rate(ConformerBlock(8, 16, 2, 3), torch.randn(1, 5, 8)),
            "lcnn_stem": _fd_pass_rate(torch.nn.Sequential(*list(LCNN().cnn)[:6]), torch.randn(1, 1, 8, 8)),
            "resnet_unit": _fd_pass_rate(ResidualUnit(4, 8, stride=2, se_bottleneck=2), torch.randn(1, 4, 6, 6)),
        }
        assert all(v >= 0.95 for v in rates.values()), rates


# 7 -------------------------------------------------------------------------

TINY_CONFORMER = ConformerConfig(n_blocks=1, model_dim=16, ffn_dim=32, n_heads=2, embedding_dim=8, attn_pool_dim=4)


def _tiny_trainer(fx, **kw):
    cfg = TrainConfig(conformer=TINY_CONFORMER, frontend=DumenetConfig(encoder_channels=[4, 8]), crop_seconds=0.25,
                      batch_size=4, epochs=1, noise_dir=str(fx / "noise" / "train"), use_frontend=True, **kw)
    return Trainer(cfg, read_manifest(fx / "train.tsv"), read_manifest(fx / "dev.tsv"))


def test_criterion_07_joint_training_contracts(tiny_fixture):
    with Budget(120):
        joint = _tiny_trainer(tiny_fixture)
        f0 = [p.detach().clone() for p in joint.frontend.parameters()]
        b0 = [p.detach().clone() for p in joint.backend.parameters()]
        batches = list(joint.batches(0))
        ce, mse, total = joint.step(*batches[0])
        assert any(not torch.equal(a, b) for a, b in zip(f0, joint.frontend.parameters()))
        assert any(not torch.equal(a, b) for a, b in zip(b0, joint.backend.parameters()))
        assert abs(total - (ce + mse)) <= 1e-7
        for batch in batches[1:]:
            ce, mse, total = joint.step(*batch)
            assert abs(total - (ce + mse)) <= 1e-7

        frozen = _tiny_trainer(tiny_fixture, frontend_frozen=True)
        f0 = [p.detach().clone() for p in frozen.frontend.parameters()]
        b0 = [p.detach().clone() for p in frozen.backend.parameters()]
        for batch in frozen.batches(0):
            frozen.step(*batch)
        assert all(torch.equal(a, b) for a, b in zip(f0, frozen.frontend.parameters()))
        assert any(not torch.equal(a, b) for a, b in zip(b0, frozen.backend.parameters()))


# 8 -------------------------------------------------------------------------


def test_criterion_08_pretrained_round_trip(tmp_path):
    with Budget(30):
        cfg = ConformerConfig(n_blocks=2, model_dim=16, ffn_dim=32, n_heads=2, embedding_dim=8, attn_pool_dim=4)
        torch.manual_seed(0)
        src = MFAConformer(cfg)
        export_manifest(src, tmp_path / "m1", prefix="encoder.")
        torch.manual_seed(1)
        dst = MFAConformer(cfg)
        load_pretrained(tmp_path / "m1", dst)
        export_manifest(dst, tmp_path / "m2", prefix="encoder.")
        files = sorted(p.name for p in (tmp_path / "m1").iterdir())
        assert files == sorted(p.name for p in (tmp_path / "m2").iterdir())
        for name in files:
            assert (tmp_path / "m1" / name).read_bytes() == (tmp_path / "m2" / name).read_bytes()

        arrays = {k: v.numpy() for k, v in src.state_dict().items() if k.startswith("encoder.")}
        bad = "encoder.blocks.0.attn.q.weight"
        assert bad in arrays
        arrays[bad] = np.zeros((5, 7), dtype=np.float32)
        write_manifest(tmp_path / "bad", arrays)
        with pytest.raises(ShapeError, match=bad.replace(".", r"\.")):
            load_pretrained(tmp_path / "bad", MFAConformer(cfg))


# 9 -------------------------------------------------------------------------

MINI_CONFORMER = ConformerConfig(n_blocks=2, model_dim=64, ffn_dim=128, n_heads=4, conv_kernel=15,
                                 embedding_dim=64, attn_pool_dim=32, dropout=0.1)


def test_criterion_09_toy_end_to_end_trend(tmp_path_factory, capsys):
    from tlsej.augment import generate_test_sets
    from tlsej.fixture import FixtureConfig, make_fixture

    torch.set_num_threads(1)
    root = tmp_path_factory.mktemp("trend")
    with Budget(1200):
        fx = make_fixture(root / "fx", FixtureConfig(n_per_class=200), seed=0)
        pre_fx = make_fixture(root / "pre", FixtureConfig(n_per_class=100), seed=99)
        inv = NoiseInventory.from_dir(fx / "noise" / "eval")
        test = generate_test_sets(read_manifest(fx / "eval.tsv"), root / "tests", inv, conditions=("noise_5db",))
        test_entries = read_manifest(test["noise_5db"])

        base = dict(backend="conformer", conformer=MINI_CONFORMER, crop_seconds=1.0, epochs=10, batch_size=16,
                    noise_dir=str(fx / "noise" / "train"))
        # the "pretrained" backend: a clean-trained mini-Conformer on a separate fixture
        pre = train(TrainConfig(**base, use_augmentation=False, seed=123), pre_fx / "train.tsv", pre_fx / "dev.tsv")
        export_manifest(pre.backend, root / "pretrained", prefix="encoder.")

        systems = {
            "clean": dict(use_augmentation=False),
            "aug": {},
            "tlsej": dict(use_frontend=True, frontend=DumenetConfig(encoder_channels=[8, 16, 32, 64]),
                          frontend_pretrain_epochs=10, backend_pretrained=str(root / "pretrained")),
        }
        eers = {name: [] for name in systems}
        for seed in range(3):
            for name, kw in systems.items():
                tr = train(TrainConfig(**(base | kw), seed=seed), fx / "train.tsv", fx / "dev.tsv")
                eers[name].append(compute_eer(score_dataset(tr.stack(), test_entries))[0])
        mean = {k: float(np.mean(v)) for k, v in eers.items()}
        with capsys.disabled():
            print(f"\ncriterion 9 noise_5db EER per seed: {eers}; means: {mean}")
    assert mean["tlsej"] < mean["clean"] and mean["tlsej"] < mean["aug"], mean


# 10 ------------------------------------------------------------------------


def test_criterion_10_test_set_generation(tmp_path_factory):
    from tlsej.fixture import make_fixture

    root = tmp_path_factory.mktemp("maketests")
    fx = make_fixture(root / "fx", seed=0)  # fixture scale: 100 utterances per class
    with Budget(300):
        argv = ["maketests", "--manifest", str(fx / "eval.tsv"), "--noise", str(fx / "noise" / "eval"),
                "--train-noise", str(fx / "noise" / "train"), "--out", str(root / "testsets")]
        assert cli_main(argv) == 0
    dirs = sorted(p.name for p in (root / "testsets").iterdir() if p.is_dir())
    assert dirs == sorted(TEST_CONDITIONS) and len(dirs) == 19

    rng = np.random.default_rng(1000)
    for cond in dirs:
        rows = read_manifest(root / "testsets" / cond / "manifest.tsv")
        picked = [rows[int(i)] for i in rng.choice(len(rows), size=10, replace=False)]
        if cond.startswith("rt60_"):
            target = int(cond.split("_")[1]) / 100
            ok = []
            for r in picked:
                rec = r.corruption
                assert rec["kind"] == "reverb" and rec["rt60_s"] == target
                h = np.load(root / "testsets" / cond / "rirs" / f"{r.utt_id}.npy")
                ok.append(abs(estimate_rt60(Waveform(h)) - target) <= 0.2 * target)
                # the stored response is the one that was applied
                clean = read_wav(rec["clean_path"])
                expect = convolve(clean, Waveform(h)).samples * rec["scale"]
                assert np.max(np.abs(read_wav(r.path).samples - expect)) <= 2 / 32768
            assert np.mean(ok) >= 0.9, (cond, ok)
        else:
            snr = float(cond.split("_")[1][:-2])
            for r in picked:
                rec = r.corruption
                assert rec["snr_db"] == snr
                clean = read_wav(rec["clean_path"]).samples
                mix = read_wav(r.path).samples / rec["scale"]
                assert abs(measured_snr_db(clean, mix) - snr) <= 0.1, (cond, r.utt_id)


if __name__ == "__main__":
    sys.exit(pytest.main([str(Path(__file__)), "-v", "-s"]))
