import numpy as np
import pytest
import torch

from oracles import gradient_check
from tlsej.dumenet import DUMENet, DualBatch, DumenetConfig, apply_mask, enhance, masked_mse_loss, pretrain_frontend
from tlsej.errors import ConfigError, ShapeError


@pytest.fixture(scope="module")
def net():
    torch.manual_seed(0)
    return DUMENet(DumenetConfig(encoder_channels=[4, 8])).eval()


@pytest.mark.parametrize("t", [1, 7, 16, 33, 118])
def test_mask_shape_and_range(net, t):
    x = torch.randn(2, t, 80)
    m = net(x)
    assert m.shape == x.shape
    assert torch.all(m > 0) and torch.all(m < 1)


def test_rejects_wrong_rank_and_width(net):
    with pytest.raises(ShapeError):
        net(torch.randn(2, 10))
    with pytest.raises(ShapeError):
        net(torch.randn(2, 10, 40))


def test_default_channels():
    net = DUMENet()
    assert [b[0].out_channels for b in net.encoder] == [16, 32, 64, 128]
    assert net.output_conv.out_channels == 1


def test_config_needs_channels():
    with pytest.raises(ConfigError):
        DumenetConfig(encoder_channels=[])


def test_dual_batch_layout():
    noisy, clean = torch.randn(3, 5, 80), torch.randn(3, 5, 80)
    b = DualBatch.build(noisy, clean, torch.tensor([1, 0, 1]))
    assert b.inputs.shape == (6, 5, 80) and b.half == 3
    assert torch.equal(b.inputs[:3], noisy) and torch.equal(b.inputs[3:], clean)
    assert torch.equal(b.labels[:3], clean) and torch.equal(b.labels[3:], clean)
    assert b.targets.tolist() == [1, 0, 1, 1, 0, 1]
    with pytest.raises(ShapeError):
        DualBatch.build(noisy, clean[:, :4], torch.tensor([1, 0, 1]))


def test_masked_mse_direct_sum():
    rng = np.random.default_rng(0)
    b, t, d = 2, 4, 80
    noisy, clean = rng.standard_normal((b, t, d)), rng.standard_normal((b, t, d))
    masks = rng.uniform(0, 1, (2 * b, t, d))
    batch = DualBatch.build(torch.tensor(noisy), torch.tensor(clean), torch.tensor([0, 1]))
    got = masked_mse_loss(batch, torch.tensor(masks)).item()
    ref = 0.0
    for i in range(b):
        ref += np.sum((noisy[i] * masks[i] - clean[i]) ** 2 + (clean[i] * masks[b + i] - clean[i]) ** 2) / (t * d)
    assert got == pytest.approx(ref / b, rel=1e-12)


def test_mask_of_ones_on_clean_input_is_zero_loss():
    clean = torch.randn(2, 4, 80)
    batch = DualBatch.build(clean, clean, torch.tensor([0, 1]))
    assert masked_mse_loss(batch, torch.ones(4, 4, 80)).item() == 0.0


def test_apply_mask_shape_check():
    with pytest.raises(ShapeError):
        apply_mask(torch.ones(1, 2, 3), torch.ones(1, 2, 4))


def test_enhance_is_masking(net):
    x = torch.randn(1, 20, 80)
    with torch.no_grad():
        assert torch.allclose(enhance(net, x), x * net(x))


def test_gradient_check_mini_dumenet():
    torch.manual_seed(1)
    net = DUMENet(DumenetConfig(encoder_channels=[2, 4], n_mels=8)).double().eval()
    x = torch.randn(1, 4, 8, dtype=torch.float64)
    params = [p for p in net.parameters()]

    with torch.no_grad():
        r = torch.randn_like(net(x))

    def f(_):
        return (net(x) * r).sum()

    errs = gradient_check(f, params, n_coords=60)
    assert np.mean(np.array(errs) <= 1e-3) >= 0.95


def test_pretraining_reduces_loss():
    torch.manual_seed(2)
    rng = np.random.default_rng(0)
    clean = rng.standard_normal((8, 16, 80))
    pairs = [(c + 0.5 * rng.standard_normal(c.shape), c) for c in clean]
    net = DUMENet(DumenetConfig(encoder_channels=[4, 8]))
    hist = pretrain_frontend(net, pairs, epochs=3, batch_size=4)
    assert len(hist) == 4 and hist[-1] < hist[0]
    with pytest.raises(ConfigError):
        pretrain_frontend(net, [], epochs=1)


def test_mask_stays_open_when_saturated(net):
    x = torch.randn(2, 30, 80) * 1e3
    with torch.no_grad():
        m = net(x)
    assert torch.all(m > 0) and torch.all(m < 1)
