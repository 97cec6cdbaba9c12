"""Dual-input U-Net mask estimator for FBANK enhancement."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError

log = logging.getLogger(__name__)

MASK_EPS = {torch.float32: 1e-6, torch.float64: 1e-12}


@dataclass
class DumenetConfig:
    encoder_channels: list = field(default_factory=lambda: [16, 32, 64, 128])
    input_channels: int = 1
    n_mels: int = 80
    kernel_size: int = 3

    def __post_init__(self):
        if len(self.encoder_channels) < 1:
            raise ConfigError("encoder_channels must be non-empty")

    @property
    def n_encoder_blocks(self):
        return len(self.encoder_channels)

    @property
    def n_decoder_blocks(self):
        return len(self.encoder_channels)

    @property
    def multiple(self):
        return 2 ** len(self.encoder_channels)


def _down(cin, cout, k):
    return nn.Sequential(
        nn.Conv2d(cin, cout, k, stride=2, padding=k // 2),
        nn.BatchNorm2d(cout),
        nn.ELU(),
    )


def _up(cin, cout, k):
    return nn.Sequential(
        nn.ConvTranspose2d(cin, cout, k, stride=2, padding=k // 2, output_padding=1),
        nn.BatchNorm2d(cout),
        nn.ELU(),
    )


class DUMENet(nn.Module):
    """U-Net that maps ``[B, T, d]`` log-mel features to a same-shape soft mask in (0, 1).

    An input convolution lifts the single feature plane to the first encoder
    width; each encoder block halves time and frequency. Decoder block ``j``
    upsamples and concatenates the output of encoder block ``n - 1 - j`` (the
    last decoder block takes the input convolution), and a final transposed
    convolution projects back to one plane before the sigmoid.
    """

    def __init__(self, config=None):
        super().__init__()
        self.config = config = config or DumenetConfig()
        ch, k = list(config.encoder_channels), config.kernel_size
        self.input_conv = nn.Sequential(
            nn.Conv2d(config.input_channels, ch[0], k, padding=k // 2),
            nn.BatchNorm2d(ch[0]),
            nn.ELU(),
        )
        enc_in = [ch[0]] + ch[:-1]
        self.encoder = nn.ModuleList(_down(i, o, k) for i, o in zip(enc_in, ch))
        # skips, deepest first: encoder outputs n-2..0, then the input convolution
        skips = ch[:-1][::-1] + [ch[0]]
        dec = []
        cin = ch[-1]
        for s in skips:
            dec.append(_up(cin, s, k))
            cin = 2 * s
        self.decoder = nn.ModuleList(dec)
        self.output_conv = nn.ConvTranspose2d(cin, config.input_channels, k, padding=k // 2)

    def mask_logits(self, features):
        if features.dim() != 3:
            raise ShapeError(f"expected [batch, frames, mels], got {tuple(features.shape)}")
        b, t, d = features.shape
        if d != self.config.n_mels:
            raise ShapeError(f"expected {self.config.n_mels} mel bins, got {d}")
        m = self.config.multiple
        pt, pd = (-t) % m, (-d) % m
        x = F.pad(features, (0, pd, 0, pt)).unsqueeze(1)
        x = self.input_conv(x)
        skips = [x]
        for block in self.encoder:
            x = block(x)
            skips.append(x)
        skips = skips[:-1][::-1]
        for block, skip in zip(self.decoder, skips):
            x = torch.cat([block(x), skip], dim=1)
        x = self.output_conv(x)
        return x[:, 0, :t, :d]

    def forward(self, features):
        # float32 sigmoid rounds to exactly 0 or 1 once |logit| > ~17; keep the mask open
        eps = MASK_EPS[features.dtype] if features.dtype in MASK_EPS else 0.0
        return torch.sigmoid(self.mask_logits(features)).clamp(eps, 1.0 - eps)


def apply_mask(features, mask):
    if tuple(features.shape) != tuple(mask.shape):
        raise ShapeError(f"features {tuple(features.shape)} and mask {tuple(mask.shape)} differ in shape")
    return features * mask


@dataclass
class DualBatch:
    """Noisy and clean features stacked along the batch axis, with clean labels twice."""

    inputs: torch.Tensor  # [2B, T, d]: noisy then clean
    labels: torch.Tensor  # [2B, T, d]: clean, clean
    targets: torch.Tensor  # [2B]: authenticity labels repeated

    @classmethod
    def build(cls, noisy, clean, targets):
        if noisy.shape != clean.shape:
            raise ShapeError(f"noisy {tuple(noisy.shape)} and clean {tuple(clean.shape)} differ in shape")
        return cls(torch.cat([noisy, clean]), torch.cat([clean, clean]), torch.cat([targets, targets]))

    @property
    def half(self):
        return self.inputs.shape[0] // 2


def masked_mse_loss(batch, masks):
    """Sum of the noisy-branch and clean-branch squared errors, divided by ``B * T * d``.

    Per utterance this is ``(1 / (T d)) * sum(|X M_x - S|^2 + |S M_s - S|^2)``,
    then averaged over the B pairs.
    """
    if tuple(masks.shape) != tuple(batch.inputs.shape):
        raise ShapeError(f"masks {tuple(masks.shape)} do not match inputs {tuple(batch.inputs.shape)}")
    err = apply_mask(batch.inputs, masks) - batch.labels
    b2, t, d = err.shape
    return err.pow(2).sum() / ((b2 // 2) * t * d)


def enhance(model, features):
    """Inference path: mask the (noisy) features with the model's own estimate."""
    return apply_mask(features, model(features))


def pretrain_frontend(model, pairs, epochs, lr=1e-3, batch_size=16, seed=0):
    """
    Train the mask estimator alone on ``masked_mse_loss``.

    Parameters
    ----------
    model : DUMENet
    pairs : sequence of (noisy, clean) arrays or tensors, each ``[T, d]`` with equal T
    epochs : int
    lr, batch_size, seed : optimisation settings

    Returns
    -------
    list of float
        Mean training loss per epoch, preceded by the loss before any update.
    """
    if len(pairs) == 0:
        raise ConfigError("front-end pre-training needs a non-empty dataset")
    noisy = torch.as_tensor(np.stack([np.asarray(p[0]) for p in pairs]), dtype=torch.float32)
    clean = torch.as_tensor(np.stack([np.asarray(p[1]) for p in pairs]), dtype=torch.float32)
    dummy = torch.zeros(len(pairs))
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)

    def epoch_loss():
        model.eval()
        with torch.no_grad():
            total = 0.0
            for i in range(0, len(pairs), batch_size):
                batch = DualBatch.build(noisy[i:i + batch_size], clean[i:i + batch_size], dummy[i:i + batch_size])
                total += masked_mse_loss(batch, model(batch.inputs)).item() * batch.half
        return total / len(pairs)

    history = [epoch_loss()]
    for epoch in range(epochs):
        model.train()
        order = torch.randperm(len(pairs), generator=gen)
        for i in range(0, len(pairs), batch_size):
            idx = order[i:i + batch_size]
            batch = DualBatch.build(noisy[idx], clean[idx], dummy[idx])
            loss = masked_mse_loss(batch, model(batch.inputs))
            opt.zero_grad()
            loss.backward()
            opt.step()
        history.append(epoch_loss())
        log.info("front-end epoch %d: L_mse %.5f", epoch + 1, history[-1])
    model.eval()
    return history
