"""Light CNN backend with Max-Feature-Map activations, BiLSTM and ASP."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from ..errors import ShapeError
from .base import Backend
from .pooling import AttentiveStatsPool, ClassifierHead


def mfm(x, dim=1):
    """Element-wise max of the two channel halves."""
    c = x.shape[dim]
    if c % 2:
        raise ShapeError(f"max-feature-map needs an even channel count, got {c}")
    a, b = torch.split(x, c // 2, dim=dim)
    return torch.maximum(a, b)


class MFM(nn.Module):
    def forward(self, x):
        return mfm(x)


def conv_mfm(cin, cout, k):
    """Convolution to ``cout`` channels followed by MFM (output ``cout // 2``)."""
    return [nn.Conv2d(cin, cout, k, padding=k // 2), MFM()]


@dataclass
class LCNNConfig:
    n_mels: int = 80
    lstm_hidden: int = 80
    attn_pool_dim: int = 128
    embedding_dim: int = 128
    input_norm: str = "none"


class LCNN(Backend):
    """Layer-for-layer LCNN: five MaxPool stages take ``[1, D, L]`` to ``[32, D/16, L/16]``."""

    min_frames = 16

    def __init__(self, config=None):
        self.config = config = config or LCNNConfig()
        super().__init__(config.n_mels, config.input_norm)
        self.cnn = nn.Sequential(
            *conv_mfm(1, 64, 5),                          # Conv_1, MFM_2
            nn.MaxPool2d(2, 2),                           # MaxPool_3
            *conv_mfm(32, 64, 1), nn.BatchNorm2d(32),     # Conv_4, MFM_5, BatchNorm_6
            *conv_mfm(32, 96, 3),                         # Conv_7, MFM_8
            nn.MaxPool2d(2, 2), nn.BatchNorm2d(48),       # MaxPool_9, BatchNorm_10
            *conv_mfm(48, 96, 1), nn.BatchNorm2d(48),     # Conv_11, MFM_12, BatchNorm_13
            *conv_mfm(48, 128, 3),                        # Conv_14, MFM_15
            nn.MaxPool2d(2, 2),                           # MaxPool_16
            *conv_mfm(64, 128, 1), nn.BatchNorm2d(64),    # Conv_17, MFM_18, BatchNorm_19
            *conv_mfm(64, 64, 3), nn.BatchNorm2d(32),     # Conv_20, MFM_21, BatchNorm_22
            *conv_mfm(32, 64, 1), nn.BatchNorm2d(32),     # Conv_23, MFM_24, BatchNorm_25
            *conv_mfm(32, 64, 3),                         # Conv_26, MFM_27
            nn.MaxPool2d(2, 2),                           # MaxPool_28
        )
        self.lstm = nn.LSTM(32 * (config.n_mels // 16), config.lstm_hidden, batch_first=True, bidirectional=True)
        self.pool = AttentiveStatsPool(2 * config.lstm_hidden, config.attn_pool_dim)
        self.head = ClassifierHead(4 * config.lstm_hidden, config.embedding_dim)

    def feature_map(self, features):
        """CNN output ``[B, 32, D/16, L/16]`` (channels, mel, time)."""
        return self.cnn(features.transpose(1, 2).unsqueeze(1))

    def forward(self, features):
        x = self.feature_map(self.normalize(features))
        b, c, d, t = x.shape
        x = x.permute(0, 3, 1, 2).reshape(b, t, c * d)
        x, _ = self.lstm(x)
        return self.head(self.pool(x))
