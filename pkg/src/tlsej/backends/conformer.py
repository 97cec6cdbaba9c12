"""MFA-Conformer backend: Conformer encoder, multi-scale aggregation, ASP, classifier."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from ..errors import ConfigError, ShapeError
from .base import Backend
from .pooling import AttentiveStatsPool, ClassifierHead, mfa_concat


@dataclass
class ConformerConfig:
    n_mels: int = 80
    n_blocks: int = 16
    model_dim: int = 176
    ffn_dim: int = 704
    n_heads: int = 4
    subsampling_factor: int = 4
    subsampling_channels: int | None = None  # defaults to model_dim
    conv_kernel: int = 15
    embedding_dim: int = 256
    attn_pool_dim: int = 128
    dropout: float = 0.1
    input_norm: str = "none"

    def __post_init__(self):
        if self.model_dim % self.n_heads:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by n_heads {self.n_heads}")
        if self.subsampling_factor not in (1, 2, 4, 8):
            raise ConfigError("subsampling_factor must be a power of two up to 8")
        if self.conv_kernel % 2 == 0:
            raise ConfigError("conv_kernel must be odd")

    @property
    def mfa_dim(self):
        return self.model_dim * self.n_blocks


class ConvSubsampling(nn.Module):
    """Stride-2 3x3 convolutions (``log2(factor)`` of them) and a projection to the model width."""

    def __init__(self, n_mels, model_dim, factor=4, channels=None):
        super().__init__()
        channels = channels or model_dim
        layers, cin, f = [], 1, n_mels
        for _ in range(int(math.log2(factor))):
            layers += [nn.Conv2d(cin, channels, 3, stride=2, padding=1), nn.ReLU()]
            cin, f = channels, (f + 1) // 2
        self.conv = nn.Sequential(*layers)
        self.out = nn.Linear(cin * f, model_dim)

    def forward(self, x):
        x = self.conv(x.unsqueeze(1))  # [B, C, T', F']
        b, c, t, f = x.shape
        return self.out(x.transpose(1, 2).reshape(b, t, c * f))


def relative_positions(length, dim, device=None, dtype=None):
    """Sinusoidal encodings for relative offsets ``length-1, ..., -(length-1)``."""
    pos = torch.arange(length - 1, -length, -1, device=device, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, dim, 2, device=device, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(2 * length - 1, dim, device=device, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)
    return pe.to(dtype or torch.get_default_dtype())


class RelPositionAttention(nn.Module):
    """Multi-head self-attention with Transformer-XL relative position terms."""

    def __init__(self, dim, n_heads, dropout=0.0):
        super().__init__()
        self.h, self.dk = n_heads, dim // n_heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.pos = nn.Linear(dim, dim, bias=False)
        self.out = nn.Linear(dim, dim)
        self.pos_bias_u = nn.Parameter(torch.zeros(n_heads, self.dk))
        self.pos_bias_v = nn.Parameter(torch.zeros(n_heads, self.dk))
        nn.init.xavier_uniform_(self.pos_bias_u)
        nn.init.xavier_uniform_(self.pos_bias_v)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        b, t, _ = x.shape
        q = self.q(x).view(b, t, self.h, self.dk)
        k = self.k(x).view(b, t, self.h, self.dk).transpose(1, 2)
        v = self.v(x).view(b, t, self.h, self.dk).transpose(1, 2)
        pe = relative_positions(t, x.shape[-1], x.device, x.dtype)
        p = self.pos(pe).view(2 * t - 1, self.h, self.dk).permute(1, 2, 0)  # [H, dk, 2T-1]

        content = (q + self.pos_bias_u).transpose(1, 2) @ k.transpose(-2, -1)  # [B, H, T, T]
        position = (q + self.pos_bias_v).transpose(1, 2) @ p  # [B, H, T, 2T-1]
        # query i, key j -> offset i - j, stored at column (t - 1) - (i - j)
        i = torch.arange(t, device=x.device)
        idx = (t - 1 - i[:, None] + i[None, :]).expand(b, self.h, t, t)
        position = position.gather(-1, idx)

        attn = torch.softmax((content + position) / math.sqrt(self.dk), dim=-1)
        y = (self.drop(attn) @ v).transpose(1, 2).reshape(b, t, -1)
        return self.out(y)


class FeedForward(nn.Module):
    def __init__(self, dim, hidden, dropout=0.0):
        super().__init__()
        self.net = nn.Sequential(
            nn.LayerNorm(dim),
            nn.Linear(dim, hidden),
            nn.SiLU(),
            nn.Dropout(dropout),
            nn.Linear(hidden, dim),
            nn.Dropout(dropout),
        )

    def forward(self, x):
        return self.net(x)


class ConvModule(nn.Module):
    """Pointwise conv + GLU, depthwise conv + batch norm + SiLU, pointwise conv."""

    def __init__(self, dim, kernel, dropout=0.0):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.pointwise1 = nn.Conv1d(dim, 2 * dim, 1)
        self.depthwise = nn.Conv1d(dim, dim, kernel, padding=kernel // 2, groups=dim)
        self.bn = nn.BatchNorm1d(dim)
        self.pointwise2 = nn.Conv1d(dim, dim, 1)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        y = self.norm(x).transpose(1, 2)
        y = nn.functional.glu(self.pointwise1(y), dim=1)
        y = nn.functional.silu(self.bn(self.depthwise(y)))
        return self.drop(self.pointwise2(y).transpose(1, 2))


class ConformerBlock(nn.Module):
    """Half-FFN, self-attention, convolution, half-FFN, each residual; LayerNorm at the end."""

    def __init__(self, dim, ffn_dim, n_heads, kernel, dropout=0.0):
        super().__init__()
        self.dim = dim
        self.ffn1 = FeedForward(dim, ffn_dim, dropout)
        self.attn_norm = nn.LayerNorm(dim)
        self.attn = RelPositionAttention(dim, n_heads, dropout)
        self.attn_drop = nn.Dropout(dropout)
        self.conv = ConvModule(dim, kernel, dropout)
        self.ffn2 = FeedForward(dim, ffn_dim, dropout)
        self.norm = nn.LayerNorm(dim)

    def forward(self, g):
        if g.dim() != 3 or g.shape[-1] != self.dim:
            raise ShapeError(f"expected [B, T, {self.dim}], got {tuple(g.shape)}")
        g = g + 0.5 * self.ffn1(g)
        g = g + self.attn_drop(self.attn(self.attn_norm(g)))
        g = g + self.conv(g)
        return self.norm(g + 0.5 * self.ffn2(g))


class ConformerEncoder(nn.Module):
    def __init__(self, config):
        super().__init__()
        c = config
        self.subsampling = ConvSubsampling(c.n_mels, c.model_dim, c.subsampling_factor, c.subsampling_channels)
        self.blocks = nn.ModuleList(
            ConformerBlock(c.model_dim, c.ffn_dim, c.n_heads, c.conv_kernel, c.dropout) for _ in range(c.n_blocks)
        )

    def forward(self, features):
        """Return the list of every block's output, each ``[B, ceil(T / factor), d]``."""
        x = self.subsampling(features)
        outputs = []
        for block in self.blocks:
            x = block(x)
            outputs.append(x)
        return outputs


class MFAConformer(Backend):
    """Conformer encoder whose block outputs are all concatenated before pooling."""

    min_frames = 1

    def __init__(self, config=None):
        self.config = config = config or ConformerConfig()
        super().__init__(config.n_mels, config.input_norm)
        self.encoder = ConformerEncoder(config)
        self.mfa_norm = nn.LayerNorm(config.mfa_dim)
        self.pool = AttentiveStatsPool(config.mfa_dim, config.attn_pool_dim)
        self.head = ClassifierHead(2 * config.mfa_dim, config.embedding_dim)

    def frame_features(self, features):
        return mfa_concat(self.encoder(features), self.mfa_norm)

    def forward(self, features):
        x = self.normalize(features)
        return self.head(self.pool(self.frame_features(x)))

    @staticmethod
    def encoder_prefix():
        return "encoder."
