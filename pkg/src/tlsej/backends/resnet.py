"""SE-ResNet18 backend with attentive statistics pooling."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch.nn as nn

from ..errors import ConfigError
from .base import Backend
from .pooling import AttentiveStatsPool, ClassifierHead


class SqueezeExcitation(nn.Module):
    def __init__(self, channels, bottleneck):
        super().__init__()
        self.fc = nn.Sequential(
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
            nn.Linear(channels, bottleneck),
            nn.ReLU(),
            nn.Linear(bottleneck, channels),
            nn.Sigmoid(),
        )

    def forward(self, x):
        return x * self.fc(x)[:, :, None, None]


class ResidualUnit(nn.Module):
    """Two 3x3 convolutions with an SE gate; 1x1 strided shortcut when the shape changes."""

    def __init__(self, cin, cout, stride=1, se_bottleneck=None):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.se = SqueezeExcitation(cout, se_bottleneck) if se_bottleneck else nn.Identity()
        self.relu = nn.ReLU()
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride=stride, bias=False), nn.BatchNorm2d(cout))
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        y = self.relu(self.bn1(self.conv1(x)))
        y = self.se(self.bn2(self.conv2(y)))
        return self.relu(y + self.shortcut(x))


@dataclass
class ResNetConfig:
    n_mels: int = 80
    channels: list = field(default_factory=lambda: [16, 32, 64, 128])
    units_per_stage: int = 2
    use_se: bool = True
    se_reduction: int = 4
    se_bottleneck: int | None = None  # absolute width; overrides se_reduction
    attn_pool_dim: int = 128
    embedding_dim: int = 128
    input_norm: str = "none"

    def __post_init__(self):
        if len(self.channels) != 4:
            raise ConfigError("ResNet18 needs exactly four stage widths")

    def bottleneck(self, channels):
        if not self.use_se:
            return None
        return self.se_bottleneck or max(1, channels // self.se_reduction)


class SEResNet18(Backend):
    """Conv1 then four residual stages; stages 2-4 halve both axes. Layout ``[B, C, D, L]``."""

    min_frames = 8

    def __init__(self, config=None):
        self.config = config = config or ResNetConfig()
        super().__init__(config.n_mels, config.input_norm)
        ch = config.channels
        self.conv1 = nn.Sequential(nn.Conv2d(1, ch[0], 3, padding=1, bias=False), nn.BatchNorm2d(ch[0]), nn.ReLU())
        stages, cin = [], ch[0]
        for i, cout in enumerate(ch):
            units = []
            for j in range(config.units_per_stage):
                stride = 2 if (i > 0 and j == 0) else 1
                units.append(ResidualUnit(cin, cout, stride, config.bottleneck(cout)))
                cin = cout
            stages.append(nn.Sequential(*units))
        self.stages = nn.ModuleList(stages)
        freq = config.n_mels
        for _ in range(len(ch) - 1):
            freq = (freq + 1) // 2
        self.frame_dim = ch[-1] * freq
        self.pool = AttentiveStatsPool(self.frame_dim, config.attn_pool_dim)
        self.head = ClassifierHead(2 * self.frame_dim, config.embedding_dim)

    def stage_outputs(self, features):
        x = self.conv1(features.transpose(1, 2).unsqueeze(1))
        outs = [x]
        for stage in self.stages:
            x = stage(x)
            outs.append(x)
        return outs

    def forward(self, features):
        x = self.stage_outputs(self.normalize(features))[-1]
        b, c, d, t = x.shape
        x = x.permute(0, 3, 1, 2).reshape(b, t, c * d)
        return self.head(self.pool(x))
