from .base import Backend
from .conformer import ConformerBlock, ConformerConfig, ConformerEncoder, MFAConformer
from .lcnn import LCNN, LCNNConfig, mfm
from .pooling import AttentiveStatsPool, ClassifierHead, classify, logits_to_score, mfa_concat
from .resnet import ResidualUnit, ResNetConfig, SEResNet18
from .weights import LoadReport, export_manifest, load_pretrained, read_manifest, write_manifest

BACKENDS = {
    "conformer": (MFAConformer, ConformerConfig),
    "lcnn": (LCNN, LCNNConfig),
    "resnet18": (SEResNet18, ResNetConfig),
}


def build_backend(name, config=None):
    try:
        cls, cfg_cls = BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown backend {name!r}, expected one of {sorted(BACKENDS)}") from None
    if isinstance(config, dict):
        config = cfg_cls(**config)
    return cls(config or cfg_cls())


__all__ = [
    "AttentiveStatsPool", "Backend", "BACKENDS", "ClassifierHead", "ConformerBlock", "ConformerConfig",
    "ConformerEncoder", "LCNN", "LCNNConfig", "LoadReport", "MFAConformer", "ResNetConfig", "ResidualUnit",
    "SEResNet18", "build_backend", "classify", "export_manifest", "load_pretrained", "logits_to_score",
    "mfa_concat", "mfm", "read_manifest", "write_manifest",
]
