"""Noise-robust speech anti-spoofing: augmentation, mask-based enhancement, backends, joint training."""

from .augment import AugmentationPolicy, CorruptionRecord, NoiseInventory, RoomSpec, corrupt, simulate_rir
from .dumenet import DUMENet, DumenetConfig
from .errors import TlsejError
from .evaluate import ScoreSet, ScoringStack, compute_eer, condition_report
from .signal import FbankFeatures, StftParams, Waveform, fbank, istft, stft
from .trainer import TrainConfig, load_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "AugmentationPolicy", "CorruptionRecord", "DUMENet", "DumenetConfig", "FbankFeatures", "NoiseInventory",
    "RoomSpec", "ScoreSet", "ScoringStack", "StftParams", "TlsejError", "TrainConfig", "Waveform",
    "compute_eer", "condition_report", "corrupt", "fbank", "istft", "load_checkpoint", "simulate_rir",
    "stft", "train",
]
