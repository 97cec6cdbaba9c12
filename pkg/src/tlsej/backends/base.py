import torch
import torch.nn as nn

from ..errors import ConfigError, ShapeError
from .pooling import logits_to_score

INPUT_NORMS = ("none", "mean", "meanvar")


class Backend(nn.Module):
    """Common surface of the anti-spoofing classifiers.

    ``forward`` maps ``[B, T, n_mels]`` features to ``[B, 2]`` logits.
    """

    min_frames = 1

    def __init__(self, n_mels, input_norm="none"):
        super().__init__()
        if input_norm not in INPUT_NORMS:
            raise ConfigError(f"input_norm must be one of {INPUT_NORMS}, got {input_norm!r}")
        self.n_mels = n_mels
        self.input_norm = input_norm

    def check_input(self, features):
        if features.dim() != 3 or features.shape[-1] != self.n_mels:
            raise ShapeError(f"expected [B, T, {self.n_mels}], got {tuple(features.shape)}")
        if features.shape[1] < self.min_frames:
            raise ShapeError(f"{type(self).__name__} needs at least {self.min_frames} frames, got {features.shape[1]}")

    def normalize(self, features):
        """Per-utterance normalisation of each mel channel over time."""
        self.check_input(features)
        if self.input_norm == "none":
            return features
        x = features - features.mean(dim=1, keepdim=True)
        if self.input_norm == "meanvar":
            x = x / torch.sqrt(x.pow(2).mean(dim=1, keepdim=True) + 1e-5)
        return x

    def score(self, features):
        return logits_to_score(self(features))
