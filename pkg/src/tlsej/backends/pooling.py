"""Attentive statistics pooling, multi-scale aggregation and the 2-class head.

Frame sequences are laid out ``[batch, time, features]`` throughout.
Class index 0 is spoof, 1 is bona fide; scores are ``logit[1] - logit[0]``
so that higher means more bona fide.
"""

import torch
import torch.nn as nn

from ..errors import InvalidInputError, ShapeError

SPOOF, BONAFIDE = 0, 1


def _safe_sqrt(x):
    # exact zero (and zero gradient) where the clamped variance is zero
    pos = x > 0
    return torch.where(pos, torch.sqrt(torch.where(pos, x, torch.ones_like(x))), torch.zeros_like(x))


class AttentiveStatsPool(nn.Module):
    """Attention-weighted mean and standard deviation over time.

    ``e_t = v^T tanh(W h_t + b) + k``, ``alpha = softmax_t(e)``; returns
    ``[mu, sigma]`` concatenated, shape ``[B, 2 * in_dim]``.
    """

    def __init__(self, in_dim, attn_dim=128):
        super().__init__()
        self.in_dim = in_dim
        self.proj = nn.Linear(in_dim, attn_dim)
        self.score = nn.Linear(attn_dim, 1)

    def weights(self, h):
        if h.dim() != 3 or h.shape[-1] != self.in_dim:
            raise ShapeError(f"expected [B, T, {self.in_dim}], got {tuple(h.shape)}")
        if h.shape[1] < 1:
            raise InvalidInputError("attentive pooling needs at least one frame")
        e = self.score(torch.tanh(self.proj(h))).squeeze(-1)
        return torch.softmax(e, dim=1)

    def forward(self, h):
        alpha = self.weights(h).unsqueeze(-1)
        mu = (alpha * h).sum(dim=1)
        var = (alpha * h * h).sum(dim=1) - mu * mu
        sigma = _safe_sqrt(var.clamp(min=0.0))
        return torch.cat([mu, sigma], dim=-1)


def mfa_concat(block_outputs, norm=None):
    """Concatenate block outputs on the feature axis, then LayerNorm each frame.

    ``norm`` defaults to a parameter-free LayerNorm over the concatenated width.
    """
    if not block_outputs:
        raise ShapeError("no block outputs to aggregate")
    shape = block_outputs[0].shape
    for h in block_outputs:
        if h.shape != shape:
            raise ShapeError(f"inconsistent block output shapes {tuple(shape)} vs {tuple(h.shape)}")
    x = torch.cat(list(block_outputs), dim=-1)
    if norm is None:
        return nn.functional.layer_norm(x, x.shape[-1:])
    return norm(x)


class ClassifierHead(nn.Module):
    """Pooled statistics -> embedding FC -> 2-way linear classifier."""

    def __init__(self, pooled_dim, embedding_dim):
        super().__init__()
        self.embedding = nn.Linear(pooled_dim, embedding_dim)
        self.classifier = nn.Linear(embedding_dim, 2)

    def forward(self, pooled):
        return self.classifier(self.embedding(pooled))


def classify(head, embedding):
    """Logits ``[B, 2]`` and score ``logit_bonafide - logit_spoof`` from a linear head."""
    in_features = head.in_features
    if embedding.shape[-1] != in_features:
        raise ShapeError(f"embedding width {embedding.shape[-1]} does not match head input {in_features}")
    logits = head(embedding)
    return logits, logits_to_score(logits)


def logits_to_score(logits):
    return logits[..., BONAFIDE] - logits[..., SPOOF]
