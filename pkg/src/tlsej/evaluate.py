"""Scoring, equal error rate and condition-wise report tables."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dumenet import enhance
from .errors import InvalidInputError
from .signal import StftParams, fbank, read_wav

log = logging.getLogger(__name__)


@dataclass
class ScoreSet:
    """Per-trial scores (higher = more bona fide) and labels (1 bona fide, 0 spoof)."""

    utt_ids: list
    scores: np.ndarray
    labels: np.ndarray
    errors: dict = field(default_factory=dict)  # utt_id -> message for trials that could not be scored

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not (len(self.utt_ids) == self.scores.size == self.labels.size):
            raise InvalidInputError("utt_ids, scores and labels must have equal length")
        if not np.all(np.isfinite(self.scores)):
            raise InvalidInputError("scores must be finite")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise InvalidInputError("labels must be 0 (spoof) or 1 (bona fide)")

    def __len__(self):
        return self.scores.size

    @property
    def bonafide(self):
        return self.scores[self.labels == 1]

    @property
    def spoof(self):
        return self.scores[self.labels == 0]


def compute_eer(scores, labels=None):
    """
    Equal error rate and its threshold.

    ``P_fa(t)`` is the fraction of spoof trials scoring ``> t`` and
    ``P_miss(t)`` the fraction of bona fide trials scoring ``<= t``.
    Thresholds are swept over midpoints of adjacent distinct scores (plus one
    below the minimum and one above the maximum). When no threshold makes
    the rates equal, the crossing is linearly interpolated between the two
    adjacent operating points.

    Parameters
    ----------
    scores : ScoreSet or array
    labels : array, optional
        Required when ``scores`` is an array; 1 bona fide, 0 spoof.

    Returns
    -------
    (eer, threshold) : tuple of float
    """
    if isinstance(scores, ScoreSet):
        s, y = scores.scores, scores.labels
    else:
        s, y = np.asarray(scores, dtype=np.float64), np.asarray(labels)
    n_bona, n_spoof = int(np.sum(y == 1)), int(np.sum(y == 0))
    if n_bona == 0 or n_spoof == 0:
        raise InvalidInputError("EER needs at least one bona fide and one spoof trial")

    uniq = np.unique(s)
    thresholds = np.concatenate([[uniq[0] - 1.0], (uniq[:-1] + uniq[1:]) / 2.0, [uniq[-1] + 1.0]])
    # counts of scores <= each threshold, per class
    bona_le = np.searchsorted(np.sort(s[y == 1]), thresholds, side="right")
    spoof_le = np.searchsorted(np.sort(s[y == 0]), thresholds, side="right")
    p_miss = bona_le / n_bona
    p_fa = (n_spoof - spoof_le) / n_spoof
    d = p_fa - p_miss
    i = int(np.argmax(d <= 0))
    if d[i] == 0:
        return float(p_fa[i]), float(thresholds[i])
    w = d[i - 1] / (d[i - 1] - d[i])
    eer = p_fa[i - 1] + w * (p_fa[i] - p_fa[i - 1])
    theta = thresholds[i - 1] + w * (thresholds[i] - thresholds[i - 1])
    return float(eer), float(theta)


def write_scores(path, score_set):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for utt, s in zip(score_set.utt_ids, score_set.scores):
            f.write(f"{utt} {s:.6f}\n")


def read_scores(path):
    """Read ``utt_id score`` lines into a dict, preserving order."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            cols = line.split()
            if cols:
                out[cols[0]] = float(cols[1])
    return out


def join_scores(scores, labels):
    """Build a :class:`ScoreSet` from ``{utt: score}`` and ``{utt: label}``; unlabeled trials are dropped."""
    utts = [u for u in scores if u in labels]
    return ScoreSet(utts, [scores[u] for u in utts], [labels[u] for u in utts])


@dataclass
class ScoringStack:
    """A trained system: optional enhancement front-end, backend and feature settings."""

    backend: torch.nn.Module
    frontend: torch.nn.Module | None = None
    stft: StftParams = field(default_factory=StftParams)
    n_mels: int = 80

    def features(self, wav):
        return torch.as_tensor(fbank(wav, self.n_mels, self.stft).values, dtype=torch.float32)

    @torch.no_grad()
    def score_features(self, feats):
        self.backend.eval()
        x = feats.unsqueeze(0) if feats.dim() == 2 else feats
        if self.frontend is not None:
            self.frontend.eval()
            x = enhance(self.frontend, x)
        return self.backend.score(x)


def score_dataset(stack, entries):
    """Score every manifest entry; unreadable files become per-trial errors instead of aborting."""
    utts, scores, labels, errors = [], [], [], {}
    for e in entries:
        try:
            wav = read_wav(e.path)
            s = float(stack.score_features(stack.features(wav))[0])
        except (OSError, ValueError) as exc:
            errors[e.utt_id] = str(exc)
            continue
        utts.append(e.utt_id)
        scores.append(s)
        labels.append(e.target)
    if errors:
        log.warning("%d of %d trials could not be scored", len(errors), len(entries))
    return ScoreSet(utts, scores, labels, errors)


def condition_label(tag):
    """``music_10db`` -> ``Music 10dB``; ``rt60_050`` -> ``RT60 0.5 s``."""
    kind, _, value = tag.partition("_")
    if kind == "rt60":
        return f"RT60 {int(value) / 100:g} s"
    if value.endswith("db"):
        return f"{kind.capitalize()} {value[:-2]}dB"
    return tag.capitalize()


def canonical_conditions():
    from .augment import TEST_CONDITIONS

    return list(TEST_CONDITIONS)


@dataclass
class Report:
    conditions: list
    systems: list
    cells: dict  # (condition, system) -> EER fraction or None

    def rows(self):
        for c in self.conditions:
            yield condition_label(c), [self.cells.get((c, s)) for s in self.systems]

    @staticmethod
    def _fmt(v):
        return "" if v is None else f"{100.0 * v:.2f}"

    def to_tsv(self):
        lines = ["\t".join(["condition"] + self.systems)]
        for label, vals in self.rows():
            lines.append("\t".join([label] + [self._fmt(v) for v in vals]))
        return "\n".join(lines) + "\n"

    def to_text(self):
        table = [["Condition"] + self.systems] + [[label] + [self._fmt(v) for v in vals] for label, vals in self.rows()]
        widths = [max(len(r[i]) for r in table) for i in range(len(table[0]))]
        out = []
        for j, r in enumerate(table):
            out.append("  ".join([r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]))
            if j == 0:
                out.append("-" * len(out[0]))
        return "\n".join(out) + "\n"


def condition_report(results, conditions=None):
    """
    Tabulate EER per (condition, system).

    ``results`` maps system name to ``{condition: ScoreSet or EER fraction}``.
    Rows follow the canonical order (babble, music, noise at 20..0 dB, then
    RT60 0.25..1 s); extra conditions present in ``results`` are appended in
    sorted order. Missing cells are left blank with a warning.
    """
    conditions = list(conditions or canonical_conditions())
    extra = sorted({c for per in results.values() for c in per} - set(conditions))
    conditions += extra
    systems = list(results)
    cells = {}
    for sysname, per in results.items():
        for cond in conditions:
            v = per.get(cond)
            if v is None:
                warnings.warn(f"no scores for system {sysname!r} under condition {cond!r}", stacklevel=2)
                cells[(cond, sysname)] = None
            elif isinstance(v, ScoreSet):
                cells[(cond, sysname)] = compute_eer(v)[0]
            else:
                cells[(cond, sysname)] = float(v)
    return Report(conditions, systems, cells)
