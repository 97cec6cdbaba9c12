"""
Synthetic desk-scale corpus standing in for real speech, spoofs and noise.

Bona fide utterances are harmonic complexes with a moving formant envelope,
vibrato, cycle-level pitch jitter and syllabic amplitude modulation. Their
spoofed twins come from the same generator parameters but are rendered the
way a simple vocoder would: harmonic phases re-drawn every frame and the
upper band re-synthesised from a smoothed envelope, which removes the
jitter-induced spectral fine structure above ``artifact_hz``. A pair shares
one gain, set so the bona fide member has RMS ``level_rms``; below the
artifact band the two are identical up to the attenuated breath noise.
"""

from __future__ import annotations

import hashlib
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .protocol import ManifestEntry, ProtocolEntry, write_manifest, write_protocol
from .signal import Waveform, write_wav

log = logging.getLogger(__name__)


@dataclass
class FixtureConfig:
    n_per_class: int = 100
    duration_s: float = 1.0
    sample_rate: int = 16000
    n_speakers: int = 20
    split: tuple = (0.6, 0.2, 0.2)  # train / dev / eval fractions
    artifact_hz: float = 3000.0
    artifact_db: float = 6.0
    level_rms: float = 0.08
    noise_clips_train: int = 12
    noise_clips_eval: int = 8
    noise_duration_s: float = 3.0


def _voice_params(rng, speaker):
    """Generator parameters for one utterance; ``speaker`` fixes the pitch register."""
    srng = np.random.default_rng([7919, speaker])
    return {
        "f0": srng.uniform(120, 230) * rng.uniform(0.9, 1.1),
        "vibrato_hz": rng.uniform(4.0, 7.0),
        "vibrato_depth": rng.uniform(0.01, 0.04),
        "drift": rng.uniform(-0.15, 0.15),
        "jitter": rng.uniform(0.008, 0.02),
        "formants": rng.uniform([300, 1000, 2500], [800, 2000, 3300]),
        "formant_rate": rng.uniform(1.5, 4.0),
        "bandwidths": rng.uniform([60, 90, 120], [120, 180, 250]),
        "syllable_hz": rng.uniform(3.0, 6.0),
        "breath_db": rng.uniform(-32, -24),
        "seed": int(rng.integers(0, 2**31)),
    }


def _render(params, n, sr, spoof=False, artifact_hz=3000.0, artifact_db=6.0):
    rng = np.random.default_rng(params["seed"])
    # the spoof's own draws come from a side stream so both classes share every other draw
    arng = np.random.default_rng([params["seed"], 1])
    t = np.arange(n) / sr
    # pitch track: drift + vibrato + cycle-level jitter (low-passed white noise)
    jit = sps.lfilter([0.05], [1, -0.95], rng.standard_normal(n)) * params["jitter"] * 3.0
    f0 = params["f0"] * (1 + params["drift"] * t / max(t[-1], 1e-9)) * (
        1 + params["vibrato_depth"] * np.sin(2 * np.pi * params["vibrato_hz"] * t)
    )
    f0_jittered = f0 * (1 + jit)
    phase = 2 * np.pi * np.cumsum(f0_jittered) / sr
    phase_smooth = 2 * np.pi * np.cumsum(f0) / sr
    wobble = np.sin(2 * np.pi * params["formant_rate"] * t)[:, None]
    formants = params["formants"][None, :] * (1 + 0.12 * wobble)
    n_harm = int((sr / 2 - 200) // params["f0"])
    low, high, high_bona = np.zeros(n), np.zeros(n), np.zeros(n)
    frame = int(0.016 * sr)
    for k in range(1, n_harm + 1):
        fk = k * f0
        amp = _harmonic_amp(fk, formants, params["bandwidths"])
        amp = np.where(fk < sr / 2 - 100, amp, 0.0)
        theta = rng.uniform(0, 2 * np.pi)
        if k * params["f0"] < artifact_hz:
            low += amp * np.cos(k * phase + theta)
        elif spoof:
            # vocoder-style upper band: smooth pitch, phases re-drawn per frame, flattened level
            offsets = np.repeat(arng.uniform(0, 2 * np.pi, n // frame + 1), frame)[:n]
            high += amp * 10 ** (-artifact_db / 20) * np.cos(k * phase_smooth + offsets)
            high_bona += amp * np.cos(k * phase + theta)
        else:
            high += amp * np.cos(k * phase + theta)
    # aspiration noise in the upper band
    b, a = sps.butter(2, [2000, 7000], btype="bandpass", fs=sr)
    breath = sps.lfilter(b, a, rng.standard_normal(n))
    breath *= 10 ** (params["breath_db"] / 20) * np.std(low) / max(np.std(breath), 1e-12)
    if spoof:
        y = low + high + breath * 10 ** (-artifact_db / 20)
    else:
        y, high_bona = low + high + breath, high
    # syllabic envelope
    env = 0.55 + 0.45 * np.sin(2 * np.pi * params["syllable_hz"] * t + rng.uniform(0, 2 * np.pi)) ** 2
    env *= np.minimum(1.0, np.minimum(t, t[-1] - t) / 0.02)
    # level reference is the bona fide rendering, so a pair shares one gain
    ref = np.sqrt(np.mean(((low + high_bona + breath) * env) ** 2))
    return y * env, ref


def _harmonic_amp(fk, formants, bandwidths):
    env = np.zeros_like(fk)
    for j in range(formants.shape[1]):
        env += 1.0 / (1.0 + ((fk - formants[:, j]) / bandwidths[j]) ** 2)
    return (env + 0.02) * np.exp(-fk / 5000.0)


def synth_utterance(rng, speaker, cfg, spoof=False, params=None):
    n = int(round(cfg.duration_s * cfg.sample_rate))
    params = params or _voice_params(rng, speaker)
    y, ref = _render(params, n, cfg.sample_rate, spoof, cfg.artifact_hz, cfg.artifact_db)
    y *= cfg.level_rms / max(ref, 1e-12)
    return Waveform(y, cfg.sample_rate)


def synth_music(rng, n, sr):
    """Sustained notes from a random chord progression with harmonic timbres."""
    y = np.zeros(n)
    t = np.arange(n) / sr
    n_chords = max(1, int(n / sr / 0.75))
    seg = n // n_chords
    root = rng.uniform(110, 220)
    for c in range(n_chords):
        sl = slice(c * seg, n if c == n_chords - 1 else (c + 1) * seg)
        chord = root * 2 ** (rng.choice([0, 2, 4, 5, 7, 9, 11, 12], size=3, replace=False) / 12)
        for f in chord:
            for k in range(1, 12):
                if k * f > sr / 2 - 200:
                    break
                y[sl] += (0.6 ** k) * np.sin(2 * np.pi * k * f * t[sl] + rng.uniform(0, 2 * np.pi))
        decay = np.exp(-np.arange(sl.stop - sl.start) / sr * rng.uniform(0.5, 3.0))
        y[sl] *= decay
    return y / max(np.std(y), 1e-12)


def synth_environmental(rng, n, sr):
    """Coloured noise, machine hum or impulsive clatter."""
    kind = rng.integers(0, 3)
    w = rng.standard_normal(n)
    if kind == 0:
        alpha = rng.uniform(0.5, 0.99)
        y = sps.lfilter([1.0], [1.0, -alpha], w)
    elif kind == 1:
        f = rng.uniform(50, 200)
        t = np.arange(n) / sr
        y = sum((0.7 ** k) * np.sin(2 * np.pi * k * f * t + rng.uniform(0, 6.3)) for k in range(1, 20))
        y = y / np.std(y) + 0.3 * w
    else:
        y = 0.2 * w
        for _ in range(int(rng.integers(3, 10))):
            s = int(rng.integers(0, n))
            ln = int(rng.integers(sr // 100, sr // 10))
            burst = rng.standard_normal(ln) * np.exp(-np.arange(ln) / (ln / 4))
            y[s:s + ln] += 3 * burst[: n - s]
    return y / max(np.std(y), 1e-12)


def _write_inventory(root, rng, cfg, n_clips, speaker_base):
    n = int(round(cfg.noise_duration_s * cfg.sample_rate))
    sr = cfg.sample_rate
    for i in range(n_clips):
        sp, _ = _render(_voice_params(rng, speaker_base + i), n, sr)
        write_wav(root / "speech" / f"s{i:03d}.wav", Waveform(0.1 * sp / max(np.std(sp), 1e-12), sr))
        write_wav(root / "music" / f"m{i:03d}.wav", Waveform(0.1 * synth_music(rng, n, sr), sr))
        write_wav(root / "environmental" / f"e{i:03d}.wav", Waveform(0.1 * synth_environmental(rng, n, sr), sr))


def make_fixture(out_dir, cfg=None, seed=0, force=False):
    """
    Write a synthetic corpus to ``out_dir``.

    Layout::

        audio/<utt>.wav            2 * n_per_class utterances
        protocol.txt               ASVspoof-style, one line per utterance
        train.tsv dev.tsv eval.tsv manifests per partition
        noise/train/<category>/    training noise inventory
        noise/eval/<category>/     disjoint evaluation inventory

    Returns the output directory.
    """
    cfg = cfg or FixtureConfig()
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise FileExistsError(f"{out} exists and is not empty; pass force=True to overwrite")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([int(seed), 1])

    n = cfg.n_per_class
    fr = np.asarray(cfg.split, dtype=float) / np.sum(cfg.split)
    n_train, n_dev = int(round(fr[0] * n)), int(round(fr[1] * n))
    parts = ["T"] * n_train + ["D"] * n_dev + ["E"] * (n - n_train - n_dev)
    # speaker-disjoint partitions
    spk_parts = np.array_split(np.arange(cfg.n_speakers), np.maximum(1, np.round(np.cumsum(fr)[:-1] * cfg.n_speakers)).astype(int))
    protocol, manifests = [], {"T": [], "D": [], "E": []}
    for i, part in enumerate(parts):
        pool = spk_parts[{"T": 0, "D": 1, "E": 2}[part]]
        spk = int(pool[rng.integers(0, len(pool))])
        params = _voice_params(rng, spk)
        for key, spoof, sys_id in (("bonafide", False, "-"), ("spoof", True, "A01")):
            utt = f"LA_{part}_{i:05d}{'s' if spoof else 'b'}"
            wav = synth_utterance(rng, spk, cfg, spoof, params)
            path = out / "audio" / f"{utt}.wav"
            write_wav(path, wav)
            protocol.append(ProtocolEntry(f"SPK_{spk:04d}", utt, sys_id, key))
            manifests[part].append(ManifestEntry(utt, path, key))
    write_protocol(out / "protocol.txt", protocol)
    for part, name in (("T", "train"), ("D", "dev"), ("E", "eval")):
        write_manifest(out / f"{name}.tsv", manifests[part])

    _write_inventory(out / "noise" / "train", np.random.default_rng([int(seed), 2]), cfg, cfg.noise_clips_train, 10_000)
    _write_inventory(out / "noise" / "eval", np.random.default_rng([int(seed), 3]), cfg, cfg.noise_clips_eval, 20_000)
    log.info("fixture written to %s (%d utterances)", out, len(protocol))
    return out


def tree_digest(root):
    """SHA-1 over relative paths and file contents, for determinism checks."""
    h = hashlib.sha1()
    root = Path(root)
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()
