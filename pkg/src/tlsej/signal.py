"""
Deterministic DSP primitives: waveform I/O, STFT/iSTFT, log-mel filterbanks
and linear convolution.

Every function here is pure. Arrays are float64 internally; waveforms carry
their sample rate so that mismatched inputs are rejected instead of silently
resampled.
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .errors import InvalidInputError, ShapeError, WavFormatError

DEFAULT_SAMPLE_RATE = 16000
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class Waveform:
    """Mono audio samples (linear amplitude) with their sample rate."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise InvalidInputError(f"waveform must be 1-D, got shape {x.shape}")
        if x.size < 1:
            raise InvalidInputError("waveform must contain at least one sample")
        if self.sample_rate <= 0:
            raise InvalidInputError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.sample_rate

    def with_samples(self, samples):
        return Waveform(samples, self.sample_rate)


@dataclass(frozen=True)
class StftParams:
    """Framing parameters. ``fft_size=None`` rounds the window up to a power of two."""

    window_ms: float = 64.0
    hop_ms: float = 8.0
    window_kind: str = "hamming"
    fft_size: int | None = None

    def __post_init__(self):
        if self.window_ms <= 0 or self.hop_ms <= 0:
            raise InvalidInputError("window_ms and hop_ms must be positive")
        if self.hop_ms > self.window_ms:
            raise InvalidInputError("hop_ms must not exceed window_ms")

    def win_length(self, sample_rate):
        return int(round(self.window_ms * sample_rate / 1000.0))

    def hop_length(self, sample_rate):
        return int(round(self.hop_ms * sample_rate / 1000.0))

    def n_fft(self, sample_rate):
        win = self.win_length(sample_rate)
        if self.fft_size is None:
            return 1 << (win - 1).bit_length()
        if self.fft_size < win:
            raise InvalidInputError(f"fft_size {self.fft_size} shorter than window {win}")
        return self.fft_size

    def n_frames(self, n_samples, sample_rate):
        win = self.win_length(sample_rate)
        if n_samples < win:
            return 0
        return 1 + (n_samples - win) // self.hop_length(sample_rate)


@dataclass(frozen=True)
class ComplexSpectrogram:
    magnitude: np.ndarray  # [frames, bins]
    phase: np.ndarray  # [frames, bins], radians
    params: StftParams = field(default_factory=StftParams)
    sample_rate: int = DEFAULT_SAMPLE_RATE
    n_samples: int | None = None

    @property
    def complex(self):
        return self.magnitude * np.exp(1j * self.phase)


@dataclass(frozen=True)
class FbankFeatures:
    values: np.ndarray  # [frames, n_mels]
    params: StftParams = field(default_factory=StftParams)
    log_floor: float = LOG_FLOOR

    @property
    def n_mels(self):
        return self.values.shape[1]

    @property
    def n_frames(self):
        return self.values.shape[0]


@lru_cache(maxsize=16)
def _window(kind, length):
    kind = kind.lower()
    if kind in ("rect", "rectangular", "boxcar"):
        return np.ones(length)
    # periodic windows satisfy the overlap-add identity used by istft
    return sps.get_window(kind, length, fftbins=True)


def frame_signal(x, win, hop):
    """Return a read-only [frames, win] view; trailing partial frame dropped."""
    if x.size < win:
        raise InvalidInputError(f"signal of {x.size} samples is shorter than one window ({win})")
    return np.lib.stride_tricks.sliding_window_view(x, win)[::hop]


def stft(w, p=StftParams()):
    """
    Short-time Fourier transform of a waveform.

    Frames are taken without padding: ``1 + (len - win) // hop`` of them.

    Parameters
    ----------
    w : Waveform
    p : StftParams

    Returns
    -------
    ComplexSpectrogram
        Magnitude and phase, each of shape ``(frames, n_fft // 2 + 1)``.
    """
    sr = w.sample_rate
    win, hop, n_fft = p.win_length(sr), p.hop_length(sr), p.n_fft(sr)
    frames = frame_signal(w.samples, win, hop) * _window(p.window_kind, win)
    spec = np.fft.rfft(frames, n=n_fft, axis=-1)
    return ComplexSpectrogram(np.abs(spec), np.angle(spec), p, sr, len(w))


def istft(s):
    """Weighted overlap-add inverse of :func:`stft`.

    Samples not covered by any frame (the dropped tail) come back as zeros.
    """
    if s.magnitude.shape != s.phase.shape or s.magnitude.ndim != 2:
        raise InvalidInputError(
            f"magnitude {s.magnitude.shape} and phase {s.phase.shape} must be equal 2-D shapes"
        )
    p, sr = s.params, s.sample_rate
    win, hop, n_fft = p.win_length(sr), p.hop_length(sr), p.n_fft(sr)
    if s.magnitude.shape[1] != n_fft // 2 + 1:
        raise InvalidInputError(
            f"expected {n_fft // 2 + 1} frequency bins, got {s.magnitude.shape[1]}"
        )
    n_frames = s.magnitude.shape[0]
    length = (n_frames - 1) * hop + win if n_frames else 0
    if s.n_samples is not None:
        length = max(length, s.n_samples)
    frames = np.fft.irfft(s.complex, n=n_fft, axis=-1)[:, :win]
    window = _window(p.window_kind, win)
    out = np.zeros(max(length, 1))
    norm = np.zeros_like(out)
    for i in range(n_frames):
        out[i * hop:i * hop + win] += frames[i] * window
        norm[i * hop:i * hop + win] += window ** 2
    covered = norm > 1e-8
    out[covered] /= norm[covered]
    return Waveform(out, sr)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def mel_filterbank(n_mels, n_fft, sample_rate, f_min=0.0, f_max=None):
    """Triangular mel filters, shape ``(n_mels, n_fft // 2 + 1)``."""
    if n_mels <= 0:
        raise InvalidInputError(f"n_mels must be positive, got {n_mels}")
    f_max = sample_rate / 2.0 if f_max is None else f_max
    bin_hz = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz[None, :] - lower) / (center - lower)
    falling = (upper - bin_hz[None, :]) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


def fbank(w, n_mels=80, p=StftParams(), log_floor=LOG_FLOOR):
    """Log-mel filterbank features ``log(mel @ |STFT|^2 + log_floor)``, shape ``[T, n_mels]``."""
    if n_mels <= 0:
        raise InvalidInputError(f"n_mels must be positive, got {n_mels}")
    spec = stft(w, p)
    power = spec.magnitude ** 2
    fb = mel_filterbank(n_mels, p.n_fft(w.sample_rate), w.sample_rate)
    return FbankFeatures(np.log(power @ fb.T + log_floor), p, log_floor)


def convolve(sig, rir):
    """FFT linear convolution truncated to the length of ``sig``."""
    if sig.sample_rate != rir.sample_rate:
        raise InvalidInputError(
            f"sample rate mismatch: signal {sig.sample_rate} Hz vs rir {rir.sample_rate} Hz"
        )
    y = sps.fftconvolve(sig.samples, rir.samples, mode="full")[: len(sig)]
    return Waveform(y, sig.sample_rate)


_PCM_SCALE = 32768.0


def read_wav(path):
    """Read a 16-bit PCM mono RIFF/WAVE file into a :class:`Waveform` in [-1, 1)."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as f:
            channels, width, rate, n = f.getnchannels(), f.getsampwidth(), f.getframerate(), f.getnframes()
            if channels != 1:
                raise WavFormatError("channels", f"expected mono, got {channels} channels in {path}")
            if width != 2:
                raise WavFormatError("bits_per_sample", f"expected 16, got {8 * width} in {path}")
            if rate <= 0:
                raise WavFormatError("sample_rate", f"invalid sample rate {rate} in {path}")
            raw = f.readframes(n)
    except (wave.Error, EOFError) as exc:
        raise WavFormatError("header", f"malformed RIFF/WAVE header in {path}: {exc}") from None
    data = np.frombuffer(raw, dtype="<i2")
    if data.size == 0:
        raise WavFormatError("data", f"no samples in {path}")
    return Waveform(data.astype(np.float64) / _PCM_SCALE, rate)


def to_pcm16(samples):
    return np.clip(np.round(np.asarray(samples) * _PCM_SCALE), -32768, 32767).astype("<i2")


def write_wav(path, w):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(int(w.sample_rate))
        f.writeframes(to_pcm16(w.samples).tobytes())


def rms(x):
    x = x.samples if isinstance(x, Waveform) else np.asarray(x)
    return math.sqrt(float(np.mean(np.square(x))))


def power(x):
    x = x.samples if isinstance(x, Waveform) else np.asarray(x)
    return float(np.mean(np.square(x)))


def check_same_shape(a, b, what="arrays"):
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeError(f"{what} differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}")
