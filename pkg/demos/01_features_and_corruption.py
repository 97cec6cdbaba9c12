"""
Features and corruption
=======================

From a waveform to log-mel features, then the two ways utterances get
corrupted: additive noise at a target SNR and room reverberation.
"""

import numpy as np

from tlsej.augment import RoomSpec, add_noise, estimate_rt60, simulate_rir
from tlsej.signal import Waveform, convolve, fbank, istft, stft

rng = np.random.default_rng(0)

# one second of a 220 Hz tone with a little noise
t = np.arange(16000) / 16000
x = Waveform(0.3 * np.sin(2 * np.pi * 220 * t) + 0.01 * rng.standard_normal(t.size))

# 64 ms Hamming window, 8 ms hop
spec = stft(x)
print("stft frames x bins:", spec.magnitude.shape)
peak_bin = spec.magnitude.mean(axis=0).argmax()
print("peak bin %d -> %.1f Hz" % (peak_bin, peak_bin * 16000 / 1024))

y = istft(spec).samples
print("round trip error (interior): %.2e" % np.abs(y[2048:-2048] - x.samples[2048:-2048]).max())

feats = fbank(x)
print("log-mel features:", feats.values.shape)

# noise at 5 dB; the mixture is rescaled only if it would clip
noise = Waveform(rng.standard_normal(8000))
noisy = add_noise(x, noise, 5.0, rng)
resid = noisy.samples - x.samples
print("measured SNR: %.3f dB" % (10 * np.log10(np.mean(x.samples ** 2) / np.mean(resid ** 2))))

# a 12 x 9 x 3 m room calibrated for RT60 = 0.5 s
room = RoomSpec((12.0, 9.0, 3.0), (3.0, 4.0, 1.5), (8.0, 5.0, 1.2), rt60_target=0.5)
rir = simulate_rir(room)
print("RIR length %.2f s, Schroeder RT60 %.3f s" % (rir.duration, estimate_rt60(rir)))
wet = convolve(x, rir)
print("reverberant peak %.3f" % np.abs(wet.samples).max())
