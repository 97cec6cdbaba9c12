import numpy as np
import pytest

from oracles import direct_convolution, direct_dft_frames
from tlsej.errors import InvalidInputError, WavFormatError
from tlsej.signal import (
    StftParams,
    Waveform,
    _window,
    convolve,
    fbank,
    hz_to_mel,
    istft,
    mel_filterbank,
    mel_to_hz,
    read_wav,
    stft,
    write_wav,
)

SR = 16000


def test_waveform_validation():
    with pytest.raises(InvalidInputError):
        Waveform(np.array([]))
    with pytest.raises(InvalidInputError):
        Waveform(np.array([0.0, np.nan]))
    with pytest.raises(InvalidInputError):
        Waveform(np.zeros(4), sample_rate=0)
    assert Waveform(np.zeros(16000)).duration == pytest.approx(1.0)


def test_default_params():
    p = StftParams()
    assert p.win_length(SR) == 1024
    assert p.hop_length(SR) == 128
    assert p.n_fft(SR) == 1024
    assert p.n_frames(4096, SR) == 1 + (4096 - 1024) // 128


def test_frame_count_no_padding():
    w = Waveform(np.random.default_rng(0).standard_normal(5000))
    assert stft(w).magnitude.shape == (1 + (5000 - 1024) // 128, 513)


def test_short_input_rejected():
    with pytest.raises(InvalidInputError):
        stft(Waveform(np.ones(1000)))


def test_dc_rectangular_window_all_energy_in_bin0():
    s = stft(Waveform(np.ones(4096)), StftParams(window_kind="rect"))
    assert np.max(s.magnitude[:, 1:]) <= 1e-6 * s.magnitude[0, 0]


def test_dc_hamming_window_energy_confined_to_mainlobe():
    # A tapered window leaks DC into its main lobe (bin 1 here); nothing beyond it.
    s = stft(Waveform(np.ones(4096)))
    assert np.max(s.magnitude[:, 2:]) <= 1e-6 * s.magnitude[0, 0]
    assert np.argmax(s.magnitude[0]) == 0


def test_bin_centred_sine_peaks_at_its_bin():
    k = 37
    n = np.arange(4096)
    s = stft(Waveform(np.sin(2 * np.pi * k * SR / 1024 * n / SR)))
    assert np.all(np.argmax(s.magnitude, axis=1) == k)


def test_stft_matches_direct_dft():
    x = np.random.default_rng(1).standard_normal(4096)
    p = StftParams()
    s = stft(Waveform(x), p)
    ref = direct_dft_frames(x, 1024, 128, 1024, _window("hamming", 1024))
    assert np.max(np.abs(s.complex - ref)) <= 1e-6 * np.max(np.abs(ref))
    np.testing.assert_allclose(s.magnitude, np.abs(ref), rtol=1e-6, atol=1e-6 * np.abs(ref).max())


def test_istft_roundtrip_interior():
    x = np.random.default_rng(2).uniform(-1, 1, 8000)
    y = istft(stft(Waveform(x))).samples
    covered = 1 + (8000 - 1024) // 128
    end = (covered - 1) * 128 + 1024
    assert np.max(np.abs(y[1024:end - 1024] - x[1024:end - 1024])) < 1e-4


def test_istft_rejects_bad_shapes():
    s = stft(Waveform(np.random.default_rng(0).standard_normal(4096)))
    bad = type(s)(s.magnitude, s.phase[:, :-1], s.params, s.sample_rate, s.n_samples)
    with pytest.raises(InvalidInputError):
        istft(bad)


def test_mel_scale_inverse():
    f = np.linspace(0, 8000, 50)
    np.testing.assert_allclose(mel_to_hz(hz_to_mel(f)), f, atol=1e-9)


def test_mel_filterbank_shape_and_coverage():
    fb = mel_filterbank(80, 1024, SR)
    assert fb.shape == (80, 513)
    assert fb.min() >= 0 and fb.max() <= 1.0 + 1e-12
    assert np.all(fb.sum(axis=1) > 0)
    assert not fb.flags.writeable


def test_fbank_shape_and_finite():
    w = Waveform(np.random.default_rng(3).standard_normal(16000) * 0.1)
    f = fbank(w)
    assert f.values.shape == (1 + (16000 - 1024) // 128, 80)
    assert np.all(np.isfinite(f.values))


def test_fbank_of_silence_is_log_floor():
    f = fbank(Waveform(np.zeros(4096)))
    np.testing.assert_allclose(f.values, np.log(f.log_floor))


def test_convolution_matches_direct_sum():
    rng = np.random.default_rng(4)
    x, h = rng.standard_normal(3000), rng.standard_normal(400)
    y = convolve(Waveform(x), Waveform(h)).samples
    ref = direct_convolution(x, h)
    assert np.max(np.abs(y - ref)) <= 1e-6 * np.max(np.abs(ref))


def test_convolution_identity_and_rate_check():
    x = np.random.default_rng(5).standard_normal(100)
    np.testing.assert_allclose(convolve(Waveform(x), Waveform(np.array([1.0]))).samples, x, atol=1e-12)
    with pytest.raises(InvalidInputError):
        convolve(Waveform(x), Waveform(np.array([1.0]), sample_rate=8000))


def test_wav_roundtrip(tmp_path):
    x = np.random.default_rng(6).uniform(-0.9, 0.9, 1600)
    write_wav(tmp_path / "a.wav", Waveform(x))
    w = read_wav(tmp_path / "a.wav")
    assert w.sample_rate == SR
    assert np.max(np.abs(w.samples - x)) <= 1 / 32768


def test_wav_rejects_stereo(tmp_path):
    import wave

    with wave.open(str(tmp_path / "s.wav"), "wb") as f:
        f.setnchannels(2)
        f.setsampwidth(2)
        f.setframerate(SR)
        f.writeframes(b"\0\0" * 20)
    with pytest.raises(WavFormatError) as exc:
        read_wav(tmp_path / "s.wav")
    assert exc.value.field == "channels"


def test_wav_rejects_garbage(tmp_path):
    (tmp_path / "g.wav").write_bytes(b"not a wave file at all")
    with pytest.raises(WavFormatError):
        read_wav(tmp_path / "g.wav")
