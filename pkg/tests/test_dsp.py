import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spkcount.dsp import (
    AudioClip,
    ComplexSpectrogram,
    StftConfig,
    istft,
    magnitude,
    read_wav,
    sine_window,
    stft,
    write_wav,
)

CFG = StftConfig()


def test_sine_window_closed_form():
    w = sine_window(4)
    expected = np.sin(np.pi * np.array([1, 3, 5, 7]) / 8)
    np.testing.assert_allclose(w, expected, rtol=0, atol=1e-15)
    np.testing.assert_allclose(w, w[::-1], atol=1e-15)


@pytest.mark.parametrize("length", [2, 8, 64, 1024])
def test_sine_window_overlap_power_complementary(length):
    w = sine_window(length)
    half = length // 2
    np.testing.assert_allclose(w[:half] ** 2 + w[half:] ** 2, 1.0, atol=1e-15)
    assert np.all(w > 0)
    np.testing.assert_allclose(w, w[::-1], atol=1e-15)


def test_sine_window_1024_peak():
    w = sine_window(1024)
    assert w.shape == (1024,)
    assert w.max() == pytest.approx(1.0, abs=5e-6)


@pytest.mark.parametrize("length", [0, 3, 1023])
def test_sine_window_rejects_odd_or_zero(length):
    with pytest.raises(ValueError):
        sine_window(length)


def test_config_invariants():
    assert CFG.n_bins == 513
    assert CFG.frame_rate == 31.25
    with pytest.raises(ValueError):
        StftConfig(window_len=1024, hop=256)
    with pytest.raises(ValueError):
        StftConfig(fft_len=2048)


def test_audio_clip_validation():
    with pytest.raises(ValueError):
        AudioClip(np.zeros(10), sample_rate=44100)
    with pytest.raises(ValueError):
        AudioClip(np.array([0.0, np.nan]))


def test_stft_frame_count_one_second():
    spec = stft(AudioClip(np.zeros(16000)), CFG)
    assert spec.bins.shape == (30, 513)
    assert np.all(spec.bins == 0)


def test_stft_on_bin_cosine_peaks_at_bin_16():
    t = np.arange(16000) / 16000
    spec = stft(np.cos(2 * np.pi * 250.0 * t))
    assert np.all(np.argmax(magnitude(spec), axis=1) == 16)


def test_stft_rejects_short_clip():
    with pytest.raises(ValueError):
        stft(np.zeros(1023))


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=1024, max_value=20000))
def test_frame_count_formula(length):
    spec = stft(np.zeros(length))
    assert spec.n_frames == (length - 1024) // 512 + 1


def test_frame_t_covers_expected_samples():
    x = np.zeros(4096)
    x[3 * 512 + 100] = 1.0  # lies in frames 2 and 3 only
    energy = np.sum(magnitude(stft(x)) ** 2, axis=1)
    assert np.flatnonzero(energy > 0).tolist() == [2, 3]


def test_parseval_per_frame():
    rng = np.random.default_rng(7)
    x = rng.standard_normal(8000)
    spec = stft(x)
    w = sine_window(1024)
    for t in range(spec.n_frames):
        frame = x[t * 512 : t * 512 + 1024] * w
        X = spec.bins[t]
        weights = np.full(513, 2.0)
        weights[[0, -1]] = 1.0
        lhs = np.sum(frame**2)
        rhs = np.sum(weights * np.abs(X) ** 2) / 1024
        assert abs(lhs - rhs) <= 1e-9 * lhs


@pytest.mark.parametrize("seed", range(5))
def test_round_trip_interior(seed):
    x = np.random.default_rng(seed).standard_normal(16000)
    y = istft(stft(x)).samples
    n = y.shape[0]
    interior = slice(512, n - 512)
    err = np.max(np.abs(y[interior] - x[interior])) / np.max(np.abs(x[interior]))
    assert err < 1e-10


def test_istft_zero_and_determinism():
    zero = ComplexSpectrogram(np.zeros((5, 513), complex))
    assert np.all(istft(zero).samples == 0)
    x = np.random.default_rng(3).standard_normal(16000)
    a = istft(stft(x)).samples
    b = istft(stft(x)).samples
    assert np.array_equal(a, b)


def test_magnitude_cases():
    assert magnitude(np.array([[3 + 4j]]))[0, 0] == 5.0
    x = np.random.default_rng(1).standard_normal(4096)
    spec = stft(x)
    rotated = ComplexSpectrogram(spec.bins * np.exp(1j * 0.7), spec.config)
    np.testing.assert_allclose(magnitude(rotated), magnitude(spec), rtol=1e-12)


def test_wav_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    mono = AudioClip(rng.uniform(-0.5, 0.5, 1600))
    write_wav(tmp_path / "m.wav", mono)
    back = read_wav(tmp_path / "m.wav")
    assert back.samples.shape == (1600,)
    np.testing.assert_allclose(back.samples, mono.samples, atol=1 / 32767)

    foa = AudioClip(rng.uniform(-0.5, 0.5, (4, 800)))
    write_wav(tmp_path / "foa.wav", foa)
    back = read_wav(tmp_path / "foa.wav")
    assert back.samples.shape == (4, 800)
    np.testing.assert_allclose(back.samples, foa.samples, atol=1 / 32767)
