import numpy as np
import pytest
import scipy.signal

from resaware import dsp
from resaware.errors import (ConfigMismatch, DegenerateFilterbank, EmptySignal)
from resaware.prng import SplitMix64


def tone(freq, duration, rate, amp=1.0):
    t = np.arange(int(duration * rate)) / rate
    return dsp.Waveform(amp * np.sin(2 * np.pi * freq * t), rate)


# ---------------------------------------------------------------------------
# windows and STFT
# ---------------------------------------------------------------------------

def test_hann_window_matches_scipy_periodic():
    for n in (8, 400, 1024):
        expected = scipy.signal.get_window("hann", n, fftbins=True)
        np.testing.assert_allclose(dsp.hann_window(n), expected, atol=1e-12)


def test_stft_frame_count_formula():
    cfg = dsp.SpectrogramConfig(n_fft=256, hop=64, n_mels=32, sample_rate=8000)
    for n in (256, 300, 1000, 64, 1):
        w = dsp.Waveform(np.random.default_rng(n).standard_normal(n), 8000)
        p = dsp.stft_power(w, cfg)
        assert p.shape == (129, 1 + n // 64)


def test_stft_against_naive_dft():
    """One frame checked against an explicit O(n^2) DFT of the padded signal."""
    rng = np.random.default_rng(3)
    n_fft, hop = 64, 16
    cfg = dsp.SpectrogramConfig(n_fft=n_fft, hop=hop, n_mels=8, sample_rate=1000)
    x = rng.standard_normal(200)
    p = dsp.stft_power(dsp.Waveform(x, 1000), cfg)

    padded = np.pad(x, n_fft // 2, mode="reflect")
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n_fft) / n_fft)
    for frame_i in (0, 3, 7):
        seg = padded[frame_i * hop : frame_i * hop + n_fft] * win
        k = np.arange(n_fft // 2 + 1)
        dft = np.exp(-2j * np.pi * np.outer(k, np.arange(n_fft)) / n_fft) @ seg
        np.testing.assert_allclose(p[:, frame_i], np.abs(dft) ** 2,
                                   rtol=1e-9, atol=1e-9)


def test_stft_rate_mismatch_raises():
    cfg = dsp.SpectrogramConfig(n_fft=256, hop=64, n_mels=32, sample_rate=8000)
    with pytest.raises(ConfigMismatch):
        dsp.stft_power(dsp.Waveform(np.zeros(100), 16000), cfg)


def test_canonical_feature_shapes_for_two_seconds():
    w = tone(440.0, 2.0, 16000)
    feats = dsp.multi_resolution_features(w)
    assert [f.values.shape for f in feats] == [(64, 201), (128, 126), (128, 63)]
    assert [f.resolution_index for f in feats] == [1, 2, 3]


def test_multi_resolution_rejects_wrong_rate():
    with pytest.raises(ConfigMismatch):
        dsp.multi_resolution_features(dsp.Waveform(np.zeros(100), 8000))


# ---------------------------------------------------------------------------
# mel scale and filterbank
# ---------------------------------------------------------------------------

def test_mel_scale_round_trip_and_known_value():
    f = np.array([0.0, 700.0, 1000.0, 8000.0])
    np.testing.assert_allclose(dsp.mel_to_hz(dsp.hz_to_mel(f)), f, rtol=1e-12)
    # m(700) = 2595 * log10(2)
    assert dsp.hz_to_mel(700.0) == pytest.approx(2595.0 * np.log10(2.0))


def test_filterbank_against_loop_oracle():
    cfg = dsp.SpectrogramConfig(n_fft=512, hop=128, n_mels=24, sample_rate=16000)
    fb = dsp.build_mel_filterbank(cfg)

    mel_pts = np.linspace(dsp.hz_to_mel(0.0), dsp.hz_to_mel(8000.0), 26)
    hz = dsp.mel_to_hz(mel_pts)
    expected = np.zeros((24, 257))
    for m in range(24):
        lo, c, hi = hz[m], hz[m + 1], hz[m + 2]
        for b in range(257):
            f = b * 16000 / 512
            if lo < f < c:
                expected[m, b] = (f - lo) / (c - lo)
            elif c <= f < hi:
                expected[m, b] = (hi - f) / (hi - c)
    np.testing.assert_allclose(fb.weights, expected, atol=1e-9)
    assert np.all(np.diff(fb.center_freqs) > 0)


def test_filterbank_rows_cover_every_filter():
    for cfg in dsp.CANONICAL_CONFIGS:
        fb = dsp.build_mel_filterbank(cfg)
        assert fb.weights.shape == (cfg.n_mels, cfg.n_bins)
        assert np.all(fb.weights.sum(axis=1) > 0)
        assert np.all(fb.weights >= 0)


def test_degenerate_filterbank_raises():
    cfg = dsp.SpectrogramConfig(n_fft=64, hop=16, n_mels=64, sample_rate=16000)
    with pytest.raises(DegenerateFilterbank):
        dsp.build_mel_filterbank(cfg)


def test_log_mel_eps_floor():
    cfg = dsp.CANONICAL_CONFIGS[0]
    fb = dsp.build_mel_filterbank(cfg)
    out = dsp.log_mel(np.zeros((cfg.n_bins, 5)), fb, log_eps=1e-6)
    np.testing.assert_allclose(out, np.log(1e-6))


def test_log_mel_shape_mismatch_raises():
    fb = dsp.build_mel_filterbank(dsp.CANONICAL_CONFIGS[0])
    with pytest.raises(ConfigMismatch):
        dsp.log_mel(np.zeros((100, 5)), fb)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def test_resample_identity_and_length():
    w = tone(440.0, 1.0, 16000)
    same = dsp.resample(w, 16000)
    np.testing.assert_array_equal(same.samples, w.samples)
    down = dsp.resample(tone(440.0, 1.0, 48000), 16000)
    assert len(down) == 16000
    up = dsp.resample(w, 22050)
    assert len(up) == 22050


def test_resample_preserves_dc_exactly():
    """Per-output tap normalization gives exact unit DC gain away from the
    edges (boundary taps extend past the signal)."""
    w = dsp.Waveform(np.full(4800, 0.5), 48000)
    y = dsp.resample(w, 16000)
    np.testing.assert_allclose(y.samples[30:-30], 0.5, rtol=1e-12)


def test_resample_tone_fidelity():
    """A mid-band tone survives 48k -> 16k with high SNR in the interior."""
    w = tone(1000.0, 1.0, 48000)
    y = dsp.resample(w, 16000)
    t = np.arange(16000) / 16000
    ref = np.sin(2 * np.pi * 1000.0 * t)
    sl = slice(100, -100)  # skip boundary taps
    err = y.samples[sl] - ref[sl]
    snr = 10 * np.log10(np.mean(ref[sl] ** 2) / np.mean(err ** 2))
    assert snr > 40.0


def test_resample_attenuates_aliasing_band():
    """Content above the output Nyquist must drop by >= 40 dB after 3:1."""
    w = tone(9600.0, 1.0, 48000)  # 1.2x the 8 kHz output Nyquist
    y = dsp.resample(w, 16000)
    out_rms = np.sqrt(np.mean(y.samples[200:-200] ** 2))
    in_rms = np.sqrt(0.5)
    assert 20 * np.log10(out_rms / in_rms) < -40.0


def test_resample_empty_raises():
    with pytest.raises(EmptySignal):
        dsp.resample(dsp.Waveform(np.zeros(0), 16000), 8000)


# ---------------------------------------------------------------------------
# crop / pad
# ---------------------------------------------------------------------------

def test_crop_center_and_pad():
    w = dsp.Waveform(np.arange(10, dtype=float), 10)
    c = dsp.crop_or_pad(w, 0.4, mode="center")
    np.testing.assert_array_equal(c.samples, [3.0, 4.0, 5.0, 6.0])
    p = dsp.crop_or_pad(w, 1.2)
    np.testing.assert_array_equal(p.samples, np.r_[np.arange(10.0), 0.0, 0.0])
    exact = dsp.crop_or_pad(w, 1.0)
    np.testing.assert_array_equal(exact.samples, w.samples)


def test_random_crop_follows_splitmix_trace():
    w = dsp.Waveform(np.arange(100, dtype=float), 100)
    for seed in (0, 1, 12345):
        got = dsp.crop_or_pad(w, 0.3, mode="random", seed=seed)
        start = SplitMix64(seed).randint(100 - 30 + 1)
        np.testing.assert_array_equal(got.samples, w.samples[start : start + 30])


def test_random_crop_requires_seed():
    w = dsp.Waveform(np.arange(100, dtype=float), 100)
    with pytest.raises(ValueError):
        dsp.crop_or_pad(w, 0.3, mode="random")


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        dsp.SpectrogramConfig(n_fft=256, hop=0, n_mels=32, sample_rate=8000)
    with pytest.raises(ValueError):
        dsp.SpectrogramConfig(n_fft=256, hop=512, n_mels=32, sample_rate=8000)
    with pytest.raises(ValueError):
        dsp.SpectrogramConfig(n_fft=256, hop=64, n_mels=32, sample_rate=8000,
                              f_min=5000.0)
    cfg = dsp.SpectrogramConfig(n_fft=256, hop=64, n_mels=32, sample_rate=8000)
    assert cfg.f_max == 4000.0
    assert cfg.n_bins == 129
