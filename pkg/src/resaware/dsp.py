"""Signal preprocessing and multi-resolution log-mel feature extraction.

Everything in this module is a pure function of its inputs: same waveform in,
bitwise-identical features out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigMismatch, DegenerateFilterbank, EmptySignal
from .prng import SplitMix64

# Resampler: Kaiser-windowed sinc, 16 taps per polyphase branch, beta = 8.
# The cutoff is pulled in to 0.8x the output Nyquist so the short kernel
# still reaches the stop band by 1.2x Nyquist.
RESAMPLE_TAPS_PER_BRANCH = 16
RESAMPLE_KAISER_BETA = 8.0
RESAMPLE_ROLLOFF = 0.8

LOG_EPS_DEFAULT = 1e-6


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class SpectrogramConfig:
    n_fft: int
    hop: int
    n_mels: int
    sample_rate: int
    f_min: float = 0.0
    f_max: float | None = None  # defaults to Nyquist
    log_eps: float = LOG_EPS_DEFAULT

    def __post_init__(self):
        f_max = self.f_max if self.f_max is not None else self.sample_rate / 2
        object.__setattr__(self, "f_max", f_max)
        if not (0 < self.hop <= self.n_fft):
            raise ValueError("need 0 < hop <= n_fft")
        if not (0 <= self.f_min < f_max <= self.sample_rate / 2):
            raise ValueError("need 0 <= f_min < f_max <= Nyquist")
        if self.n_mels < 2:
            raise ValueError("need n_mels >= 2")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1


@dataclass
class MelFilterbank:
    weights: np.ndarray  # n_mels x (n_fft/2 + 1), non-negative
    center_freqs: np.ndarray  # Hz, strictly increasing


@dataclass
class MelSpectrogram:
    values: np.ndarray  # n_mels x n_frames, log power
    config: SpectrogramConfig
    resolution_index: int = 0  # k in {1, 2, 3} for the canonical set


# The three canonical STFT configurations (fine, medium, coarse) at 16 kHz.
CANONICAL_CONFIGS = (
    SpectrogramConfig(n_fft=400, hop=160, n_mels=64, sample_rate=16000),
    SpectrogramConfig(n_fft=1024, hop=256, n_mels=128, sample_rate=16000),
    SpectrogramConfig(n_fft=2048, hop=512, n_mels=128, sample_rate=16000),
)
TARGET_SAMPLE_RATE = 16000


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Anti-aliased sample-rate conversion via windowed-sinc interpolation."""
    if len(w) == 0:
        raise EmptySignal("cannot resample an empty waveform")
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == w.sample_rate:
        return Waveform(w.samples.copy(), w.sample_rate)

    x = w.samples
    ratio = target_rate / w.sample_rate
    n_out = int(round(len(x) * ratio))

    # Cutoff in cycles per *input* sample; sinc zeros every 1/(2*c0) samples.
    c0 = 0.5 * min(1.0, ratio)
    cutoff = RESAMPLE_ROLLOFF * c0
    half_width = (RESAMPLE_TAPS_PER_BRANCH / 2) / (2.0 * c0)

    t = np.arange(n_out, dtype=np.float64) * (w.sample_rate / target_rate)
    n_taps = int(2 * half_width) + 2
    k0 = np.ceil(t - half_width).astype(np.int64)
    k = k0[:, None] + np.arange(n_taps)[None, :]
    dt = k - t[:, None]

    in_support = np.abs(dt) <= half_width
    arg = np.clip(dt / half_width, -1.0, 1.0)
    window = np.i0(RESAMPLE_KAISER_BETA * np.sqrt(1.0 - arg * arg))
    taps = np.sinc(2.0 * cutoff * dt) * window * in_support

    # Unit DC gain: each output sample's taps sum to one.
    taps /= taps.sum(axis=1, keepdims=True)

    in_signal = (k >= 0) & (k < len(x))
    gathered = x[np.clip(k, 0, len(x) - 1)] * in_signal
    y = np.sum(gathered * taps, axis=1)
    return Waveform(y, target_rate)


def crop_or_pad(w: Waveform, duration_s: float, mode: str = "center",
                seed: int | None = None) -> Waveform:
    """Cut or zero-pad a waveform to an exact duration.

    mode "random" draws the start index as SplitMix64(seed) % valid_range;
    mode "center" uses floor((len - target) / 2).
    """
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    target = int(round(duration_s * w.sample_rate))
    x = w.samples
    if len(x) == target:
        return Waveform(x.copy(), w.sample_rate)
    if len(x) < target:
        out = np.zeros(target, dtype=np.float64)
        out[: len(x)] = x
        return Waveform(out, w.sample_rate)
    valid = len(x) - target + 1
    if mode == "random":
        if seed is None:
            raise ValueError("random crop requires a seed")
        start = SplitMix64(seed).randint(valid)
    elif mode == "center":
        start = (len(x) - target) // 2
    else:
        raise ValueError(f"unknown crop mode: {mode!r}")
    return Waveform(x[start : start + target].copy(), w.sample_rate)


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_power(w: Waveform, cfg: SpectrogramConfig) -> np.ndarray:
    """Power spectrogram, (n_fft/2 + 1) x n_frames.

    Center framing with reflect padding of n_fft/2 on each side, so
    n_frames = 1 + floor(len / hop).
    """
    if w.sample_rate != cfg.sample_rate:
        raise ConfigMismatch(
            f"waveform rate {w.sample_rate} != config rate {cfg.sample_rate}")
    x = w.samples
    pad = cfg.n_fft // 2
    # Reflect padding needs len > pad; very short signals fall back to zeros.
    padded = np.pad(x, pad, mode="reflect") if len(x) > pad else np.pad(x, pad)
    n_frames = 1 + len(x) // cfg.hop
    frames = np.lib.stride_tricks.sliding_window_view(padded, cfg.n_fft)
    frames = frames[:: cfg.hop][:n_frames]
    spec = np.fft.rfft(frames * hann_window(cfg.n_fft)[None, :], axis=1)
    return (spec.real ** 2 + spec.imag ** 2).T


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def build_mel_filterbank(cfg: SpectrogramConfig) -> MelFilterbank:
    """Triangular filters equally spaced on the HTK mel scale, unnormalized."""
    mel_pts = np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max), cfg.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_freqs = np.arange(cfg.n_bins) * cfg.sample_rate / cfg.n_fft

    lower, center, upper = hz_pts[:-2], hz_pts[1:-1], hz_pts[2:]
    f = bin_freqs[None, :]
    rise = (f - lower[:, None]) / (center - lower)[:, None]
    fall = (upper[:, None] - f) / (upper - center)[:, None]
    weights = np.maximum(0.0, np.minimum(rise, fall))

    if np.any(weights.sum(axis=1) == 0.0):
        raise DegenerateFilterbank(
            f"{cfg.n_mels} mel filters over {cfg.n_bins} FFT bins leaves empty rows")
    return MelFilterbank(weights=weights, center_freqs=center)


def log_mel(power: np.ndarray, fb: MelFilterbank,
            log_eps: float = LOG_EPS_DEFAULT) -> np.ndarray:
    """ln(filterbank @ power + eps), elementwise."""
    if power.shape[0] != fb.weights.shape[1]:
        raise ConfigMismatch(
            f"power has {power.shape[0]} bins, filterbank expects {fb.weights.shape[1]}")
    return np.log(fb.weights @ power + log_eps)


def mel_spectrogram(w: Waveform, cfg: SpectrogramConfig,
                    resolution_index: int = 0) -> MelSpectrogram:
    fb = build_mel_filterbank(cfg)
    values = log_mel(stft_power(w, cfg), fb, cfg.log_eps)
    return MelSpectrogram(values=values, config=cfg, resolution_index=resolution_index)


def multi_resolution_features(w: Waveform) -> list[MelSpectrogram]:
    """The three canonical log-mel views (fine, medium, coarse) of one waveform."""
    if w.sample_rate != TARGET_SAMPLE_RATE:
        raise ConfigMismatch(f"expected {TARGET_SAMPLE_RATE} Hz input, got {w.sample_rate}")
    return [mel_spectrogram(w, cfg, k + 1) for k, cfg in enumerate(CANONICAL_CONFIGS)]
