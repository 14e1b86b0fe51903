"""Corpus ingestion, manifests, speaker-disjoint splitting, and the synthetic
bona-fide/spoof generator with a simulated re-record channel.

The synthetic corpus gives every "speaker" a fixed fundamental. Bona fide
utterances are an 8-harmonic stack (amplitudes 1/h) with slow vibrato plus a
low noise floor. Spoof utterances share the stack but quantize the harmonic
amplitudes to 4 levels and repeat the head of every 50 ms frame into its
tail, mimicking vocoder-style periodicity artifacts; the fine and coarse
spectrogram views then carry complementary cues.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .dsp import Waveform
from .errors import CorruptFile, DataError, UnsupportedFormat
from .prng import SplitMix64, combine_seed

LABEL_BONA_FIDE = 0
LABEL_SPOOF = 1
SPLITS = ("train", "dev", "test")

MANIFEST_HEADER = ["path", "label", "speaker_id", "dataset_id", "split"]


@dataclass
class ManifestEntry:
    path: str
    label: int
    speaker_id: str
    dataset_id: int = 0
    split: str = ""


# ---------------------------------------------------------------------------
# WAV I/O (RIFF PCM16 only)
# ---------------------------------------------------------------------------

def load_wav(path) -> Waveform:
    """Read a RIFF/WAVE PCM 16-bit file; stereo is averaged to mono and
    samples are scaled to [-1, 1] by 1/32768."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise UnsupportedFormat(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(blob):
        cid = blob[pos : pos + 4]
        (size,) = struct.unpack("<I", blob[pos + 4 : pos + 8])
        body = blob[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise CorruptFile(f"{path}: short fmt chunk")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif cid == b"data":
            if len(body) < size:
                raise CorruptFile(f"{path}: truncated data chunk "
                                  f"({len(body)} of {size} bytes)")
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or data is None:
        raise CorruptFile(f"{path}: missing fmt or data chunk")
    audio_format, channels, rate, _, _, bits = fmt
    if audio_format != 1 or bits != 16:
        raise UnsupportedFormat(
            f"{path}: only PCM 16-bit supported (format={audio_format}, bits={bits})")
    if channels < 1:
        raise CorruptFile(f"{path}: zero channels")
    samples = np.frombuffer(data[: len(data) // (2 * channels) * 2 * channels],
                            dtype="<i2").astype(np.float64) / 32768.0
    if channels > 1:
        samples = samples.reshape(-1, channels).mean(axis=1)
    return Waveform(samples, rate)


def write_wav(path, w: Waveform):
    """Write mono PCM 16-bit; values are clipped to [-1, 1) and rounded."""
    x = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    data = x.tobytes()
    with open(path, "wb") as fh:
        fh.write(b"RIFF")
        fh.write(struct.pack("<I", 36 + len(data)))
        fh.write(b"WAVEfmt ")
        fh.write(struct.pack("<IHHIIHH", 16, 1, 1, w.sample_rate,
                             w.sample_rate * 2, 2, 16))
        fh.write(b"data")
        fh.write(struct.pack("<I", len(data)))
        fh.write(data)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def write_manifest(path, entries: list[ManifestEntry]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for e in entries:
            writer.writerow([e.path, e.label, e.speaker_id, e.dataset_id, e.split])


def read_manifest(path) -> list[ManifestEntry]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise DataError(f"{path}: expected header {','.join(MANIFEST_HEADER)}")
        entries = []
        for row in reader:
            if len(row) != 5:
                raise DataError(f"{path}: malformed row {row!r}")
            entries.append(ManifestEntry(path=row[0], label=int(row[1]),
                                         speaker_id=row[2], dataset_id=int(row[3]),
                                         split=row[4]))
    return entries


# ---------------------------------------------------------------------------
# Speaker-disjoint splitting
# ---------------------------------------------------------------------------

def speaker_disjoint_split(entries: list[ManifestEntry],
                           ratios: tuple = (0.6, 0.2, 0.2),
                           seed: int = 0) -> list[ManifestEntry]:
    """Assign splits so that no speaker appears in more than one of them.

    Speakers are sorted, shuffled with SplitMix64(seed) Fisher-Yates, and
    partitioned by speaker count: floor(ratio * S) each plus largest-remainder
    rounding; empty splits steal one speaker from the largest split.
    """
    speakers = sorted({e.speaker_id for e in entries})
    if len(speakers) < 3:
        raise DataError(f"need at least 3 distinct speakers, got {len(speakers)}")
    SplitMix64(seed).shuffle(speakers)

    s = len(speakers)
    counts = [int(r * s) for r in ratios]
    frac = [r * s - c for r, c in zip(ratios, counts)]
    for _ in range(s - sum(counts)):
        i = int(np.argmax(frac))
        counts[i] += 1
        frac[i] = -1.0
    for i, r in enumerate(ratios):
        if r > 0 and counts[i] == 0:
            j = int(np.argmax(counts))
            counts[j] -= 1
            counts[i] += 1

    assignment = {}
    pos = 0
    for split, c in zip(SPLITS, counts):
        for sp in speakers[pos : pos + c]:
            assignment[sp] = split
        pos += c
    return [ManifestEntry(e.path, e.label, e.speaker_id, e.dataset_id,
                          assignment[e.speaker_id]) for e in entries]


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------

@dataclass
class SynthSpec:
    n_per_class: int
    seed: int = 0
    duration_s: float = 2.0
    sample_rate: int = 16000
    n_speakers: int = 10
    rerecord: bool = False

    def __post_init__(self):
        if self.n_speakers < 3:
            raise DataError("need n_speakers >= 3 for disjoint splits")
        if self.n_per_class < 1:
            raise DataError("n_per_class must be positive")


N_HARMONICS = 8
VIBRATO_HZ = 5.0
VIBRATO_DEPTH = 0.02
NOISE_DB = -30.0
QUANT_LEVELS = 4
FRAME_MS = 50
REPEAT_MS = 10
PEAK = 0.9


def _harmonic_stack(f0: float, amps: np.ndarray, phases: np.ndarray,
                    n: int, sr: int) -> np.ndarray:
    t = np.arange(n) / sr
    inst_f = f0 * (1.0 + VIBRATO_DEPTH * np.sin(2.0 * np.pi * VIBRATO_HZ * t))
    phase = 2.0 * np.pi * np.cumsum(inst_f) / sr
    x = np.zeros(n)
    for h in range(1, N_HARMONICS + 1):
        x += amps[h - 1] * np.sin(h * phase + phases[h - 1])
    return x


def _quantize_amps(amps: np.ndarray) -> np.ndarray:
    q = np.round(amps * QUANT_LEVELS) / QUANT_LEVELS
    return np.maximum(q, 1.0 / QUANT_LEVELS)


def _repeat_frames(x: np.ndarray, sr: int) -> np.ndarray:
    frame = int(sr * FRAME_MS / 1000)
    rep = int(sr * REPEAT_MS / 1000)
    y = x.copy()
    for start in range(0, len(x) - frame + 1, frame):
        y[start + frame - rep : start + frame] = y[start : start + rep]
    return y


def _peak_normalize(x: np.ndarray, peak: float = PEAK) -> np.ndarray:
    m = np.abs(x).max()
    return x * (peak / m) if m > 0 else x


def generate_synthetic_corpus(spec: SynthSpec, out_dir=None):
    """Build the desk-scale corpus; returns (entries, waveforms).

    With out_dir set, WAV files and a manifest.csv are written and entry
    paths point at the files; otherwise paths are synthetic identifiers.
    """
    rng = np.random.default_rng(spec.seed)
    n = int(round(spec.duration_s * spec.sample_rate))
    f0s = rng.uniform(100.0, 250.0, size=spec.n_speakers)
    noise_scale = 10.0 ** (NOISE_DB / 20.0)

    entries, waveforms = [], []
    for label, tag in ((LABEL_BONA_FIDE, "bona"), (LABEL_SPOOF, "spoof")):
        for i in range(spec.n_per_class):
            speaker = i % spec.n_speakers
            amps = 1.0 / np.arange(1, N_HARMONICS + 1)
            if label == LABEL_SPOOF:
                amps = _quantize_amps(amps)
            phases = rng.uniform(0.0, 2.0 * np.pi, size=N_HARMONICS)
            x = _harmonic_stack(f0s[speaker], amps, phases, n, spec.sample_rate)
            if label == LABEL_SPOOF:
                x = _repeat_frames(x, spec.sample_rate)
            x += noise_scale * rng.standard_normal(n)
            x = _peak_normalize(x)
            name = f"{tag}_{i:05d}.wav"
            entries.append(ManifestEntry(path=name, label=label,
                                         speaker_id=f"s{speaker}"))
            waveforms.append(Waveform(x, spec.sample_rate))

    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "wavs").mkdir(parents=True, exist_ok=True)
        for e, w in zip(entries, waveforms):
            write_wav(out_dir / "wavs" / e.path, w)
            e.path = str(Path("wavs") / e.path)
        write_manifest(out_dir / "manifest.csv", entries)
    return entries, waveforms


# ---------------------------------------------------------------------------
# Re-record channel simulation
# ---------------------------------------------------------------------------

REREC_IR_TAPS = 5
REREC_BAND_HZ = (300.0, 3400.0)
REREC_SNR_DB = 20.0


def _min_phase_ir(seed: int) -> np.ndarray:
    """Random 5-tap minimum-phase FIR: four real zeros inside the unit circle."""
    rng = np.random.default_rng(seed)
    zeros = rng.uniform(-0.9, 0.9, size=REREC_IR_TAPS - 1)
    taps = np.poly(zeros)
    return taps / np.abs(taps).sum()


def simulate_rerecord(w: Waveform, seed: int = 0) -> Waveform:
    """Playback/re-record channel: random minimum-phase coloration, telephone
    band-pass (Butterworth, cascaded second-order sections), additive noise at
    20 dB SNR, peak renormalized to 0.9.

    The noise floor is referenced to the signal level entering the channel so
    out-of-band content stays attenuated after renormalization.
    """
    x = np.convolve(w.samples, _min_phase_ir(seed))[: len(w.samples)]
    ref_rms = np.sqrt(np.mean(x * x))
    sos = sps.butter(8, REREC_BAND_HZ, btype="bandpass", fs=w.sample_rate,
                     output="sos")
    x = sps.sosfilt(sos, x)
    noise_rms = ref_rms * 10.0 ** (-REREC_SNR_DB / 20.0)
    x = x + noise_rms * np.random.default_rng(combine_seed(seed, 1)).standard_normal(len(x))
    return Waveform(_peak_normalize(x), w.sample_rate)
