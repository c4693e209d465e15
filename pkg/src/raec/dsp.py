"""Log filter-bank energy (LFBE) front end and WAV / feature-file I/O."""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile


class DspError(ValueError):
    pass


class SignalTooShortError(DspError):
    pass


class MelConfigError(DspError):
    pass


class AmplitudeWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1 or x.size < 1:
            raise DspError(f"waveform must be a non-empty 1-D sequence, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DspError("waveform contains non-finite samples")
        if int(self.sample_rate) <= 0 or int(self.sample_rate) != self.sample_rate:
            raise DspError(f"sample_rate must be a positive integer, got {self.sample_rate!r}")
        if np.max(np.abs(x)) > 1.0:
            warnings.warn("waveform amplitude exceeds [-1, 1]; no clipping applied", AmplitudeWarning, stacklevel=3)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class FrontendConfig:
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 64
    energy_floor: float = 1e-10

    def frame_samples(self, sample_rate: int) -> int:
        return int(round(self.frame_ms * sample_rate / 1000.0))

    def hop_samples(self, sample_rate: int) -> int:
        return int(round(self.hop_ms * sample_rate / 1000.0))


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    values: np.ndarray  # (T, F)
    frame_length_ms: float
    hop_ms: float
    n_mels: int

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class MelBank:
    weights: np.ndarray  # (B, K)
    edges_hz: np.ndarray  # (B + 2,) lower edge, centers..., upper edge
    sample_rate: int
    fft_size: int

    @property
    def center_hz(self) -> np.ndarray:
        return self.edges_hz[1:-1]

    @property
    def n_mels(self) -> int:
        return self.weights.shape[0]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def num_frames(n_samples: int, frame: int, hop: int) -> int:
    if n_samples < frame:
        return 0
    return (n_samples - frame) // hop + 1


def frame_signal(wave: Waveform, frame_ms: float, hop_ms: float) -> np.ndarray:
    """Slice into overlapping frames; the trailing partial frame is dropped.

    Returns a read-only ``(T, frame_samples)`` view.
    """
    if not frame_ms >= hop_ms > 0:
        raise DspError(f"need frame_ms >= hop_ms > 0, got frame_ms={frame_ms}, hop_ms={hop_ms}")
    sr = wave.sample_rate
    frame = int(round(frame_ms * sr / 1000.0))
    hop = int(round(hop_ms * sr / 1000.0))
    if hop < 1:
        raise DspError(f"hop of {hop_ms} ms is shorter than one sample at {sr} Hz")
    if len(wave) < frame:
        raise SignalTooShortError(
            f"waveform too short: {len(wave)} samples < one frame of {frame} samples"
        )
    windows = np.lib.stride_tricks.sliding_window_view(wave.samples, frame)
    return windows[::hop]


def hann(n: int) -> np.ndarray:
    # periodic form: a bin-centred sinusoid leaks into exactly three bins
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def power_spectrum(frame, fft_size: int | None = None, frame_index: int | None = None) -> np.ndarray:
    """Squared DFT magnitudes of a Hann-windowed, zero-padded frame (bins 0..fft_size/2)."""
    x = np.asarray(frame, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise DspError("frame must be a non-empty 1-D vector")
    if not np.all(np.isfinite(x)):
        where = "" if frame_index is None else f" in frame {frame_index}"
        raise DspError(f"non-finite sample{where}")
    n_fft = next_pow2(x.size) if fft_size is None else fft_size
    spec = np.fft.rfft(x * hann(x.size), n=n_fft)
    return spec.real**2 + spec.imag**2


def mel_bank(n_mels: int, sample_rate: int, fft_size: int) -> MelBank:
    """Triangular HTK-mel filters spanning 0 Hz to Nyquist, peak weight 1."""
    if n_mels < 1:
        raise MelConfigError(f"n_mels must be >= 1, got {n_mels}")
    if fft_size < 2 or fft_size & (fft_size - 1):
        raise MelConfigError(f"fft_size must be a power of two, got {fft_size}")
    n_bins = fft_size // 2 + 1
    if n_mels > n_bins - 2:
        raise MelConfigError(f"{n_mels} mel bands exceed the {n_bins} available spectral bins")
    mel_edges = np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2)
    edges = mel_to_hz(mel_edges)
    edges[0] = 0.0
    edges[-1] = sample_rate / 2.0
    freqs = np.arange(n_bins) * sample_rate / fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(~(weights > 0).any(axis=1))
    if empty.size:
        raise MelConfigError(
            f"mel band(s) {empty.tolist()} cover no spectral bin "
            f"(n_mels={n_mels}, sample_rate={sample_rate}, fft_size={fft_size})"
        )
    return MelBank(weights=weights, edges_hz=edges, sample_rate=int(sample_rate), fft_size=int(fft_size))


_BANK_CACHE: dict[tuple[int, int, int], MelBank] = {}


def cached_mel_bank(n_mels: int, sample_rate: int, fft_size: int) -> MelBank:
    key = (n_mels, sample_rate, fft_size)
    bank = _BANK_CACHE.get(key)
    if bank is None:
        bank = _BANK_CACHE[key] = mel_bank(n_mels, sample_rate, fft_size)
    return bank


def compute_lfbe(wave: Waveform, config: FrontendConfig = FrontendConfig()) -> FeatureMatrix:
    frames = frame_signal(wave, config.frame_ms, config.hop_ms)
    n_fft = next_pow2(frames.shape[1])
    bank = cached_mel_bank(config.n_mels, wave.sample_rate, n_fft)
    spec = np.fft.rfft(frames * hann(frames.shape[1]), n=n_fft, axis=1)
    power = spec.real**2 + spec.imag**2
    energy = power @ bank.weights.T
    values = np.log(np.maximum(energy, config.energy_floor))
    return FeatureMatrix(values=values, frame_length_ms=config.frame_ms, hop_ms=config.hop_ms, n_mels=config.n_mels)


# -- WAV I/O -----------------------------------------------------------------


def read_wav(path) -> Waveform:
    """Read a mono 16-bit PCM or 32-bit float WAV file."""
    sr, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise DspError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise DspError(f"{path}: unsupported sample format {data.dtype} (need PCM16 or float32)")
    return Waveform(x, sr)


def write_wav(path, wave: Waveform, pcm16: bool = False) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if pcm16:
        data = np.clip(np.round(wave.samples * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = wave.samples.astype(np.float32)
    wavfile.write(str(path), wave.sample_rate, data)


# -- binary feature export ---------------------------------------------------

FEATURE_MAGIC = b"LFBE"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sHII")


def write_features(path, feats: FeatureMatrix | np.ndarray) -> None:
    values = feats.values if isinstance(feats, FeatureMatrix) else np.asarray(feats)
    if values.ndim != 2:
        raise DspError(f"feature matrix must be 2-D, got shape {values.shape}")
    T, F = values.shape
    with open(path, "wb") as fh:
        fh.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, T, F))
        fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_features(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _FEATURE_HEADER.size:
        raise DspError(f"{path}: truncated feature file")
    magic, version, T, F = _FEATURE_HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise DspError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise DspError(f"{path}: unsupported feature format version {version}")
    body = raw[_FEATURE_HEADER.size :]
    if len(body) != 4 * T * F:
        raise DspError(f"{path}: expected {4 * T * F} payload bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(T, F).astype(np.float64)
