"""Log-Mel filterbank features, context-window stacking and feature file I/O."""
from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, InputError, ShapeError

FEATURE_MAGIC = b"BGSE"
FEATURE_VERSION = 1


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise InputError("audio clip must be a non-empty 1-D signal")
        if self.sample_rate <= 0:
            raise InputError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class FeatureConfig:
    n_mels: int = 40
    frame_length: float = 25.0  # ms
    frame_shift: float = 10.0  # ms
    window: str = "hamming"
    log_floor: float = 1e-10
    context: int = 5
    n_fft: int = 512

    def __post_init__(self):
        if self.n_mels < 1:
            raise ConfigurationError("n_mels must be >= 1")
        if self.frame_shift <= 0 or self.frame_shift > self.frame_length:
            raise ConfigurationError("need 0 < frame_shift <= frame_length")
        if self.context < 0:
            raise ConfigurationError("context must be >= 0")
        if self.log_floor <= 0:
            raise ConfigurationError("log_floor must be > 0")
        if self.window not in _WINDOWS:
            raise ConfigurationError(f"unknown window {self.window!r}; choose from {sorted(_WINDOWS)}")

    def frame_samples(self, sample_rate: int) -> tuple[int, int]:
        return int(round(self.frame_length * sample_rate / 1000)), int(round(self.frame_shift * sample_rate / 1000))


_WINDOWS = {"hamming": np.hamming, "hann": np.hanning, "rect": np.ones}


@dataclass
class FeatureSequence:
    """A T x n_mels matrix of log-Mel energies for one utterance."""

    frames: np.ndarray
    utt_id: str = ""

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise InputError(f"feature sequence must be T x n_mels with T >= 1, got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise InputError("feature sequence contains non-finite values")
        self.frames = frames

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels: int, sample_rate: int) -> np.ndarray:
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
    return edges[1:-1]


def mel_filterbank_matrix(config: FeatureConfig, sample_rate: int = 16000, n_fft: int | None = None) -> np.ndarray:
    """Triangular filters on the HTK mel scale, shape (n_mels, n_fft // 2 + 1).

    Triangles are linear in mel with unit peak at each center; no area
    normalization is applied.
    """
    n_fft = config.n_fft if n_fft is None else n_fft
    frame_len, _ = config.frame_samples(sample_rate)
    if n_fft < frame_len or n_fft & (n_fft - 1):
        raise ConfigurationError(f"n_fft={n_fft} must be a power of two >= frame length ({frame_len} samples)")
    mel_edges = np.linspace(0.0, hz_to_mel(sample_rate / 2), config.n_mels + 2)
    bin_mels = hz_to_mel(np.arange(n_fft // 2 + 1) * sample_rate / n_fft)
    left, center, right = mel_edges[:-2, None], mel_edges[1:-1, None], mel_edges[2:, None]
    rising = (bin_mels[None, :] - left) / (center - left)
    falling = (right - bin_mels[None, :]) / (right - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(weights.max(axis=1) == 0)
    if empty.size:
        raise ConfigurationError(
            f"n_mels={config.n_mels} too large for n_fft={n_fft}: filters {empty.tolist()} cover no FFT bin")
    return weights


def frame_signal(samples: np.ndarray, frame_len: int, shift: int) -> np.ndarray:
    if samples.size < frame_len:
        raise InputError(f"clip of {samples.size} samples is shorter than one frame ({frame_len})")
    n = 1 + (samples.size - frame_len) // shift
    return np.lib.stride_tricks.sliding_window_view(samples, frame_len)[::shift][:n]


def power_spectrum(frames: np.ndarray, window: np.ndarray, n_fft: int) -> np.ndarray:
    return np.abs(np.fft.rfft(frames * window, n=n_fft, axis=-1)) ** 2


def compute_log_mel(clip: AudioClip, config: FeatureConfig = FeatureConfig(), utt_id: str = "") -> FeatureSequence:
    """Natural-log mel energies, floored at ``config.log_floor`` before the log.

    Computed in float64 and returned as float32, the dtype used by feature
    files and the networks.
    """
    frame_len, shift = config.frame_samples(clip.sample_rate)
    frames = frame_signal(clip.samples, frame_len, shift)
    window = _WINDOWS[config.window](frame_len)
    fbank = mel_filterbank_matrix(config, clip.sample_rate)
    energies = power_spectrum(frames, window, config.n_fft) @ fbank.T
    return FeatureSequence(np.log(np.maximum(energies, config.log_floor)).astype(np.float32), utt_id)


def stack_context_windows(seq: FeatureSequence | np.ndarray, context: int = 5) -> np.ndarray:
    """One (1, 2*context+1, n_mels) window per frame, edges replicated.

    Returns an array of shape (T, 1, 2*context+1, n_mels).
    """
    frames = seq.frames if isinstance(seq, FeatureSequence) else np.asarray(seq)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise InputError(f"expected T x n_mels frames, got shape {frames.shape}")
    if context < 0:
        raise ConfigurationError("context must be >= 0")
    padded = np.pad(frames, ((context, context), (0, 0)), mode="edge")
    idx = np.arange(frames.shape[0])[:, None] + np.arange(2 * context + 1)[None, :]
    return padded[idx][:, None, :, :]


def unstack_center_frames(windows: np.ndarray, utt_id: str = "") -> FeatureSequence:
    """Rebuild a sequence from the center row of each window."""
    windows = np.asarray(windows)
    if windows.ndim != 4 or windows.shape[0] < 1 or windows.shape[1] != 1 or windows.shape[2] % 2 != 1:
        raise ShapeError(f"expected (T, 1, 2*context+1, n_mels) windows, got shape {windows.shape}")
    return FeatureSequence(windows[:, 0, windows.shape[2] // 2, :].copy(), utt_id)


@dataclass(frozen=True)
class FeatureNormalizer:
    """Per-bin affine standardization with statistics shared by a whole training corpus.

    Unlike per-utterance normalization this keeps level differences between
    utterances, which is what additive noise changes.
    """

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float32)
        scale = np.asarray(self.scale, dtype=np.float32)
        if mean.ndim != 1 or mean.shape != scale.shape:
            raise ShapeError(f"mean and scale must be equal-length vectors, got {mean.shape} and {scale.shape}")
        if not np.all(scale > 0) or not np.all(np.isfinite(mean)):
            raise ConfigurationError("normalizer scale must be positive and mean finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)

    @classmethod
    def fit(cls, frames: np.ndarray, min_scale: float = 1e-3) -> "FeatureNormalizer":
        """Statistics over every row of ``frames`` (..., n_mels)."""
        rows = np.asarray(frames, dtype=np.float64)
        rows = rows.reshape(-1, rows.shape[-1])
        if rows.shape[0] == 0:
            raise InputError("cannot fit a normalizer on no frames")
        return cls(rows.mean(axis=0), np.maximum(rows.std(axis=0), min_scale))

    @property
    def n_mels(self) -> int:
        return self.mean.shape[0]

    def transform(self, x: np.ndarray) -> np.ndarray:
        return ((np.asarray(x, dtype=np.float32) - self.mean) / self.scale).astype(np.float32)

    def inverse_transform(self, z: np.ndarray) -> np.ndarray:
        return (np.asarray(z, dtype=np.float32) * self.scale + self.mean).astype(np.float32)


# ---------------------------------------------------------------------------
# file formats

def write_features(path, seq: FeatureSequence | np.ndarray) -> None:
    """Write the little-endian BGSE container: magic, version, T, n_mels, float32 payload."""
    frames = seq.frames if isinstance(seq, FeatureSequence) else np.asarray(seq)
    t, n = frames.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC + struct.pack("<III", FEATURE_VERSION, t, n))
        fh.write(np.ascontiguousarray(frames, dtype="<f4").tobytes())


def read_features(path, utt_id: str | None = None) -> FeatureSequence:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != FEATURE_MAGIC:
        raise InputError(f"{path}: not a BGSE feature file")
    version, t, n = struct.unpack("<III", blob[4:16])
    if version != FEATURE_VERSION:
        raise InputError(f"{path}: unsupported feature file version {version}")
    payload = blob[16:]
    if len(payload) != 4 * t * n:
        raise InputError(f"{path}: payload holds {len(payload)} bytes, header promises {4 * t * n}")
    frames = np.frombuffer(payload, dtype="<f4").reshape(t, n).astype(np.float32)
    return FeatureSequence(frames, Path(path).stem if utt_id is None else utt_id)


def read_wav(path) -> AudioClip:
    """Read 16-bit PCM mono WAV into [-1, 1) floats."""
    with wave.open(str(path), "rb") as wf:
        if wf.getsampwidth() != 2 or wf.getnchannels() != 1:
            raise InputError(f"{path}: only 16-bit mono PCM WAV is supported")
        rate = wf.getframerate()
        raw = wf.readframes(wf.getnframes())
    return AudioClip(np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0, rate)


def write_wav(path, clip: AudioClip) -> None:
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(pcm.tobytes())
