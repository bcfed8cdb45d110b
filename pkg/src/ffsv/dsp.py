"""STFT analysis/synthesis, MFCC features and energy VAD."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct

from .audio_io import MultichannelWaveform

FEATURE_MAGIC = b"FFSV"


def make_window(kind: str, length: int) -> np.ndarray:
    n = np.arange(length)
    if kind == "hann":
        return 0.5 - 0.5 * np.cos(2 * np.pi * n / length)
    if kind == "hamming":
        return 0.54 - 0.46 * np.cos(2 * np.pi * n / length)
    raise ValueError(f"unknown window {kind!r}")


@dataclass(frozen=True)
class StftConfig:
    window_length: int = 512
    hop_length: int = 128
    window: str = "hann"
    fft_size: int = 512

    def __post_init__(self):
        if self.hop_length <= 0 or self.hop_length > self.window_length:
            raise ValueError("need 0 < hop_length <= window_length")
        if self.fft_size < self.window_length or self.fft_size & (self.fft_size - 1):
            raise ValueError("fft_size must be a power of two >= window_length")
        make_window(self.window, 1)

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    def window_array(self) -> np.ndarray:
        return make_window(self.window, self.window_length)

    def is_cola(self, tol: float = 1e-8) -> bool:
        w = self.window_array()
        acc = np.zeros(self.hop_length)
        for start in range(0, self.window_length, self.hop_length):
            seg = w[start:start + self.hop_length]
            acc[: len(seg)] += seg
        return bool(np.ptp(acc) <= tol * np.max(acc))


@dataclass
class ComplexSpectrogram:
    data: np.ndarray  # (channels, F, T) complex
    config: StftConfig
    sample_rate: int
    num_samples: int | None = None  # original signal length, if known

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 3 or self.data.shape[1] != self.config.num_bins:
            raise ValueError(
                f"spectrogram must be (channels, {self.config.num_bins}, T), got {self.data.shape}")

    @property
    def num_channels(self) -> int:
        return self.data.shape[0]

    @property
    def num_frames(self) -> int:
        return self.data.shape[2]

    def with_data(self, data: np.ndarray) -> "ComplexSpectrogram":
        return ComplexSpectrogram(data, self.config, self.sample_rate, self.num_samples)


def frame_signal(x: np.ndarray, length: int, hop: int) -> np.ndarray:
    """Frames of ``x`` along the last axis: (..., T, length), no padding."""
    n = x.shape[-1]
    if n < length:
        raise ValueError(f"signal of {n} samples is shorter than one frame ({length})")
    num = 1 + (n - length) // hop
    idx = np.arange(length)[None, :] + hop * np.arange(num)[:, None]
    return x[..., idx]


def stft(w: MultichannelWaveform, cfg: StftConfig) -> ComplexSpectrogram:
    frames = frame_signal(w.samples, cfg.window_length, cfg.hop_length) * cfg.window_array()
    spec = np.fft.rfft(frames, n=cfg.fft_size, axis=-1)  # (C, T, F)
    return ComplexSpectrogram(spec.transpose(0, 2, 1), cfg, w.sample_rate, w.num_samples)


def istft(s: ComplexSpectrogram, length: int | None = None) -> MultichannelWaveform:
    """Weighted overlap-add synthesis, normalised by the summed squared window."""
    cfg = s.config
    if not cfg.is_cola():
        raise ValueError(f"window {cfg.window!r} with hop {cfg.hop_length} is not COLA")
    win = cfg.window_array()
    frames = np.fft.irfft(s.data.transpose(0, 2, 1), n=cfg.fft_size, axis=-1)[..., : cfg.window_length]
    frames = frames * win
    num = s.num_frames
    out_len = (num - 1) * cfg.hop_length + cfg.window_length
    out = np.zeros((s.num_channels, out_len))
    norm = np.zeros(out_len)
    for t in range(num):
        start = t * cfg.hop_length
        out[:, start:start + cfg.window_length] += frames[:, t]
        norm[start:start + cfg.window_length] += win ** 2
    ok = norm > 1e-3 * norm.max()
    out[:, ok] /= norm[ok]
    out[:, ~ok] = 0.0
    if length is None:
        length = s.num_samples if s.num_samples is not None else out_len
    if length > out_len:
        out = np.pad(out, ((0, 0), (0, length - out_len)))
    return MultichannelWaveform(out[:, :length], s.sample_rate)


@dataclass(frozen=True)
class MfccConfig:
    frame_length_ms: float = 25.0
    frame_shift_ms: float = 10.0
    preemphasis: float = 0.97
    num_filters: int = 30
    num_ceps: int = 30
    low_freq: float = 20.0
    high_freq_offset: float = 100.0  # upper mel edge = Nyquist - offset
    log_floor: float = 1e-10
    window: str = "hamming"

    def frame_params(self, sample_rate: int) -> tuple[int, int, int]:
        length = int(round(sample_rate * self.frame_length_ms / 1000))
        hop = int(round(sample_rate * self.frame_shift_ms / 1000))
        nfft = 1 << (length - 1).bit_length()
        return length, hop, nfft


@dataclass(frozen=True)
class VadConfig:
    offset: float = -1.0
    energy_floor: float = 1e-10
    mfcc: MfccConfig = field(default_factory=MfccConfig)


def hz_to_mel(f):
    return 1127.0 * np.log1p(np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * np.expm1(np.asarray(m, dtype=np.float64) / 1127.0)


def mel_filterbank(num_filters: int, nfft: int, sample_rate: int, low: float, high: float) -> np.ndarray:
    """Triangular filters on the mel scale, shape (num_filters, nfft // 2 + 1)."""
    edges = mel_to_hz(np.linspace(hz_to_mel(low), hz_to_mel(high), num_filters + 2))
    freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    left, centre, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - left) / (centre - left)
    down = (right - freqs) / (right - centre)
    return np.maximum(0.0, np.minimum(up, down))


def _require_mono(w: MultichannelWaveform):
    if w.num_channels != 1:
        raise ValueError(f"expected mono input, got {w.num_channels} channels")


def mfcc(w: MultichannelWaveform, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    """MFCC matrix of shape (frames, num_ceps)."""
    _require_mono(w)
    if w.sample_rate < 8000:
        raise ValueError("sample rate must be at least 8 kHz")
    length, hop, nfft = cfg.frame_params(w.sample_rate)
    x = w.samples[0]
    x = np.concatenate([x[:1], x[1:] - cfg.preemphasis * x[:-1]])
    frames = frame_signal(x, length, hop) * make_window(cfg.window, length)
    power = np.abs(np.fft.rfft(frames, n=nfft, axis=-1)) ** 2
    fbank = mel_filterbank(cfg.num_filters, nfft, w.sample_rate, cfg.low_freq,
                           w.sample_rate / 2 - cfg.high_freq_offset)
    logmel = np.log(np.maximum(power @ fbank.T, cfg.log_floor))
    return dct(logmel, type=2, norm="ortho", axis=-1)[:, : cfg.num_ceps]


def frame_log_energy(w: MultichannelWaveform, cfg: VadConfig = VadConfig()) -> np.ndarray:
    _require_mono(w)
    length, hop, _ = cfg.mfcc.frame_params(w.sample_rate)
    frames = frame_signal(w.samples[0], length, hop)
    return np.log(np.maximum(np.sum(frames ** 2, axis=-1), cfg.energy_floor))


def energy_vad(w: MultichannelWaveform, cfg: VadConfig = VadConfig()) -> np.ndarray:
    """Boolean speech mask; frames at or above (mean log-energy + offset) are speech."""
    if w.num_samples == 0:
        raise ValueError("empty input")
    energy = frame_log_energy(w, cfg)
    # centre on the first frame so that uniform energies give an exact tie
    rel = energy - energy[0]
    return rel >= rel.mean() + cfg.offset


class NoSpeechError(ValueError):
    pass


def apply_vad(features: np.ndarray, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if len(mask) != len(features):
        raise ValueError(f"mask has {len(mask)} frames, features have {len(features)}")
    if not mask.any():
        raise NoSpeechError("no speech frames detected")
    return features[mask]


def save_features(path, features: np.ndarray) -> None:
    feats = np.ascontiguousarray(features, dtype="<f4")
    rows, cols = feats.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC + struct.pack("<II", rows, cols))
        fh.write(feats.tobytes())


def load_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != FEATURE_MAGIC:
        raise ValueError(f"{path}: bad feature file magic")
    rows, cols = struct.unpack_from("<II", data, 4)
    expected = 12 + rows * cols * 4
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(rows, cols).astype(np.float64)
