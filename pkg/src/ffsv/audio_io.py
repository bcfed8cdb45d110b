"""Multichannel waveform container and RIFF/WAVE reading and writing.

Only the two encodings the pipeline needs are supported: 16-bit PCM and
32-bit IEEE float. Samples are kept as float64 arrays of shape
(channels, samples) in memory.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

PCM16_SCALE = 32768.0

_FORMAT_PCM = 1
_FORMAT_FLOAT = 3
_FORMAT_EXTENSIBLE = 0xFFFE


class WavError(Exception):
    """Base class for WAV reading/writing failures."""


class UnsupportedEncodingError(WavError):
    pass


class TruncatedDataError(WavError):
    pass


@dataclass
class MultichannelWaveform:
    samples: np.ndarray  # (channels, n)
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.ndim != 2:
            raise ValueError(f"expected (channels, samples) array, got shape {samples.shape}")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        self.samples = samples
        self.sample_rate = int(self.sample_rate)

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate

    def channel(self, index: int) -> np.ndarray:
        return self.samples[index]


def to_mono(w: MultichannelWaveform, channel_index: int) -> MultichannelWaveform:
    if not 0 <= channel_index < w.num_channels:
        raise IndexError(f"channel {channel_index} out of range for {w.num_channels}-channel waveform")
    return MultichannelWaveform(w.samples[channel_index:channel_index + 1].copy(), w.sample_rate)


def _iter_chunks(data: bytes, offset: int):
    while offset + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, offset)
        body = offset + 8
        yield cid, body, size
        offset = body + size + (size & 1)


def read_wav(path) -> MultichannelWaveform:
    """Read a PCM-16 or float-32 WAV file; PCM values are divided by 32768."""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise UnsupportedEncodingError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    for cid, body, size in _iter_chunks(data, 12):
        if cid == b"fmt ":
            if size < 16 or body + 16 > len(data):
                raise TruncatedDataError(f"{path}: short fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", data, body)
            if fmt[0] == _FORMAT_EXTENSIBLE and size >= 40:
                # actual format code is the first two bytes of the sub-format GUID
                (sub,) = struct.unpack_from("<H", data, body + 24)
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            if body + size > len(data):
                raise TruncatedDataError(
                    f"{path}: data chunk declares {size} bytes, only {len(data) - body} present")
            payload = data[body:body + size]
            break
    if fmt is None:
        raise UnsupportedEncodingError(f"{path}: missing fmt chunk")
    if payload is None:
        raise TruncatedDataError(f"{path}: missing data chunk")

    code, channels, rate, _, block_align, bits = fmt
    if not 1 <= channels <= 8:
        raise UnsupportedEncodingError(f"{path}: {channels} channels not supported")
    if code == _FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), PCM16_SCALE
    elif code == _FORMAT_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedEncodingError(f"{path}: format code {code} with {bits} bits not supported")
    if len(payload) % block_align:
        raise TruncatedDataError(f"{path}: data chunk is not a whole number of frames")

    frames = np.frombuffer(payload, dtype=dtype).reshape(-1, channels)
    samples = frames.T.astype(np.float64) / scale
    return MultichannelWaveform(samples, rate)


def write_wav(w: MultichannelWaveform, path, encoding: str = "pcm16") -> None:
    """Write ``w`` as PCM-16 (saturating) or float-32."""
    if w.num_samples == 0:
        raise ValueError("refusing to write an empty waveform")
    if encoding == "pcm16":
        q = np.round(w.samples * PCM16_SCALE)
        frames = np.clip(q, -32768, 32767).astype("<i2")
        code, bits = _FORMAT_PCM, 16
    elif encoding == "float32":
        frames = w.samples.astype("<f4")
        if not np.all(np.isfinite(frames)):
            raise ValueError("samples overflow float32")
        code, bits = _FORMAT_FLOAT, 32
    else:
        raise ValueError(f"unknown encoding {encoding!r}")

    channels = w.num_channels
    block_align = channels * bits // 8
    payload = np.ascontiguousarray(frames.T).tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, code, channels, w.sample_rate, w.sample_rate * block_align, block_align, bits,
        b"data", len(payload),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
