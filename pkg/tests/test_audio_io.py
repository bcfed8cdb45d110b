import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ffsv.audio_io import (
    MultichannelWaveform,
    TruncatedDataError,
    UnsupportedEncodingError,
    read_wav,
    to_mono,
    write_wav,
)


def test_zero_pcm16_mono(tmp_path):
    path = tmp_path / "z.wav"
    write_wav(MultichannelWaveform(np.zeros((1, 16000)), 16000), path)
    w = read_wav(path)
    assert w.num_channels == 1
    assert w.num_samples == 16000
    assert w.sample_rate == 16000
    assert not w.samples.any()


def test_pcm16_full_scale_value(tmp_path):
    path = tmp_path / "p.wav"
    write_wav(MultichannelWaveform(np.array([[32767 / 32768]]), 8000), path)
    raw = open(path, "rb").read()
    assert struct.unpack("<h", raw[-2:])[0] == 32767
    assert read_wav(path).samples[0, 0] == 32767 / 32768


def test_pcm16_saturation(tmp_path):
    path = tmp_path / "s.wav"
    write_wav(MultichannelWaveform(np.array([[1.5, -1.5, 0.25]]), 8000), path)
    raw = open(path, "rb").read()
    assert struct.unpack("<3h", raw[-6:]) == (32767, -32768, 8192)


def test_pcm16_four_channel_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(0)
    ints = rng.integers(-32768, 32768, size=(4, 3000))
    w = MultichannelWaveform(ints / 32768.0, 16000)
    path = tmp_path / "four.wav"
    write_wav(w, path)
    back = read_wav(path)
    np.testing.assert_array_equal(back.samples, w.samples)
    # a second pass is also bit-identical
    write_wav(back, tmp_path / "again.wav")
    assert open(path, "rb").read() == open(tmp_path / "again.wav", "rb").read()


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 8), st.integers(1, 400), st.integers(0, 2**31 - 1))
def test_float32_roundtrip_exact(tmp_path_factory, channels, n, seed):
    rng = np.random.default_rng(seed)
    data = rng.uniform(-1, 1, size=(channels, n)).astype(np.float32).astype(np.float64)
    path = tmp_path_factory.mktemp("f") / "f.wav"
    write_wav(MultichannelWaveform(data, 22050), path, encoding="float32")
    back = read_wav(path)
    np.testing.assert_array_equal(back.samples, data)
    assert np.all(np.isfinite(back.samples))


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        read_wav("/nonexistent/x.wav")


def test_unsupported_encoding(tmp_path):
    path = tmp_path / "u8.wav"
    header = struct.pack("<4sI4s4sIHHIIHH4sI", b"RIFF", 40, b"WAVE", b"fmt ", 16,
                         1, 1, 8000, 8000, 1, 8, b"data", 4)
    path.write_bytes(header + b"\x80" * 4)
    with pytest.raises(UnsupportedEncodingError):
        read_wav(path)


def test_truncated_data(tmp_path):
    path = tmp_path / "t.wav"
    write_wav(MultichannelWaveform(np.zeros((2, 100)), 8000), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-10])
    with pytest.raises(TruncatedDataError):
        read_wav(path)


def test_skips_unknown_chunks(tmp_path):
    path = tmp_path / "list.wav"
    write_wav(MultichannelWaveform(np.full((1, 4), 0.5), 8000), path)
    raw = path.read_bytes()
    extra = b"LIST" + struct.pack("<I", 3) + b"abc\x00"
    path.write_bytes(raw[:36] + extra + raw[36:])
    np.testing.assert_array_equal(read_wav(path).samples, np.full((1, 4), 0.5))


def test_write_empty_rejected(tmp_path):
    with pytest.raises(ValueError):
        write_wav(MultichannelWaveform(np.zeros((1, 0)), 8000), tmp_path / "e.wav")


def test_invariants_enforced():
    with pytest.raises(ValueError):
        MultichannelWaveform(np.array([[np.nan]]), 8000)
    with pytest.raises(ValueError):
        MultichannelWaveform(np.zeros((1, 3)), 0)


def test_to_mono():
    rng = np.random.default_rng(1)
    mono = MultichannelWaveform(rng.normal(size=(1, 50)) * 0.1, 8000)
    np.testing.assert_array_equal(to_mono(mono, 0).samples, mono.samples)
    quad = MultichannelWaveform(rng.normal(size=(4, 50)) * 0.1, 8000)
    np.testing.assert_array_equal(to_mono(quad, 2).samples[0], quad.samples[2])
    with pytest.raises(IndexError):
        to_mono(quad, 4)
