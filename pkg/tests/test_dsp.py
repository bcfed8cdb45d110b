import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ffsv.audio_io import MultichannelWaveform
from ffsv.dsp import (
    MfccConfig,
    NoSpeechError,
    StftConfig,
    VadConfig,
    apply_vad,
    energy_vad,
    istft,
    load_features,
    mfcc,
    save_features,
    stft,
)


def naive_dft(frame, nfft):
    n = np.arange(len(frame))
    k = np.arange(nfft // 2 + 1)[:, None]
    return np.sum(frame * np.exp(-2j * np.pi * k * n / nfft), axis=1)


def wav(x, sr=16000):
    return MultichannelWaveform(np.atleast_2d(x), sr)


# --- stft / istft -----------------------------------------------------------

def test_stft_frame_count_and_zero():
    cfg = StftConfig(400, 100, "hann", 512)
    s = stft(wav(np.zeros(2000)), cfg)
    assert s.data.shape == (1, 257, 1 + (2000 - 400) // 100)
    assert not s.data.any()


def test_stft_constant_signal_matches_naive_dft():
    cfg = StftConfig(256, 64, "hann", 256)
    s = stft(wav(np.ones(1024)), cfg)
    win = cfg.window_array()
    ref = naive_dft(win, 256)
    np.testing.assert_allclose(s.data[0, :, 3], ref, atol=1e-9)
    assert abs(s.data[0, 0, 3] - win.sum()) < 1e-9


def test_stft_bin_centred_sine_energy_concentrated():
    cfg = StftConfig(512, 128, "hann", 512)
    k = 37
    t = np.arange(4096)
    x = np.sin(2 * np.pi * k * t / 512)
    s = stft(wav(x), cfg)
    frame = x[128 * 5: 128 * 5 + 512] * cfg.window_array()
    ref = naive_dft(frame, 512)
    np.testing.assert_allclose(s.data[0, :, 5], ref, atol=1e-8)
    energy = np.abs(ref) ** 2
    assert energy[k - 1:k + 2].sum() >= 0.99 * energy.sum()


def test_stft_rejects_short_signal():
    with pytest.raises(ValueError):
        stft(wav(np.zeros(100)), StftConfig(256, 64, "hann", 256))


def test_istft_zero():
    cfg = StftConfig(256, 64, "hann", 256)
    s = stft(wav(np.zeros((2, 1000))), cfg)
    assert not istft(s).samples.any()


def test_istft_rejects_non_cola():
    cfg = StftConfig(256, 200, "hann", 256)
    s = stft(wav(np.zeros(1000)), cfg)
    with pytest.raises(ValueError):
        istft(s)


@pytest.mark.parametrize("cfg", [
    StftConfig(512, 128, "hann", 512),
    StftConfig(512, 256, "hann", 1024),
    StftConfig(400, 200, "hamming", 512),
    StftConfig(256, 64, "hamming", 256),
])
def test_istft_roundtrip(cfg):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 16000)) * 0.1
    y = istft(stft(wav(x), cfg)).samples
    lo, hi = cfg.window_length, 16000 - 2 * cfg.window_length
    assert np.max(np.abs(y[:, lo:hi] - x[:, lo:hi])) < 1e-6
    err = np.linalg.norm(y[:, lo:hi] - x[:, lo:hi]) / np.linalg.norm(x[:, lo:hi])
    assert err < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([(256, 64), (256, 128), (128, 32)]))
def test_stft_parseval(seed, wh):
    win_len, hop = wh
    cfg = StftConfig(win_len, hop, "hann", win_len)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=2000)
    s = stft(wav(x), cfg).data[0]
    frames = np.stack([x[t * hop:t * hop + win_len] for t in range(s.shape[1])]) * cfg.window_array()
    time_energy = np.sum(frames ** 2, axis=1)
    p = np.abs(s) ** 2
    spec_energy = (p[0] + 2 * p[1:-1].sum(axis=0) + p[-1]) / cfg.fft_size
    np.testing.assert_allclose(spec_energy, time_energy, rtol=1e-6)


# --- mfcc ---------------------------------------------------------------------

def reference_mfcc(x, sr):
    """Step-by-step MFCC written with explicit loops and a hand-built DCT."""
    length, hop, nfft = 400 * sr // 16000, 160 * sr // 16000, 512
    emph = np.empty_like(x)
    emph[0] = x[0]
    for i in range(1, len(x)):
        emph[i] = x[i] - 0.97 * x[i - 1]
    win = np.array([0.54 - 0.46 * math.cos(2 * math.pi * i / length) for i in range(length)])
    mel = lambda f: 1127.0 * math.log(1 + f / 700.0)
    imel = lambda m: 700.0 * (math.exp(m / 1127.0) - 1)
    lo, hi = mel(20.0), mel(sr / 2 - 100.0)
    pts = [imel(lo + (hi - lo) * i / 31) for i in range(32)]
    nbins = nfft // 2 + 1
    fb = np.zeros((30, nbins))
    for m in range(30):
        for b in range(nbins):
            f = b * sr / nfft
            if pts[m] < f < pts[m + 2]:
                fb[m, b] = (f - pts[m]) / (pts[m + 1] - pts[m]) if f <= pts[m + 1] else \
                    (pts[m + 2] - f) / (pts[m + 2] - pts[m + 1])
    dctm = np.zeros((30, 30))
    for k in range(30):
        scale = math.sqrt(1 / 30) if k == 0 else math.sqrt(2 / 30)
        for n in range(30):
            dctm[k, n] = scale * math.cos(math.pi * k * (2 * n + 1) / 60)
    out = []
    for t in range(1 + (len(x) - length) // hop):
        frame = emph[t * hop:t * hop + length] * win
        spec = naive_dft(frame, nfft)
        energies = fb @ (np.abs(spec) ** 2)
        out.append(dctm @ np.log(np.maximum(energies, 1e-10)))
    return np.array(out)


def test_mfcc_frame_count():
    assert mfcc(wav(np.zeros(16000))).shape == (98, 30)


def test_mfcc_silence_only_c0():
    feats = mfcc(wav(np.zeros(16000)))
    np.testing.assert_allclose(feats[:, 0], math.sqrt(30) * math.log(1e-10), rtol=1e-12)
    assert np.max(np.abs(feats[:, 1:])) < 1e-9


def test_mfcc_matches_reference_on_white_noise():
    rng = np.random.default_rng(7)
    x = rng.normal(size=16000) * 0.1
    ref = reference_mfcc(x, 16000)
    got = mfcc(wav(x))
    assert got.shape == ref.shape
    assert np.max(np.abs(got - ref)) < 1e-6


@pytest.mark.parametrize("alpha", [0.01, 0.5, 3.0])
def test_mfcc_scaling_shifts_only_c0(alpha):
    rng = np.random.default_rng(11)
    x = rng.normal(size=8000) * 0.1
    a, b = mfcc(wav(x)), mfcc(wav(alpha * x))
    assert np.max(np.abs(a[:, 1:] - b[:, 1:])) < 1e-6
    np.testing.assert_allclose(b[:, 0] - a[:, 0], 2 * math.log(alpha) * math.sqrt(30), atol=1e-6)


def test_mfcc_rejects_multichannel_and_short():
    with pytest.raises(ValueError):
        mfcc(MultichannelWaveform(np.zeros((2, 16000)), 16000))
    with pytest.raises(ValueError):
        mfcc(wav(np.zeros(100)))


# --- vad ----------------------------------------------------------------------

def test_vad_silence_keeps_all():
    mask = energy_vad(wav(np.zeros(16000)))
    assert mask.shape == (98,) and mask.all()
    assert energy_vad(wav(np.zeros(16000)), VadConfig(offset=0.0)).all()


def test_vad_constant_sine_keeps_all():
    t = np.arange(16000) / 16000
    assert energy_vad(wav(0.5 * np.sin(2 * np.pi * 400 * t))).all()


def test_vad_burst_frames():
    rng = np.random.default_rng(5)
    x = rng.normal(size=16000) * 1e-4
    x[6000:7600] = rng.normal(size=1600) * 0.3
    mask = energy_vad(wav(x))
    # hand rule: a frame is speech exactly when it overlaps the burst samples
    starts = np.arange(98) * 160
    expected = (starts < 7600) & (starts + 400 > 6000)
    np.testing.assert_array_equal(mask, expected)


def test_vad_empty():
    with pytest.raises(ValueError):
        energy_vad(wav(np.zeros((1, 0))))


def test_apply_vad():
    f = np.arange(8.0).reshape(4, 2)
    np.testing.assert_array_equal(apply_vad(f, np.ones(4, bool)), f)
    np.testing.assert_array_equal(apply_vad(f, [True, False, True, False]), f[[0, 2]])
    with pytest.raises(NoSpeechError):
        apply_vad(f, np.zeros(4, bool))
    with pytest.raises(ValueError):
        apply_vad(f, np.ones(3, bool))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(400, 6000))
def test_vad_mask_length_and_popcount(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n) * rng.uniform(0.001, 1, size=n)
    w = wav(x)
    mask = energy_vad(w)
    feats = mfcc(w)
    assert len(mask) == len(feats)
    assert len(apply_vad(feats, mask)) == mask.sum()


def test_feature_file_roundtrip(tmp_path):
    f = np.random.default_rng(0).normal(size=(13, 30)).astype(np.float32)
    save_features(tmp_path / "f.bin", f)
    raw = (tmp_path / "f.bin").read_bytes()
    assert raw[:4] == b"FFSV" and len(raw) == 12 + 13 * 30 * 4
    np.testing.assert_array_equal(load_features(tmp_path / "f.bin"), f)
