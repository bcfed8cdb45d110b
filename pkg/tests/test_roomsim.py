import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ffsv.audio_io import MultichannelWaveform
from ffsv.roomsim import (
    AugmentSpec,
    Rir,
    RoomConfig,
    RoomRanges,
    augment,
    convolve_rir,
    image_sources,
    mix_noise,
    noise_scale,
    reflection_for_t60,
    sample_room_configs,
    signal_power,
    simulate_rir,
    speed_perturb,
)

FS = 16000


def free_field(dist, fs=FS):
    src = (1.0, 2.0, 1.5)
    mic = np.array([[1.0 + dist, 2.0, 1.5]])
    return RoomConfig((20.0, 5.0, 3.0), (0.0, 0.0, 0.0), src, mic, fs, 343.0, 0)


def test_free_field_integer_delay_peak_exact():
    dist = 343.0 * 50 / FS  # exactly 50 samples
    rir = simulate_rir(free_field(dist)).responses[0]
    assert np.argmax(rir) == 50
    assert abs(rir[50] - 1 / (4 * math.pi * dist)) < 1e-12
    assert np.count_nonzero(np.abs(rir) > 1e-12) == 1


@pytest.mark.parametrize("dist", [0.7, 1.234, 2.5, 3.9])
def test_free_field_delay_and_amplitude(dist):
    rir = simulate_rir(free_field(dist)).responses[0]
    analytic_amp = 1 / (4 * math.pi * dist)
    analytic_delay = dist / 343.0 * FS
    assert abs(rir.sum() - analytic_amp) < 0.01 * analytic_amp
    centroid = np.sum(np.arange(len(rir)) * rir) / rir.sum()
    assert abs(centroid - analytic_delay) < 0.01 * analytic_delay
    assert abs(np.argmax(rir) - analytic_delay) <= 0.5


def test_doubling_distance_halves_amplitude():
    a = simulate_rir(free_field(343.0 * 40 / FS)).responses[0].max()
    b = simulate_rir(free_field(343.0 * 80 / FS)).responses[0].max()
    assert abs(a / b - 2.0) < 0.01


def test_order_one_image_enumeration():
    dims = (4.0, 5.0, 3.0)
    src = np.array([1.0, 2.0, 1.2])
    mic = np.array([2.5, 3.1, 1.6])
    betas = (0.9, 0.8, 0.7, 0.6, 0.5, 0.4)
    room = RoomConfig(dims, betas, tuple(src), mic[None], FS, 343.0, 1)
    delay, amp, order = image_sources(room, 0)
    assert len(delay) == 7

    # hand enumeration: direct path and a mirror in each of the six walls
    expected = [(src, 1.0)]
    for axis in range(3):
        lo = src.copy(); lo[axis] = -src[axis]
        hi = src.copy(); hi[axis] = 2 * dims[axis] - src[axis]
        expected += [(lo, betas[2 * axis]), (hi, betas[2 * axis + 1])]
    exp = sorted(
        (np.linalg.norm(p - mic) / 343.0 * FS, b / (4 * math.pi * np.linalg.norm(p - mic)))
        for p, b in expected)
    got = sorted(zip(delay, amp))
    for (d0, a0), (d1, a1) in zip(exp, got):
        assert abs(d0 - d1) < 1e-9
        assert abs(a0 - a1) < 1e-9
    assert sorted(order) == [0] + [1] * 6


def order_energy(room):
    _, amp, order = image_sources(room, 0)
    return np.array([np.sum(amp[order == k] ** 2) for k in range(room.max_order + 1)])


@pytest.mark.parametrize("beta", [0.3, 0.6, 0.8])
def test_energy_decays_by_order(beta):
    room = RoomConfig((4.0, 4.0, 4.0), (beta,) * 3, (2.0, 2.0, 2.0), [[2.3, 2.1, 1.9]], FS, 343.0, 8)
    e = order_energy(room)
    assert np.all(np.isfinite(e))
    assert np.all(np.diff(e[1:]) < 0)
    assert np.isfinite(simulate_rir(room).responses).all()


def test_room_validation():
    with pytest.raises(ValueError):
        RoomConfig((3, 3, 3), (0.5,) * 3, (1, 1, 1), [[4, 1, 1]])
    with pytest.raises(ValueError):
        RoomConfig((3, 3, 3), (0.5,) * 3, (1, 1, 1), [[1, 1, 1]])
    with pytest.raises(ValueError):
        RoomConfig((3, 3, 3), (1.0,) * 3, (1, 1, 1), [[2, 1, 1]])


def test_room_text_roundtrip():
    room = sample_room_configs(1, seed=4)[0]
    back = RoomConfig.from_text(room.to_text())
    assert back.to_text() == room.to_text()
    np.testing.assert_array_equal(back.mics, room.mics)


def test_reflection_for_t60():
    dims = (6.0, 5.0, 3.0)
    beta = reflection_for_t60(dims, 0.5)
    vol, surf = 90.0, 2 * (30 + 18 + 15)
    assert abs(0.161 * vol / (surf * (1 - beta ** 2)) - 0.5) < 0.005


# --- convolution --------------------------------------------------------------

def test_convolve_identity_and_shift():
    rng = np.random.default_rng(0)
    x = MultichannelWaveform(rng.normal(size=(1, 300)) * 0.1, FS)
    unit = np.zeros(5); unit[0] = 1
    shifted = np.zeros(8); shifted[5] = 1
    out = convolve_rir(x, Rir(np.stack([np.pad(unit, (0, 3)), shifted]), FS))
    assert out.num_samples == 300 + 8 - 1
    np.testing.assert_allclose(out.samples[0, :300], x.samples[0], atol=1e-12)
    np.testing.assert_allclose(out.samples[1, 5:305], x.samples[0], atol=1e-12)


def test_convolve_matches_direct_reference():
    rng = np.random.default_rng(1)
    x = rng.normal(size=1000)
    h = rng.normal(size=64)
    ref = np.zeros(1063)
    for i in range(1000):
        for j in range(64):
            ref[i + j] += x[i] * h[j]
    got = convolve_rir(MultichannelWaveform(x, FS), Rir(h, FS)).samples[0]
    assert np.max(np.abs(got - ref)) < 1e-9


def test_convolve_linearity():
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=(2, 500))
    rir = Rir(rng.normal(size=(3, 40)), FS)
    conv = lambda s: convolve_rir(MultichannelWaveform(s, FS), rir).samples
    np.testing.assert_allclose(conv(2 * x - 0.5 * y), 2 * conv(x) - 0.5 * conv(y), atol=1e-9)


def test_convolve_rate_mismatch():
    with pytest.raises(ValueError):
        convolve_rir(MultichannelWaveform(np.ones(10), 8000), Rir(np.ones(3), FS))


# --- noise ----------------------------------------------------------------------

def test_noise_scale_equal_power():
    a = np.array([1.0, -1.0, 1.0, -1.0])
    assert noise_scale(a, -a, 0.0) == pytest.approx(1.0, abs=1e-15)


def test_mix_noise_rejects_infinite_snr():
    w = MultichannelWaveform(np.ones(10), FS)
    with pytest.raises(ValueError):
        mix_noise(w, w, math.inf)
    with pytest.raises(ValueError):
        mix_noise(w, MultichannelWaveform(np.zeros(10), FS), 0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-20, 40), st.integers(50, 3000), st.integers(1, 3))
def test_mix_noise_hits_target_snr(seed, snr, noise_len, channels):
    rng = np.random.default_rng(seed)
    sig = rng.normal(size=(channels, 1000)) * rng.uniform(0.01, 1)
    noise = rng.normal(size=(1, noise_len)) * rng.uniform(0.01, 1)
    w = MultichannelWaveform(sig, FS)
    mixed = mix_noise(w, MultichannelWaveform(noise, FS), snr)
    added = mixed.samples - sig
    measured = 10 * math.log10(signal_power(sig) / signal_power(added))
    assert abs(measured - snr) < 0.01


# --- speed perturbation -------------------------------------------------------------

def test_speed_identity():
    rng = np.random.default_rng(3)
    w = MultichannelWaveform(rng.normal(size=(2, 1000)) * 0.1, FS)
    np.testing.assert_allclose(speed_perturb(w, 1.0).samples, w.samples, atol=1e-9)


def test_speed_length():
    w = MultichannelWaveform(np.zeros(16000), FS)
    assert speed_perturb(w, 0.9).num_samples == 17778
    assert speed_perturb(w, 1.1).num_samples == round(16000 / 1.1)


@pytest.mark.parametrize("factor", [0.9, 1.1])
def test_speed_shifts_spectral_peak(factor):
    t = np.arange(32000) / FS
    w = MultichannelWaveform(0.5 * np.sin(2 * np.pi * 1000 * t), FS)
    y = speed_perturb(w, factor).samples[0]
    spec = np.abs(np.fft.rfft(y * np.hanning(len(y)), n=1 << 17))
    peak = np.argmax(spec) * FS / (1 << 17)
    assert abs(peak - 1000 * factor) < 5


def test_speed_rejects_bad_factor():
    w = MultichannelWaveform(np.zeros(10), FS)
    with pytest.raises(ValueError):
        speed_perturb(w, 0.0)
    with pytest.raises(ValueError):
        speed_perturb(w, 100.0)


def test_augment_chain():
    rng = np.random.default_rng(5)
    room = sample_room_configs(1, seed=1, ranges=RoomRanges(max_order=2))[0]
    rir = simulate_rir(room)
    w = MultichannelWaveform(rng.normal(size=(1, 4000)) * 0.1, FS)
    noise = MultichannelWaveform(rng.normal(size=(1, 500)), FS)
    out = augment(w, AugmentSpec(rir=rir, noise=noise, snr_db=5.0, speed_factor=1.1))
    assert out.num_channels == 4
    assert out.num_samples == round(4000 / 1.1) + rir.responses.shape[1] - 1
    with pytest.raises(ValueError):
        AugmentSpec(speed_factor=0)


# --- room sampling -------------------------------------------------------------

def test_sample_rooms_deterministic():
    a = sample_room_configs(1, seed=9)[0]
    b = sample_room_configs(1, seed=9)[0]
    assert a.to_text() == b.to_text()


def test_sample_rooms_distinct_and_valid():
    rooms = sample_room_configs(200, seed=0)
    assert len({r.to_text() for r in rooms}) == 200
    for r in rooms:
        dims = np.array(r.dimensions)
        assert np.all((r.mics > 0) & (r.mics < dims))
        assert np.all(np.array(r.source) > 0) and np.all(np.array(r.source) < dims)
        assert len(r.mics) == 4
        d = np.linalg.norm(r.mics.mean(axis=0) - np.array(r.source))
        assert 1.0 - 1e-9 <= d <= 5.0 + 1e-9


def test_sample_rooms_point_ranges_identical():
    pt = lambda v: (v, v)
    ranges = RoomRanges(length=pt(5.0), width=pt(4.0), height=pt(3.0), reflection=pt(0.5),
                        distance=pt(1.5), azimuth=pt(0.3), array_position=pt(0.5),
                        array_height=pt(1.2), source_height=pt(1.4))
    rooms = sample_room_configs(5, seed=3, ranges=ranges)
    assert len({r.to_text() for r in rooms}) == 1


def test_sample_rooms_degenerate():
    with pytest.raises(ValueError):
        sample_room_configs(0, seed=0)
    with pytest.raises(ValueError):
        sample_room_configs(1, seed=0, ranges=RoomRanges(length=(5.0, 3.0)))
    impossible = RoomRanges(length=(2.0, 2.0), width=(2.0, 2.0), distance=(9.0, 9.0))
    with pytest.raises(ValueError):
        sample_room_configs(1, seed=0, ranges=impossible, max_attempts=20)
