"""Shared scenario builders for the signal-processing tests."""
import numpy as np

from ffsv.audio_io import MultichannelWaveform
from ffsv.roomsim import (
    Rir,
    RoomConfig,
    circular_array,
    convolve_rir,
    reflection_for_t60,
    simulate_rir,
)
from ffsv.synth import Speaker, synth_utterance

FS = 16000


def drr_db(y: np.ndarray, direct: np.ndarray) -> float:
    """DRR via the best-scale projection of ``y`` onto the direct-path signal."""
    a = np.dot(y, direct) / np.dot(direct, direct)
    return 10 * np.log10(np.sum((a * direct) ** 2) / np.sum((y - a * direct) ** 2))


def reverberant_scene(t60=0.5, seconds=3.0, seed=0, num_mics=4):
    """Speech-like source in a 6x5x3 m room; returns (reverberant, direct-path) waveforms."""
    rng = np.random.default_rng(seed)
    dims = (6.0, 5.0, 3.0)
    beta = reflection_for_t60(dims, t60)
    mics = circular_array((3.0, 2.5, 1.3), 0.05, num_mics)
    room = RoomConfig(dims, (beta,) * 3, (1.2, 1.5, 1.6), mics, FS, 343.0, 25)
    h = simulate_rir(room, length=int(0.6 * FS)).responses
    peak = np.argmax(np.abs(h), axis=1)
    direct = np.zeros_like(h)
    for m in range(num_mics):
        end = peak[m] + int(0.004 * FS)
        direct[m, :end] = h[m, :end]
    src = synth_utterance(Speaker.random(rng), seconds, FS, rng)
    return convolve_rir(src, Rir(h, FS)), convolve_rir(src, Rir(direct, FS))


def point_source_scene(snr_db=0.0, seconds=3.0, seed=0, reflection=0.3, max_order=2):
    """4-mic point source plus spatially white noise; returns (image, noise, mixture)."""
    rng = np.random.default_rng(seed)
    mics = circular_array((3.0, 2.5, 1.3), 0.05, 4)
    room = RoomConfig((6.0, 5.0, 3.0), (reflection,) * 3, (1.5, 1.2, 1.6), mics, FS, 343.0, max_order)
    src = synth_utterance(Speaker.random(rng), seconds, FS, rng)
    image = convolve_rir(src, simulate_rir(room)).samples
    noise = rng.normal(size=image.shape)
    p_img, p_noise = np.mean(image[0] ** 2), np.mean(noise[0] ** 2)
    noise *= np.sqrt(p_img / (p_noise * 10 ** (snr_db / 10)))
    return image, noise, MultichannelWaveform(image + noise, FS)
