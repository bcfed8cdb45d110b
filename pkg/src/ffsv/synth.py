"""Synthetic speech-like signals for desk-scale experiments.

A crude source-filter model: a jittered glottal pulse train (or noise for
unvoiced segments) shaped by a speaker-specific formant cascade and cut
into syllables separated by pauses. Speakers differ in mean pitch, formant
scaling and spectral tilt, which is enough for MFCC-based embeddings to
separate them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .audio_io import MultichannelWaveform

# neutral vowel formants (Hz) the speaker-specific sets are derived from
_VOWELS = np.array([
    [730, 1090, 2440],
    [270, 2290, 3010],
    [300, 870, 2240],
    [530, 1840, 2480],
    [570, 840, 2410],
    [440, 1020, 2240],
])


@dataclass(frozen=True)
class Speaker:
    f0: float
    formant_scale: float
    tilt: float
    vowel_bias: tuple[int, ...]
    breathiness: float

    @classmethod
    def random(cls, rng: np.random.Generator) -> "Speaker":
        return cls(
            f0=float(rng.uniform(90, 260)),
            formant_scale=float(rng.uniform(0.8, 1.25)),
            tilt=float(rng.uniform(0.85, 0.98)),
            vowel_bias=tuple(int(v) for v in rng.choice(len(_VOWELS), size=3, replace=False)),
            breathiness=float(rng.uniform(0.01, 0.15)),
        )


def _resonator(freq: float, bw: float, fs: int):
    r = np.exp(-np.pi * bw / fs)
    theta = 2 * np.pi * freq / fs
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return [1.0 - r], a


def synth_utterance(spk: Speaker, duration: float, fs: int, rng: np.random.Generator,
                    level: float = 0.1) -> MultichannelWaveform:
    n = int(round(duration * fs))
    out = np.zeros(n)
    pos = int(rng.uniform(0.02, 0.08) * fs)
    while pos < n:
        syl = int(rng.uniform(0.12, 0.28) * fs)
        seg_n = min(syl, n - pos)
        if seg_n < 32:
            break
        voiced = rng.random() < 0.85
        if voiced:
            f0 = spk.f0 * rng.uniform(0.9, 1.1) * np.linspace(1.0, rng.uniform(0.85, 1.15), seg_n)
            phase = np.cumsum(f0 / fs)
            pulses = np.diff(np.floor(phase), prepend=0.0)
            src = lfilter([1.0], [1.0, -spk.tilt], pulses)
            src += spk.breathiness * rng.normal(size=seg_n)
        else:
            src = 0.3 * rng.normal(size=seg_n)
        vowel = _VOWELS[spk.vowel_bias[rng.integers(len(spk.vowel_bias))]] * spk.formant_scale
        seg = src
        for k, f in enumerate(vowel):
            f = min(f * rng.uniform(0.95, 1.05), 0.45 * fs)
            b, a = _resonator(f, 60 + 40 * k, fs)
            seg = lfilter(b, a, seg)
        env = np.hanning(seg_n) ** 0.5
        seg = seg * env
        out[pos:pos + seg_n] += seg / (np.std(seg) + 1e-12)
        pos += seg_n + int(rng.uniform(0.03, 0.15) * fs)
    out *= level / (np.sqrt(np.mean(out ** 2)) + 1e-12)
    return MultichannelWaveform(out, fs)
