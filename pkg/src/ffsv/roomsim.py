"""Image-source room impulse responses and waveform augmentation.

Shoebox rooms only. Reflection coefficients are pressure coefficients
(one per wall, stored in the order x0, x1, y0, y1, z0, z1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import fftconvolve

from .audio_io import MultichannelWaveform

SOUND_SPEED = 343.0
FRAC_DELAY_TAPS = 8
RESAMPLE_TAPS = 16


@dataclass
class RoomConfig:
    dimensions: tuple[float, float, float]
    reflection: tuple[float, ...]
    source: tuple[float, float, float]
    mics: np.ndarray  # (M, 3)
    sample_rate: int = 16000
    sound_speed: float = SOUND_SPEED
    max_order: int = 10

    def __post_init__(self):
        self.dimensions = tuple(float(v) for v in self.dimensions)
        refl = tuple(float(v) for v in self.reflection)
        if len(refl) == 3:
            refl = tuple(v for v in refl for _ in range(2))
        if len(refl) != 6:
            raise ValueError("reflection needs 3 (per wall pair) or 6 (per wall) values")
        self.reflection = refl
        self.source = tuple(float(v) for v in self.source)
        self.mics = np.atleast_2d(np.asarray(self.mics, dtype=np.float64))
        if any(d <= 0 for d in self.dimensions):
            raise ValueError("room dimensions must be positive")
        if any(not 0.0 <= b < 1.0 for b in self.reflection):
            raise ValueError("reflection coefficients must lie in [0, 1)")
        if self.max_order < 0:
            raise ValueError("max_order must be >= 0")
        dims = np.array(self.dimensions)
        src = np.array(self.source)
        if not np.all((src > 0) & (src < dims)):
            raise ValueError(f"source {self.source} outside room {self.dimensions}")
        if self.mics.shape[1] != 3 or not np.all((self.mics > 0) & (self.mics < dims)):
            raise ValueError("microphones must lie strictly inside the room")
        if np.any(np.linalg.norm(self.mics - src, axis=1) < 1e-9):
            raise ValueError("source coincides with a microphone")

    def to_text(self) -> str:
        fmt = lambda seq: ",".join(repr(float(v)) for v in seq)
        lines = [
            f"dimensions={fmt(self.dimensions)}",
            f"reflection={fmt(self.reflection)}",
            f"source={fmt(self.source)}",
            f"mics={';'.join(fmt(m) for m in self.mics)}",
            f"sample_rate={self.sample_rate}",
            f"sound_speed={self.sound_speed!r}",
            f"max_order={self.max_order}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RoomConfig":
        kv = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
        vec = lambda s: tuple(float(v) for v in s.split(","))
        return cls(
            dimensions=vec(kv["dimensions"]),
            reflection=vec(kv["reflection"]),
            source=vec(kv["source"]),
            mics=np.array([vec(m) for m in kv["mics"].split(";")]),
            sample_rate=int(kv.get("sample_rate", 16000)),
            sound_speed=float(kv.get("sound_speed", SOUND_SPEED)),
            max_order=int(kv.get("max_order", 10)),
        )


@dataclass
class Rir:
    responses: np.ndarray  # (M, L)
    sample_rate: int

    def __post_init__(self):
        self.responses = np.atleast_2d(np.asarray(self.responses, dtype=np.float64))
        if self.responses.size == 0 or not np.all(np.isfinite(self.responses)):
            raise ValueError("RIR must be nonempty and finite")

    @property
    def num_mics(self) -> int:
        return self.responses.shape[0]

    def as_waveform(self) -> MultichannelWaveform:
        return MultichannelWaveform(self.responses, self.sample_rate)


def reflection_for_t60(dimensions, t60: float, c: float = SOUND_SPEED) -> float:
    """Uniform wall reflection coefficient giving ``t60`` by Sabine's formula."""
    lx, ly, lz = dimensions
    volume = lx * ly * lz
    surface = 2 * (lx * ly + lx * lz + ly * lz)
    alpha = 24 * math.log(10) * volume / (c * surface * t60)
    if alpha > 1:
        raise ValueError(f"T60 of {t60}s is too short for this room")
    return math.sqrt(1 - alpha)


def image_sources(room: RoomConfig, mic_index: int):
    """Enumerate image sources seen by one microphone.

    Returns (delay in samples, amplitude, reflection order), one entry per
    image with total order <= room.max_order.
    """
    n_max = room.max_order
    dims = np.array(room.dimensions)
    src = np.array(room.source)
    mic = room.mics[mic_index]
    beta = np.array(room.reflection).reshape(3, 2)

    # per axis: candidate image coordinates, amplitude factor, order
    axes = []
    for a in range(3):
        coords, gains, orders = [], [], []
        for n in range(-n_max, n_max + 1):
            for q in (0, 1):
                lo_hits = abs(n - q)
                hi_hits = abs(n)
                order = lo_hits + hi_hits
                if order > n_max:
                    continue
                coords.append((1 - 2 * q) * src[a] + 2 * n * dims[a] - mic[a])
                gains.append(beta[a, 0] ** lo_hits * beta[a, 1] ** hi_hits)
                orders.append(order)
        axes.append((np.array(coords), np.array(gains), np.array(orders)))

    (cx, gx, ox), (cy, gy, oy), (cz, gz, oz) = axes
    order = ox[:, None, None] + oy[None, :, None] + oz[None, None, :]
    keep = order <= n_max
    dist = np.sqrt(cx[:, None, None] ** 2 + cy[None, :, None] ** 2 + cz[None, None, :] ** 2)[keep]
    gain = (gx[:, None, None] * gy[None, :, None] * gz[None, None, :])[keep]
    delay = dist / room.sound_speed * room.sample_rate
    return delay, gain / (4 * np.pi * dist), order[keep]


def fractional_delay_kernel(frac: np.ndarray, taps: int = FRAC_DELAY_TAPS):
    """Hann-windowed sinc taps for offsets in [0, 1); returns (offsets, weights)."""
    offsets = np.arange(-(taps // 2) + 1, taps // 2 + 1)
    u = offsets[None, :] - np.asarray(frac)[:, None]
    weights = np.sinc(u) * 0.5 * (1 + np.cos(2 * np.pi * u / taps))
    return offsets, weights


def simulate_rir(room: RoomConfig, length: int | None = None) -> Rir:
    """Image-source RIR for every microphone of ``room``."""
    per_mic = [image_sources(room, m) for m in range(len(room.mics))]
    max_delay = max(d.max() for d, _, _ in per_mic)
    if length is None:
        length = int(math.ceil(max_delay)) + FRAC_DELAY_TAPS
    out = np.zeros((len(room.mics), length))
    for m, (delay, amp, _) in enumerate(per_mic):
        base = np.floor(delay).astype(int)
        offsets, weights = fractional_delay_kernel(delay - base)
        idx = base[:, None] + offsets[None, :]
        vals = weights * amp[:, None]
        ok = (idx >= 0) & (idx < length)
        np.add.at(out[m], idx[ok], vals[ok])
    return Rir(out, room.sample_rate)


def convolve_rir(w: MultichannelWaveform, rir: Rir) -> MultichannelWaveform:
    if w.num_channels != 1:
        raise ValueError("convolve_rir expects a mono source")
    if w.sample_rate != rir.sample_rate:
        raise ValueError(f"sample rate mismatch: {w.sample_rate} vs {rir.sample_rate}")
    out = np.stack([fftconvolve(w.samples[0], h) for h in rir.responses])
    return MultichannelWaveform(out, w.sample_rate)


def signal_power(x: np.ndarray) -> float:
    return float(np.mean(np.asarray(x) ** 2))


def noise_scale(signal: np.ndarray, noise: np.ndarray, snr_db: float) -> float:
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    ps, pn = signal_power(signal), signal_power(noise)
    if ps <= 0 or pn <= 0:
        raise ValueError("signal and noise must have nonzero power")
    return math.sqrt(ps / (pn * 10 ** (snr_db / 10)))


def mix_noise(w: MultichannelWaveform, noise: MultichannelWaveform, snr_db: float) -> MultichannelWaveform:
    """Add ``noise`` scaled to reach ``snr_db`` over the whole utterance.

    Shorter noise is tiled; a mono noise is shared by every channel.
    """
    if noise.sample_rate != w.sample_rate:
        raise ValueError("noise sample rate differs from signal")
    n = noise.samples
    if n.shape[0] not in (1, w.num_channels):
        raise ValueError("noise must be mono or match the signal's channel count")
    reps = -(-w.num_samples // n.shape[1])
    n = np.tile(n, (1, reps))[:, : w.num_samples]
    n = np.broadcast_to(n, w.samples.shape)
    scale = noise_scale(w.samples, n, snr_db)
    return MultichannelWaveform(w.samples + scale * n, w.sample_rate)


def speed_perturb(w: MultichannelWaveform, factor: float) -> MultichannelWaveform:
    """Speed change by ``factor``: duration / factor, pitch * factor."""
    if not factor > 0:
        raise ValueError("factor must be positive")
    n_in = w.num_samples
    n_out = int(round(n_in / factor))
    if n_out < 1:
        raise ValueError(f"factor {factor} leaves no samples")
    cutoff = min(1.0, 1.0 / factor)
    half = int(math.ceil(RESAMPLE_TAPS / 2 / cutoff))
    pos = np.arange(n_out) * factor
    base = np.floor(pos).astype(int)
    k = base[:, None] + np.arange(-half + 1, half + 1)[None, :]
    u = pos[:, None] - k
    weights = cutoff * np.sinc(cutoff * u) * 0.5 * (1 + np.cos(np.pi * u / half))
    weights[np.abs(u) >= half] = 0.0
    valid = (k >= 0) & (k < n_in)
    weights = np.where(valid, weights, 0.0)
    gathered = w.samples[:, np.clip(k, 0, n_in - 1)]  # (C, n_out, taps)
    return MultichannelWaveform(np.sum(gathered * weights, axis=-1), w.sample_rate)


@dataclass
class AugmentSpec:
    rir: Rir | None = None
    noise: MultichannelWaveform | None = None
    snr_db: float = 10.0
    speed_factor: float = 1.0

    def __post_init__(self):
        if not self.speed_factor > 0:
            raise ValueError("speed_factor must be positive")


def augment(w: MultichannelWaveform, spec: AugmentSpec) -> MultichannelWaveform:
    """Speed perturbation, then reverberation, then additive noise."""
    out = w
    if spec.speed_factor != 1.0:
        out = speed_perturb(out, spec.speed_factor)
    if spec.rir is not None:
        out = convolve_rir(out, spec.rir)
    if spec.noise is not None:
        out = mix_noise(out, spec.noise, spec.snr_db)
    return out


@dataclass(frozen=True)
class RoomRanges:
    length: tuple[float, float] = (3.0, 8.0)
    width: tuple[float, float] = (3.0, 8.0)
    height: tuple[float, float] = (2.5, 4.0)
    reflection: tuple[float, float] = (0.2, 0.9)
    distance: tuple[float, float] = (1.0, 5.0)
    azimuth: tuple[float, float] = (0.0, 2 * math.pi)
    array_position: tuple[float, float] = (0.3, 0.7)  # fraction of length / width
    array_height: tuple[float, float] = (1.0, 1.5)
    source_height: tuple[float, float] = (1.2, 1.8)
    array_radius: float = 0.05
    num_mics: int = 4
    sample_rate: int = 16000
    max_order: int = 10

    def check(self):
        for name in ("length", "width", "height", "reflection", "distance", "azimuth",
                     "array_position", "array_height", "source_height"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"range {name} has lo > hi")
        if self.reflection[0] < 0 or self.reflection[1] >= 1:
            raise ValueError("reflection range must lie in [0, 1)")
        if min(self.length[0], self.width[0], self.height[0]) <= 0:
            raise ValueError("room dimensions must be positive")
        if self.num_mics < 1 or self.array_radius < 0:
            raise ValueError("bad microphone array")


def circular_array(centre, radius: float, num_mics: int) -> np.ndarray:
    ang = 2 * np.pi * np.arange(num_mics) / num_mics
    offs = np.stack([radius * np.cos(ang), radius * np.sin(ang), np.zeros(num_mics)], axis=1)
    return np.asarray(centre, dtype=np.float64)[None, :] + offs


def sample_room_configs(n_rooms: int, seed: int, ranges: RoomRanges = RoomRanges(),
                        max_attempts: int = 1000) -> list[RoomConfig]:
    """Draw ``n_rooms`` valid rooms uniformly over ``ranges``; deterministic in ``seed``."""
    if n_rooms < 1:
        raise ValueError("n_rooms must be >= 1")
    ranges.check()
    rng = np.random.default_rng(seed)
    u = lambda r: rng.uniform(r[0], r[1]) if r[1] > r[0] else r[0]
    rooms = []
    for _ in range(n_rooms):
        for _attempt in range(max_attempts):
            dims = (u(ranges.length), u(ranges.width), u(ranges.height))
            refl = tuple(u(ranges.reflection) for _ in range(3))
            centre = np.array([u(ranges.array_position) * dims[0],
                               u(ranges.array_position) * dims[1],
                               u(ranges.array_height)])
            dist, az = u(ranges.distance), u(ranges.azimuth)
            src_z = u(ranges.source_height)
            horiz = math.sqrt(max(dist ** 2 - (src_z - centre[2]) ** 2, 0.0))
            src = (centre[0] + horiz * math.cos(az), centre[1] + horiz * math.sin(az), src_z)
            mics = circular_array(centre, ranges.array_radius, ranges.num_mics)
            try:
                rooms.append(RoomConfig(dims, refl, src, mics, ranges.sample_rate,
                                        SOUND_SPEED, ranges.max_order))
                break
            except ValueError:
                continue
        else:
            raise ValueError("ranges never produce a valid room (degenerate ranges)")
    return rooms


def with_reflection(room: RoomConfig, beta: float) -> RoomConfig:
    return replace(room, reflection=(beta,) * 6)
