"""Weighted prediction error (WPE) dereverberation in the STFT domain.

Multichannel-in, multichannel-out. Each frequency bin is processed
independently by alternating between the time-varying source variance and
the variance-weighted least-squares prediction filter for the late
reverberation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import ComplexSpectrogram


@dataclass(frozen=True)
class WpeConfig:
    taps: int = 10
    delay: int = 3
    iterations: int = 3
    variance_floor: float = 1e-8  # relative to the bin's mean observed power

    def __post_init__(self):
        if self.taps < 1 or self.delay < 1 or self.iterations < 1:
            raise ValueError("taps, delay and iterations must all be >= 1")
        if not self.variance_floor > 0:
            raise ValueError("variance_floor must be positive")


def tap_stack(x: np.ndarray, taps: int, delay: int) -> np.ndarray:
    """Delayed observations (F, C*taps, T); rows k*C..k*C+C-1 hold x[t - delay - k]."""
    F, C, T = x.shape
    out = np.zeros((F, C * taps, T), dtype=x.dtype)
    for k in range(taps):
        d = delay + k
        if d >= T:
            break
        out[:, k * C:(k + 1) * C, d:] = x[:, :, : T - d]
    return out


def _variance(d: np.ndarray, floor: np.ndarray) -> np.ndarray:
    return np.maximum(np.mean(np.abs(d) ** 2, axis=1), floor[:, None])


def weighted_objective(d: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Per-bin negative log-likelihood (up to constants) of the WPE model."""
    C = d.shape[1]
    return np.sum(np.sum(np.abs(d) ** 2, axis=1) / lam + C * np.log(lam), axis=-1)


def wpe_with_stats(s: ComplexSpectrogram, cfg: WpeConfig = WpeConfig()):
    """Run WPE and also return per-iteration objectives (iters, F) and filters.

    The objective is the per-bin WPE negative log-likelihood plus the ridge
    penalty; it is non-increasing over iterations.
    """
    x = s.data.transpose(1, 0, 2)  # (F, C, T)
    F, C, T = x.shape
    if T <= cfg.delay + cfg.taps:
        raise ValueError(f"need more than {cfg.delay + cfg.taps} frames, got {T}")
    floor = cfg.variance_floor * np.maximum(np.mean(np.abs(x) ** 2, axis=(1, 2)), np.finfo(float).tiny)
    y = tap_stack(x, cfg.taps, cfg.delay)
    yh = np.conj(y).transpose(0, 2, 1)  # (F, T, CK)
    xh = np.conj(x).transpose(0, 2, 1)  # (F, T, C)
    ck = C * cfg.taps
    mean_power = np.maximum(np.mean(np.abs(x) ** 2, axis=(1, 2)), np.finfo(float).tiny)
    # fixed per-bin ridge keeps the penalised objective the same across iterations
    ridge = 1e-10 * np.maximum(np.sum(np.abs(y) ** 2, axis=(1, 2)) / mean_power, np.finfo(float).tiny)
    reg_rows = np.sqrt(ridge)[:, None, None] * np.eye(ck)
    zeros = np.zeros((F, ck, C), dtype=x.dtype)

    d = x
    objectives = []
    G = np.zeros((F, ck, C), dtype=x.dtype)
    for _ in range(cfg.iterations):
        lam = _variance(d, floor)
        w = 1.0 / np.sqrt(lam)[:, :, None]
        # QR of the stacked weighted data and ridge rows; the normal equations
        # lose too much precision in near-empty bins
        q, r = np.linalg.qr(np.concatenate([yh * w, reg_rows], axis=1))
        rhs = np.conj(q).transpose(0, 2, 1) @ np.concatenate([xh * w, zeros], axis=1)
        G = np.linalg.solve(r, rhs)
        d = x - np.conj(G).transpose(0, 2, 1) @ y
        penalty = ridge * np.sum(np.abs(G) ** 2, axis=(1, 2))
        objectives.append(weighted_objective(d, lam) + penalty)
    out = s.with_data(d.transpose(1, 0, 2))
    return out, np.array(objectives), G


def wpe(s: ComplexSpectrogram, cfg: WpeConfig = WpeConfig()) -> ComplexSpectrogram:
    return wpe_with_stats(s, cfg)[0]
