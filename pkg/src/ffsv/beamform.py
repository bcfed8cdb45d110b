"""Mask-based MVDR beamforming with CGMM time-frequency masks.

Each frequency bin is modelled independently as a two-component mixture of
zero-mean complex Gaussians with a per-frame scale, x_t ~ CN(0, phi_kt R_k).
EM responsibilities give the speech and noise masks, which weight the
spatial covariance estimates fed to the MVDR solution.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dsp import ComplexSpectrogram

log = logging.getLogger(__name__)

_TINY = 1e-300


@dataclass(frozen=True)
class CgmmConfig:
    iterations: int = 20
    eps: float = 1e-6  # eigenvalue floor, relative to trace / C
    init: str = "power-split"  # or "random-responsibility"
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.init not in ("power-split", "random-responsibility"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class CgmmResult:
    speech: np.ndarray  # (F, T) mask
    noise: np.ndarray  # (F, T) mask
    log_likelihood: np.ndarray  # (iterations + 1, F)
    covariances: np.ndarray  # (F, 2, C, C) fitted shape matrices, speech first


@dataclass
class BeamformerWeights:
    weights: np.ndarray  # (F, C)
    steering: np.ndarray  # (F, C)


def _herm(a):
    return np.conj(np.swapaxes(a, -1, -2))


def _floor_eigenvalues(r: np.ndarray, rel: float) -> np.ndarray:
    """Raise eigenvalues below rel * trace / C; exact no-op otherwise."""
    C = r.shape[-1]
    r = 0.5 * (r + _herm(r))
    vals, vecs = np.linalg.eigh(r)
    floor = rel * np.maximum(np.real(np.trace(r, axis1=-2, axis2=-1)), _TINY) / C
    low = vals < floor[..., None]
    if not low.any():
        return r
    vals = np.maximum(vals, floor[..., None])
    fixed = (vecs * vals[..., None, :]) @ _herm(vecs)
    return np.where(low.any(axis=-1)[..., None, None], fixed, r)


def _quad(x, r_inv):
    """x_t^H R^-1 x_t for x (F, T, C) and r_inv (F, K, C, C) -> (F, K, T)."""
    z = x[:, None] @ np.swapaxes(r_inv, -1, -2)  # (F, K, T, C)
    return np.real(np.sum(np.conj(x)[:, None] * z, axis=-1))


def _component_loglik(x, r, phi):
    C = x.shape[-1]
    r_inv = np.linalg.inv(r)
    _, logdet = np.linalg.slogdet(r)
    q = _quad(x, r_inv)
    return -C * np.log(np.pi) - C * np.log(phi) - logdet[..., None] - q / phi


def _initial_responsibilities(x, cfg: CgmmConfig, init):
    F, T, _ = x.shape
    if init is not None:
        g = np.broadcast_to(np.asarray(init, dtype=np.float64), (F, T))
    elif cfg.init == "random-responsibility":
        g = np.random.default_rng(cfg.seed).uniform(0.0, 1.0, size=(F, T))
    else:
        power = np.sum(np.abs(x) ** 2, axis=-1)
        g = np.where(power >= np.median(power, axis=1, keepdims=True), 0.9, 0.1)
    return np.stack([g, 1.0 - g], axis=1)  # (F, 2, T)


def _m_step(x, gamma, r_prev, phi_floor, eps):
    C = x.shape[-1]
    phi = np.maximum(_quad(x, np.linalg.inv(r_prev)) / C, phi_floor[:, None, None])
    w = gamma / phi
    r = np.swapaxes(w[..., None] * x[:, None], -1, -2) @ np.conj(x)[:, None]
    r /= np.maximum(gamma.sum(axis=-1), _TINY)[..., None, None]
    # the likelihood only sees phi * R, so pin the scale of R to trace C
    scale = np.maximum(np.real(np.trace(r, axis1=-2, axis2=-1)), _TINY) / C
    r /= scale[..., None, None]
    phi = phi * scale[..., None]
    r = _floor_eigenvalues(r, eps)
    pi = np.clip(gamma.mean(axis=-1), _TINY, None)
    return r, phi, pi


def _e_step(x, r, phi, pi):
    logp = _component_loglik(x, r, phi) + np.log(pi)[..., None]
    top = logp.max(axis=1, keepdims=True)
    norm = top + np.log(np.sum(np.exp(logp - top), axis=1, keepdims=True))
    return np.exp(logp - norm), norm[:, 0, :].sum(axis=-1)


def directionality(r: np.ndarray) -> np.ndarray:
    """Principal eigenvalue over trace; 1 for rank one, 1/C for white."""
    vals = np.linalg.eigvalsh(0.5 * (r + _herm(r)))
    return vals[..., -1] / np.maximum(vals.sum(axis=-1), _TINY)


def cgmm_fit(s: ComplexSpectrogram, cfg: CgmmConfig = CgmmConfig(), init=None) -> CgmmResult:
    """EM for the per-bin two-component CGMM.

    ``init`` optionally fixes the initial responsibility of the first
    component (scalar or (F, T) array). Log-likelihood is recorded after
    every parameter update and never decreases.
    """
    if s.num_channels < 2:
        raise ValueError("CGMM masks need at least two channels")
    C, T = s.num_channels, s.num_frames
    if T < 2 * C:
        raise ValueError(f"{T} frames is too few for {C} channels (need >= {2 * C})")
    x = s.data.transpose(1, 2, 0)  # (F, T, C)
    F = x.shape[0]
    phi_floor = 1e-10 * np.maximum(np.mean(np.abs(x) ** 2, axis=(1, 2)), _TINY)

    gamma = _initial_responsibilities(x, cfg, init)
    r = np.broadcast_to(np.eye(C, dtype=complex), (F, 2, C, C)).copy()
    r, phi, pi = _m_step(x, gamma, r, phi_floor, cfg.eps)
    gamma, ll = _e_step(x, r, phi, pi)
    history = [ll]
    for _ in range(cfg.iterations):
        cand = _m_step(x, gamma, r, phi_floor, cfg.eps)
        g_new, ll_new = _e_step(x, *cand)
        # the eigenvalue floor can undo the M-step's gain in bins with
        # near-singular covariances; such bins keep their previous fit
        ok = ll_new >= ll
        r = np.where(ok[:, None, None, None], cand[0], r)
        phi = np.where(ok[:, None, None], cand[1], phi)
        pi = np.where(ok[:, None], cand[2], pi)
        gamma = np.where(ok[:, None, None], g_new, gamma)
        ll = np.where(ok, ll_new, ll)
        history.append(ll)

    # speech = the component whose masked covariance is more directional
    covs = np.stack([estimate_covariances(s, gamma[:, k]) for k in range(2)], axis=1)
    swap = directionality(covs[:, 1]) > directionality(covs[:, 0])
    gamma = np.where(swap[:, None, None], gamma[:, ::-1], gamma)
    r = np.where(swap[:, None, None, None], r[:, ::-1], r)
    speech = gamma[:, 0]
    return CgmmResult(speech, 1.0 - speech, np.array(history), r)


def cgmm_masks(s: ComplexSpectrogram, cfg: CgmmConfig = CgmmConfig(), init=None):
    res = cgmm_fit(s, cfg, init)
    return res.speech, res.noise


def estimate_covariances(s: ComplexSpectrogram, mask: np.ndarray, eps: float = 0.0) -> np.ndarray:
    """Mask-weighted spatial covariance per bin, (F, C, C).

    ``eps`` adds eps * trace / C diagonal loading. Bins whose mask sums to
    zero fall back to the unmasked average.
    """
    x = s.data  # (C, F, T)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != x.shape[1:]:
        raise ValueError(f"mask shape {mask.shape} does not match spectrogram {x.shape[1:]}")
    total = mask.sum(axis=-1)
    empty = total <= 0
    if empty.any():
        log.warning("%d bins have an all-zero mask; using the unmasked average", int(empty.sum()))
        mask = np.where(empty[:, None], 1.0, mask)
        total = mask.sum(axis=-1)
    r = np.einsum("ft,cft,dft->fcd", mask, x, np.conj(x)) / total[:, None, None]
    if eps:
        C = x.shape[0]
        tr = np.real(np.trace(r, axis1=1, axis2=2))
        r = r + (eps * tr / C)[:, None, None] * np.eye(C)
    return r


def steering_vectors(speech_cov: np.ndarray) -> np.ndarray:
    """Unit-norm principal eigenvectors with the first entry real and >= 0."""
    _, vecs = np.linalg.eigh(0.5 * (speech_cov + _herm(speech_cov)))
    d = vecs[..., -1]
    ref = d[..., :1]
    phase = np.where(np.abs(ref) > 0, np.conj(ref) / np.maximum(np.abs(ref), _TINY), 1.0)
    return d * phase


def mvdr_weights(noise_cov: np.ndarray, speech_cov: np.ndarray | None = None,
                 steering: np.ndarray | None = None, max_cond: float = 1e12) -> BeamformerWeights:
    """w_f = R_n^-1 d / (d^H R_n^-1 d), d from the speech covariance unless given."""
    if steering is None:
        if speech_cov is None:
            raise ValueError("need a speech covariance or a steering vector")
        if speech_cov.shape != noise_cov.shape:
            raise ValueError("speech and noise covariances differ in shape")
        steering = steering_vectors(speech_cov)
    cond = np.linalg.cond(noise_cov)
    if np.any(~np.isfinite(cond) | (cond > max_cond)):
        raise np.linalg.LinAlgError(f"noise covariance is numerically singular (cond {np.max(cond):.3g})")
    num = np.linalg.solve(noise_cov, steering[..., None])[..., 0]
    den = np.sum(np.conj(steering) * num, axis=-1)
    return BeamformerWeights(num / den[..., None], steering)


def apply_beamformer(s: ComplexSpectrogram, w: BeamformerWeights) -> ComplexSpectrogram:
    weights = w.weights
    if weights.shape != (s.data.shape[1], s.num_channels):
        raise ValueError(f"weights {weights.shape} do not match spectrogram {s.data.shape}")
    y = np.einsum("fc,cft->ft", np.conj(weights), s.data)
    return s.with_data(y[None])


def cgmm_mvdr(s: ComplexSpectrogram, cfg: CgmmConfig = CgmmConfig()) -> ComplexSpectrogram:
    """Full chain: CGMM masks, masked covariances, MVDR, single-channel output.

    The unit-norm steering vector leaves the output scaled by 1/|d_0| per
    bin, which colours the spectrum; multiplying by d_0 maps the output
    back onto the speech image at channel 0.
    """
    speech, noise = cgmm_masks(s, cfg)
    r_s = estimate_covariances(s, speech, eps=cfg.eps)
    r_n = estimate_covariances(s, noise, eps=cfg.eps)
    w = mvdr_weights(r_n, r_s)
    y = apply_beamformer(s, w)
    return y.with_data(y.data * w.steering[None, :, :1])
