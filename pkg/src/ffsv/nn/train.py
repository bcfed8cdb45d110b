"""SGD training, crop handling and embedding extraction."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..audio_io import MultichannelWaveform
from ..dsp import MfccConfig, NoSpeechError, VadConfig, apply_vad, energy_vad, frame_log_energy, mfcc
from .model import MicroResNetBam

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 0.1
    lr_decay: float = 0.1
    decay_every: int = 5  # epochs
    epochs: int = 10
    crop_frames: int = 256
    lam: float = 1.0  # adversarial weight for the DAT stage
    domain_lr_scale: float = 1.0  # discriminator learning-rate multiplier
    seed: int = 0

    def __post_init__(self):
        if min(self.batch_size, self.epochs, self.crop_frames, self.decay_every) < 1:
            raise ValueError("batch_size, epochs, crop_frames and decay_every must be positive")
        if not (self.learning_rate > 0 and self.lr_decay > 0 and self.domain_lr_scale > 0):
            raise ValueError("learning rate and decay must be positive")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValueError("lam must be finite and non-negative")

    def lr_at(self, epoch: int) -> float:
        return self.learning_rate * self.lr_decay ** (epoch // self.decay_every)


@dataclass
class Dataset:
    """Variable-length feature matrices (frames, dims) with integer labels."""

    features: list
    speakers: np.ndarray
    domains: np.ndarray | None = None

    def __post_init__(self):
        self.speakers = np.asarray(self.speakers, dtype=np.int64)
        if len(self.features) != len(self.speakers):
            raise ValueError("features and speaker labels differ in length")
        if self.domains is not None:
            self.domains = np.asarray(self.domains, dtype=np.int64)
            if len(self.domains) != len(self.speakers):
                raise ValueError("features and domain labels differ in length")

    def __len__(self):
        return len(self.features)


@dataclass
class TrainHistory:
    epoch_loss: list = field(default_factory=list)
    epoch_accuracy: list = field(default_factory=list)
    step_loss: list = field(default_factory=list)


def repeat_pad(feats: np.ndarray, length: int) -> np.ndarray:
    """Tile an utterance end to end until it covers ``length`` frames."""
    feats = np.asarray(feats)
    if len(feats) == 0:
        raise ValueError("cannot pad an empty utterance")
    reps = -(-length // len(feats))
    return np.concatenate([feats] * reps)[:length] if reps > 1 else feats


def random_crop(feats, length, rng) -> np.ndarray:
    feats = repeat_pad(feats, length)
    start = int(rng.integers(0, len(feats) - length + 1))
    return feats[start:start + length]


def center_crop(feats, length) -> np.ndarray:
    feats = repeat_pad(feats, length)
    start = (len(feats) - length) // 2
    return feats[start:start + length]


def sgd_step(net, lr: float, domain_lr_scale: float = 1.0) -> None:
    for name, layer, key, value in net.named_params():
        value -= (lr * domain_lr_scale if name.startswith("domain_head.") else lr) * layer.grads[key]


def train(net: MicroResNetBam, data: Dataset, cfg: TrainConfig = TrainConfig(), stage: str = "speaker") -> TrainHistory:
    """Train in place.

    ``stage="speaker"`` optimises speaker cross-entropy only;
    ``stage="dat"`` adds the domain head behind gradient reversal with
    weight ``cfg.lam``.
    """
    if stage not in ("speaker", "dat"):
        raise ValueError(f"unknown stage {stage!r}")
    if len(np.unique(data.speakers)) < 2:
        raise ValueError("training needs at least two speakers")
    if stage == "dat" and (data.domains is None or len(np.unique(data.domains)) < 2):
        raise ValueError("the adversarial stage needs at least two domains")
    rng = np.random.default_rng(cfg.seed)
    net.train()
    hist = TrainHistory()
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(len(data))
        losses, correct = [], 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x = np.stack([random_crop(data.features[i], cfg.crop_frames, rng) for i in idx])
            doms = data.domains[idx] if stage == "dat" else None
            res = net.loss_and_backward(x, data.speakers[idx], doms, cfg.lam if stage == "dat" else 0.0)
            sgd_step(net, lr, cfg.domain_lr_scale)
            hist.step_loss.append(res.total)
            losses.append(res.total * len(idx))
            correct += res.speaker_accuracy * len(idx)
        hist.epoch_loss.append(float(np.sum(losses) / len(data)))
        hist.epoch_accuracy.append(float(correct / len(data)))
        log.info("%s epoch %d lr %.4g loss %.4f acc %.3f", stage, epoch, lr, hist.epoch_loss[-1],
                 hist.epoch_accuracy[-1])
    net.eval()
    return hist


def embed_features(net: MicroResNetBam, feats: np.ndarray) -> np.ndarray:
    """Inference-mode embedding of one (frames, dims) matrix, centre-cropped."""
    crop = center_crop(feats, net.cfg.input_frames)
    was_training = net.training
    net.eval()
    try:
        return net.forward(crop[None]).embedding[0]
    finally:
        net.train(was_training)


def speech_features(w: MultichannelWaveform, mfcc_cfg: MfccConfig = MfccConfig(),
                    vad_cfg: VadConfig = VadConfig()) -> np.ndarray:
    """MFCC frames kept by the energy VAD.

    Digital silence (every frame at the energy floor) has no speech even
    though the tie rule would keep all of its frames.
    """
    energy = frame_log_energy(w, vad_cfg)
    if np.all(energy <= np.log(vad_cfg.energy_floor)):
        raise NoSpeechError("input is silent")
    return apply_vad(mfcc(w, mfcc_cfg), energy_vad(w, vad_cfg))


def extract_embedding(w: MultichannelWaveform, net: MicroResNetBam, mfcc_cfg: MfccConfig = MfccConfig(),
                      vad_cfg: VadConfig = VadConfig()) -> np.ndarray:
    return embed_features(net, speech_features(w, mfcc_cfg, vad_cfg))
