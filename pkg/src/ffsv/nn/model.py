"""Micro ResNet-BAM speaker embedding network with a domain-adversarial head."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import (
    BatchNorm,
    Conv2d,
    GradReverse,
    Layer,
    Linear,
    ReLU,
    Sequential,
    StatPool,
    sigmoid,
    softmax_cross_entropy,
)


# float64 sigmoid rounds to exactly 1.0 above ~36.7; clamping the branch
# outputs keeps every mask entry strictly inside (0, 1)
_PRE_CLIP = 36.0


def _clamped_sigmoid(m):
    return sigmoid(np.clip(m, -_PRE_CLIP, _PRE_CLIP)), np.abs(m) < _PRE_CLIP


class Bam(Layer):
    """Bottleneck attention: F'' = F' + F' * (sigmoid(M_c) + sigmoid(M_tf)) / 2.

    Channel branch: global average pool -> C -> C/r -> C perceptron -> BN.
    Time-frequency branch: channel average pool -> 1x1 conv into C/r maps ->
    3x3 dilated conv -> 1x1 conv to one map -> BN.
    """

    def __init__(self, channels, reduction=4, dilation=2, rng=None):
        super().__init__()
        if channels % reduction:
            raise ValueError(f"reduction {reduction} must divide channel count {channels}")
        rng = rng if rng is not None else np.random.default_rng(0)
        hidden = channels // reduction
        self.channels = channels
        self.channel_mlp = Sequential(Linear(channels, hidden, rng), ReLU(), Linear(hidden, channels, rng),
                                      BatchNorm(channels, axis=1))
        self.tf_convs = Sequential(
            Conv2d(1, hidden, 1, rng=rng), ReLU(),
            Conv2d(hidden, hidden, 3, dilation=dilation, rng=rng), ReLU(),
            Conv2d(hidden, 1, 1, rng=rng), BatchNorm(1, axis=1))

    def children(self):
        return {"channel": self.channel_mlp, "tf": self.tf_convs}

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise ValueError(f"BAM built for {self.channels} channels, got {x.shape[1]}")
        m_c = self.channel_mlp.forward(x.mean(axis=(2, 3)))
        m_tf = self.tf_convs.forward(x.mean(axis=1, keepdims=True))
        (s_c, live_c), (s_tf, live_tf) = _clamped_sigmoid(m_c), _clamped_sigmoid(m_tf)
        mask = (s_c[:, :, None, None] + s_tf) / 2
        self._cache = (x, s_c * (1 - s_c) * live_c, s_tf * (1 - s_tf) * live_tf, mask)
        self.mask = mask
        return x * (1 + mask)

    def backward(self, dout):
        x, slope_c, slope_tf, mask = self._cache
        N, C, T, F = x.shape
        dx = dout * (1 + mask)
        dmask = dout * x
        d_mc = dmask.sum(axis=(2, 3)) / 2 * slope_c
        d_mtf = dmask.sum(axis=1, keepdims=True) / 2 * slope_tf
        dx += self.channel_mlp.backward(d_mc)[:, :, None, None] / (T * F)
        dx += self.tf_convs.backward(d_mtf) / C
        return dx


def bam_forward(fmap: np.ndarray, bam: Bam):
    """Apply ``bam`` to one (C, T, F) map; returns (refined, mask)."""
    out = bam.forward(np.asarray(fmap, dtype=np.float64)[None])
    return out[0], bam.mask[0]


class Bottleneck(Layer):
    def __init__(self, in_ch, out_ch, mid_ch, stride=1, use_bam=False, reduction=4, dilation=2, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.main = Sequential(
            Conv2d(in_ch, mid_ch, 1, rng=rng), BatchNorm(mid_ch), ReLU(),
            Conv2d(mid_ch, mid_ch, 3, stride=stride, rng=rng), BatchNorm(mid_ch), ReLU(),
            Conv2d(mid_ch, out_ch, 1, rng=rng), BatchNorm(out_ch))
        self.shortcut = None
        if stride != 1 or in_ch != out_ch:
            self.shortcut = Sequential(Conv2d(in_ch, out_ch, 1, stride=stride, padding=0, rng=rng),
                                       BatchNorm(out_ch))
        self.relu = ReLU()
        self.bam = Bam(out_ch, reduction, dilation, rng) if use_bam else None

    def children(self):
        kids = {"main": self.main}
        if self.shortcut is not None:
            kids["shortcut"] = self.shortcut
        if self.bam is not None:
            kids["bam"] = self.bam
        return kids

    def forward(self, x):
        skip = x if self.shortcut is None else self.shortcut.forward(x)
        out = self.relu.forward(self.main.forward(x) + skip)
        return self.bam.forward(out) if self.bam is not None else out

    def backward(self, dout):
        if self.bam is not None:
            dout = self.bam.backward(dout)
        dsum = self.relu.backward(dout)
        dx = self.main.backward(dsum)
        return dx + (dsum if self.shortcut is None else self.shortcut.backward(dsum))


@dataclass(frozen=True)
class BlockSpec:
    out_channels: int
    mid_channels: int
    stride: int = 1
    bam: bool = True


@dataclass(frozen=True)
class MicroNetConfig:
    input_frames: int = 256
    input_dims: int = 30
    stem_channels: int = 8
    stem_stride: int = 2
    blocks: tuple[BlockSpec, ...] = (BlockSpec(16, 4, 1, True), BlockSpec(16, 4, 2, True))
    reduction: int = 4
    bam_dilation: int = 2
    embedding_dim: int = 64
    num_speakers: int = 2
    domain_hidden: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.embedding_dim <= 0 or self.num_speakers < 1:
            raise ValueError("embedding_dim and num_speakers must be positive")


@dataclass
class ForwardResult:
    embedding: np.ndarray
    speaker_logits: np.ndarray
    domain_logits: np.ndarray | None = None


@dataclass
class LossResult:
    total: float
    speaker_losses: np.ndarray
    domain_losses: np.ndarray | None = None
    speaker_accuracy: float = 0.0
    extra: dict = field(default_factory=dict)


class MicroResNetBam(Layer):
    def __init__(self, cfg: MicroNetConfig = MicroNetConfig()):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.stem = Sequential(Conv2d(1, cfg.stem_channels, 3, stride=cfg.stem_stride, rng=rng),
                               BatchNorm(cfg.stem_channels), ReLU())
        blocks, ch = [], cfg.stem_channels
        for spec in cfg.blocks:
            blocks.append(Bottleneck(ch, spec.out_channels, spec.mid_channels, spec.stride, spec.bam,
                                     cfg.reduction, cfg.bam_dilation, rng))
            ch = spec.out_channels
        self.blocks = Sequential(*blocks)
        self.pool = StatPool()
        probe = self._trunk_shape()
        self.embed = Linear(2 * probe[0] * probe[2], cfg.embedding_dim, rng)
        self.speaker_head = Linear(cfg.embedding_dim, cfg.num_speakers, rng)
        self.grl = GradReverse(1.0)
        self.domain_head = Sequential(Linear(cfg.embedding_dim, cfg.domain_hidden, rng), ReLU(),
                                      Linear(cfg.domain_hidden, 2, rng))
        self.zero_grad()

    def children(self):
        return {"stem": self.stem, "blocks": self.blocks, "embed": self.embed,
                "speaker_head": self.speaker_head, "domain_head": self.domain_head}

    def _trunk_shape(self):
        t, f = self.cfg.input_frames, self.cfg.input_dims
        s = self.cfg.stem_stride
        t, f = (t - 1) // s + 1, (f - 1) // s + 1
        ch = self.cfg.stem_channels
        for spec in self.cfg.blocks:
            t, f = (t - 1) // spec.stride + 1, (f - 1) // spec.stride + 1
            ch = spec.out_channels
        return ch, t, f

    def _prepare(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.ndim == 3:
            x = x[:, None]
        expected = (1, self.cfg.input_frames, self.cfg.input_dims)
        if x.shape[1:] != expected:
            raise ValueError(f"input crop must be {expected}, got {x.shape[1:]}")
        return x

    def forward(self, x, with_domain=False) -> ForwardResult:
        h = self.blocks.forward(self.stem.forward(self._prepare(x)))
        emb = self.embed.forward(self.pool.forward(h))
        logits = self.speaker_head.forward(emb)
        dom = self.domain_head.forward(self.grl.forward(emb)) if with_domain else None
        return ForwardResult(emb, logits, dom)

    def embed_crops(self, x) -> np.ndarray:
        return self.forward(x).embedding

    def loss_and_backward(self, x, speakers, domains=None, lam=0.0) -> LossResult:
        """Forward, joint loss and gradients under the adversarial routing.

        Shared and speaker-head parameters receive the gradient of
        mean(L_y) - lam * mean(L_d); domain-head parameters receive the
        gradient of +mean(L_d) (the discriminator descends on its own loss).
        """
        self.zero_grad()
        use_domain = domains is not None
        x = self._prepare(x)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError("non-finite input")
        res = self.forward(x, with_domain=use_domain)
        speakers = np.asarray(speakers)
        l_y, d_logits = softmax_cross_entropy(res.speaker_logits, speakers)
        d_emb = self.speaker_head.backward(d_logits)
        l_d = None
        if use_domain:
            l_d, d_dom = softmax_cross_entropy(res.domain_logits, np.asarray(domains))
            self.grl.scale = lam
            d_emb = d_emb + self.grl.backward(self.domain_head.backward(d_dom))
        total = dat_loss(l_y, l_d, lam) if use_domain else float(np.mean(l_y))
        if not np.isfinite(total):
            raise FloatingPointError("loss is not finite")
        self.stem.backward(self.blocks.backward(self.pool.backward(self.embed.backward(d_emb))))
        acc = float(np.mean(np.argmax(res.speaker_logits, axis=1) == speakers))
        return LossResult(total, l_y, l_d, acc)

    def parameters(self):
        return {name: value for name, _, _, value in self.named_params()}

    def gradients(self):
        return {name: layer.grads[key] for name, layer, key, _ in self.named_params()}


def dat_loss(speaker_losses, domain_losses, lam: float) -> float:
    """mean(L_y) - lam * mean(L_d)."""
    l_y = np.asarray(speaker_losses, dtype=np.float64)
    l_d = np.asarray(domain_losses, dtype=np.float64)
    if l_y.shape != l_d.shape:
        raise ValueError("speaker and domain losses differ in length")
    if l_y.size == 0:
        raise ValueError("empty batch")
    return float(np.mean(l_y) - lam * np.mean(l_d))
