"""Two-domain, two-class Gaussian toy for checking domain-adversarial training.

Each sample is a (frames, dims) map of unit Gaussian noise. The class
moves the mean of the first half of the dims, the domain moves the mean
of the second half, so the two factors are independent and both are
linearly separable from pooled statistics.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .nn.model import BlockSpec, MicroNetConfig, MicroResNetBam
from .nn.train import Dataset, TrainConfig, train


@dataclass(frozen=True)
class ToyConfig:
    per_cell: int = 96  # samples per (class, domain) cell
    frames: int = 16
    dims: int = 8
    class_sep: float = 0.6
    domain_shift: float = 0.6
    seed: int = 0
    net: MicroNetConfig = field(default_factory=lambda: MicroNetConfig(
        input_frames=16, input_dims=8, stem_channels=8, stem_stride=1,
        blocks=(BlockSpec(8, 4, 1, True), BlockSpec(8, 4, 2, True)),
        embedding_dim=8, num_speakers=2, domain_hidden=16))
    pretrain: TrainConfig = TrainConfig(batch_size=32, learning_rate=0.05, decay_every=10, epochs=10,
                                        crop_frames=16)
    # the discriminator runs 20x faster than the extractor so that it stays
    # near its best response; a lagging one lets the extractor merely flip it
    finetune: TrainConfig = TrainConfig(batch_size=32, learning_rate=0.02, decay_every=20, epochs=60,
                                        crop_frames=16, lam=0.5, domain_lr_scale=20.0, seed=1)


def make_toy(cfg: ToyConfig, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    half = cfg.dims // 2
    feats, ys, ds = [], [], []
    for y in (0, 1):
        for d in (0, 1):
            base = np.zeros(cfg.dims)
            base[:half] = cfg.class_sep * (2 * y - 1)
            base[half:] = cfg.domain_shift * (2 * d - 1)
            for _ in range(cfg.per_cell):
                feats.append(base + rng.normal(size=(cfg.frames, cfg.dims)))
                ys.append(y)
                ds.append(d)
    order = rng.permutation(len(feats))
    return Dataset([feats[i] for i in order], np.array(ys)[order], np.array(ds)[order])


def embed_all(net: MicroResNetBam, data: Dataset) -> np.ndarray:
    net.eval()
    return net.forward(np.stack(data.features)).embedding


def fit_logistic(x: np.ndarray, y: np.ndarray, l2: float = 1e-3):
    """Binary logistic regression on standardised inputs; returns a predictor."""
    mu, sd = x.mean(axis=0), x.std(axis=0) + 1e-12
    z = np.hstack([(x - mu) / sd, np.ones((len(x), 1))])
    sign = 2.0 * y - 1

    def objective(w):
        m = sign * (z @ w)
        loss = np.mean(np.logaddexp(0.0, -m)) + 0.5 * l2 * w[:-1] @ w[:-1]
        g = -(z.T @ (sign / (1 + np.exp(m)))) / len(z)
        g[:-1] += l2 * w[:-1]
        return loss, g

    w = minimize(objective, np.zeros(z.shape[1]), jac=True, method="L-BFGS-B").x
    return lambda q: (np.hstack([(q - mu) / sd, np.ones((len(q), 1))]) @ w > 0).astype(int)


def probe_accuracy(train_x, train_y, test_x, test_y) -> float:
    predict = fit_logistic(train_x, train_y)
    return float(np.mean(predict(test_x) == test_y))


@dataclass
class ToyResult:
    domain_acc_dat: float
    domain_acc_base: float
    class_acc_dat: float
    class_acc_base: float
    history: dict
    nets: dict = field(default_factory=dict)


def run_dat_toy(cfg: ToyConfig = ToyConfig()) -> ToyResult:
    """Pre-train speaker-only, then fine-tune two copies: with and without DAT.

    Probes are fitted on embeddings of a fresh training draw and scored on
    a held-out draw.
    """
    train_set = make_toy(cfg, cfg.seed)
    probe_fit = make_toy(cfg, cfg.seed + 1000)
    probe_eval = make_toy(cfg, cfg.seed + 2000)
    net = MicroResNetBam(cfg.net)
    pre = train(net, train_set, cfg.pretrain, "speaker")
    base, dat = net, copy.deepcopy(net)
    h_base = train(base, train_set, cfg.finetune, "speaker")
    h_dat = train(dat, train_set, cfg.finetune, "dat")

    accs = {}
    for name, model in (("base", base), ("dat", dat)):
        a, b = embed_all(model, probe_fit), embed_all(model, probe_eval)
        accs[name] = (probe_accuracy(a, probe_fit.domains, b, probe_eval.domains),
                      probe_accuracy(a, probe_fit.speakers, b, probe_eval.speakers))
    return ToyResult(accs["dat"][0], accs["base"][0], accs["dat"][1], accs["base"][1],
                     {"pretrain": pre, "base": h_base, "dat": h_dat}, {"base": base, "dat": dat})
