"""Layers with explicit forward and backward passes.

Every layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into ``self.grads`` (same keys as
``self.params``). Activations are float64 numpy arrays; feature maps are
laid out (batch, channels, time, frequency).
"""
from __future__ import annotations

import numpy as np


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.training = True

    def children(self):
        return {}

    def named_layers(self, prefix=""):
        yield prefix, self
        for name, child in self.children().items():
            yield from child.named_layers(f"{prefix}.{name}" if prefix else name)

    def named_params(self):
        for prefix, layer in self.named_layers():
            for k, v in layer.params.items():
                yield f"{prefix}.{k}" if prefix else k, layer, k, v

    def named_buffers(self):
        for prefix, layer in self.named_layers():
            for k, v in layer.buffers.items():
                yield f"{prefix}.{k}" if prefix else k, layer, k, v

    def zero_grad(self):
        for _, layer in self.named_layers():
            layer.grads = {k: np.zeros_like(v) for k, v in layer.params.items()}

    def train(self, mode: bool = True):
        for _, layer in self.named_layers():
            layer.training = mode
        return self

    def eval(self):
        return self.train(False)


def he_init(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Conv2d(Layer):
    def __init__(self, in_ch, out_ch, kernel=3, stride=1, padding=None, dilation=1, rng=None, bias=False):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.dilation = kernel, stride, dilation
        self.padding = dilation * (kernel - 1) // 2 if padding is None else padding
        self.params["W"] = he_init(rng, (out_ch, in_ch, kernel, kernel), in_ch * kernel * kernel)
        if bias:
            self.params["b"] = np.zeros(out_ch)
        self.zero_grad()

    def _out_size(self, n):
        return (n + 2 * self.padding - self.dilation * (self.kernel - 1) - 1) // self.stride + 1

    def _offsets(self):
        for i in range(self.kernel):
            for j in range(self.kernel):
                yield i * self.kernel + j, i * self.dilation, j * self.dilation

    def forward(self, x):
        N, C, T, F = x.shape
        if C != self.in_ch:
            raise ValueError(f"conv expects {self.in_ch} channels, got {C}")
        p, s = self.padding, self.stride
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        To, Fo = self._out_size(T), self._out_size(F)
        if To < 1 or Fo < 1:
            raise ValueError("input too small for convolution")
        cols = np.empty((N, C, self.kernel ** 2, To, Fo))
        for k, di, dj in self._offsets():
            cols[:, :, k] = xp[:, :, di:di + s * (To - 1) + 1:s, dj:dj + s * (Fo - 1) + 1:s]
        w = self.params["W"].reshape(self.out_ch, C, -1)
        out = np.tensordot(cols, w, axes=([1, 2], [1, 2])).transpose(0, 3, 1, 2)
        if "b" in self.params:
            out = out + self.params["b"][None, :, None, None]
        self._cache = (x.shape, xp.shape, cols)
        return out

    def backward(self, dout):
        xshape, xpshape, cols = self._cache
        N, C, T, F = xshape
        p, s = self.padding, self.stride
        To, Fo = dout.shape[2:]
        w = self.params["W"].reshape(self.out_ch, C, -1)
        self.grads["W"] += np.tensordot(dout, cols, axes=([0, 2, 3], [0, 3, 4])).reshape(self.params["W"].shape)
        if "b" in self.params:
            self.grads["b"] += dout.sum(axis=(0, 2, 3))
        dcols = np.tensordot(dout, w, axes=([1], [0]))  # (N, To, Fo, C, K)
        dxp = np.zeros(xpshape)
        for k, di, dj in self._offsets():
            dxp[:, :, di:di + s * (To - 1) + 1:s, dj:dj + s * (Fo - 1) + 1:s] += dcols[..., k].transpose(0, 3, 1, 2)
        return dxp[:, :, p:p + T, p:p + F] if p else dxp


class BatchNorm(Layer):
    """Batch normalisation over every axis except ``axis`` (the feature axis)."""

    def __init__(self, num_features, axis=1, momentum=0.1, eps=1e-5):
        super().__init__()
        self.axis, self.momentum, self.eps = axis, momentum, eps
        self.params["gamma"] = np.ones(num_features)
        self.params["beta"] = np.zeros(num_features)
        self.buffers["running_mean"] = np.zeros(num_features)
        self.buffers["running_var"] = np.ones(num_features)
        self.update_stats = True
        self.zero_grad()

    def _shape(self, x):
        shape = [1] * x.ndim
        shape[self.axis] = -1
        return shape

    def forward(self, x):
        red = tuple(a for a in range(x.ndim) if a != self.axis)
        shape = self._shape(x)
        if self.training:
            mean = x.mean(axis=red)
            var = x.var(axis=red)
            if self.update_stats:
                n = x.size // x.shape[self.axis]
                unbiased = var * n / max(n - 1, 1)
                m = self.momentum
                self.buffers["running_mean"] = (1 - m) * self.buffers["running_mean"] + m * mean
                self.buffers["running_var"] = (1 - m) * self.buffers["running_var"] + m * unbiased
        else:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(shape)) * inv.reshape(shape)
        self._cache = (xhat, inv, red, shape)
        return self.params["gamma"].reshape(shape) * xhat + self.params["beta"].reshape(shape)

    def backward(self, dout):
        xhat, inv, red, shape = self._cache
        self.grads["gamma"] += np.sum(dout * xhat, axis=red)
        self.grads["beta"] += np.sum(dout, axis=red)
        dxhat = dout * self.params["gamma"].reshape(shape)
        if not self.training:
            return dxhat * inv.reshape(shape)
        m = dout.size // dout.shape[self.axis]
        mean_dxhat = dxhat.sum(axis=red, keepdims=True) / m
        mean_dxhat_xhat = (dxhat * xhat).sum(axis=red, keepdims=True) / m
        return (dxhat - mean_dxhat - xhat * mean_dxhat_xhat) * inv.reshape(shape)


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dout):
        return np.where(self._mask, dout, 0.0)


class Linear(Layer):
    def __init__(self, in_features, out_features, rng=None, bias=True):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = he_init(rng, (in_features, out_features), in_features)
        if bias:
            self.params["b"] = np.zeros(out_features)
        self.zero_grad()

    def forward(self, x):
        self._x = x
        out = x @ self.params["W"]
        return out + self.params["b"] if "b" in self.params else out

    def backward(self, dout):
        self.grads["W"] += self._x.T @ dout
        if "b" in self.params:
            self.grads["b"] += dout.sum(axis=0)
        return dout @ self.params["W"].T


class Sequential(Layer):
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)

    def children(self):
        return {str(i): layer for i, layer in enumerate(self.layers)}

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class StatPool(Layer):
    """Temporal mean and population std per (channel, frequency) pair."""

    def __init__(self, std_floor=1e-9):
        super().__init__()
        self.std_floor = std_floor

    def forward(self, x):
        N, C, T, F = x.shape
        if T < 1:
            raise ValueError("statistic pooling needs at least one frame")
        flat = x.transpose(0, 1, 3, 2).reshape(N, C * F, T)
        mean = flat.mean(axis=-1)
        centred = flat - mean[..., None]
        std = np.sqrt(np.mean(centred ** 2, axis=-1))
        floored = std < self.std_floor
        std = np.where(floored, self.std_floor, std)
        self._cache = (x.shape, centred, std, floored)
        return np.concatenate([mean, std], axis=1)

    def backward(self, dout):
        (N, C, T, F), centred, std, floored = self._cache
        k = C * F
        dmean, dstd = dout[:, :k], dout[:, k:]
        dstd = np.where(floored, 0.0, dstd)
        dflat = dmean[..., None] / T + (dstd / std)[..., None] * centred / T
        return dflat.reshape(N, C, F, T).transpose(0, 1, 3, 2)


def stat_pool(fmap: np.ndarray, std_floor: float = 1e-9) -> np.ndarray:
    """Pool a single (C, T, F) feature map to its [means; stds] vector."""
    return StatPool(std_floor).forward(np.asarray(fmap, dtype=np.float64)[None])[0]


class GradReverse(Layer):
    """Identity forward; multiplies the incoming gradient by -scale backward."""

    def __init__(self, scale=1.0):
        super().__init__()
        self.scale = scale

    def forward(self, x):
        return x

    def backward(self, dout):
        return -self.scale * dout


def grl_forward(x):
    return x


def grl_backward(grad, scale):
    return -scale * np.asarray(grad)


def softmax_cross_entropy(logits, labels):
    """Per-sample cross-entropy and d(mean loss)/d(logits)."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))
    n = len(labels)
    losses = -logp[np.arange(n), labels]
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return losses, grad / n
