"""Loop-by-loop reference forward pass, one scalar at a time.

Independent of the vectorised layers: it only reads their parameters and
running statistics, and evaluates everything in inference mode.
"""
import math

import numpy as np


def conv(x, W, stride=1, pad=0, dil=1):
    C, T, F = x.shape
    O, _, k, _ = W.shape
    To = (T + 2 * pad - dil * (k - 1) - 1) // stride + 1
    Fo = (F + 2 * pad - dil * (k - 1) - 1) // stride + 1
    out = np.zeros((O, To, Fo))
    for o in range(O):
        for t in range(To):
            for f in range(Fo):
                acc = 0.0
                for c in range(C):
                    for i in range(k):
                        for j in range(k):
                            ti, fj = t * stride + i * dil - pad, f * stride + j * dil - pad
                            if 0 <= ti < T and 0 <= fj < F:
                                acc += W[o, c, i, j] * x[c, ti, fj]
                out[o, t, f] = acc
    return out


def conv_layer(x, layer):
    return conv(x, layer.params["W"], layer.stride, layer.padding, layer.dilation)


def bn(x, layer):
    """Inference batch norm; x is (C, ...) with the feature axis first."""
    out = np.empty_like(x)
    rm, rv = layer.buffers["running_mean"], layer.buffers["running_var"]
    g, b = layer.params["gamma"], layer.params["beta"]
    for c in range(x.shape[0]):
        scale = g[c] / math.sqrt(rv[c] + layer.eps)
        for idx in np.ndindex(x.shape[1:]):
            out[(c,) + idx] = (x[(c,) + idx] - rm[c]) * scale + b[c]
    return out


def relu(x):
    return np.vectorize(lambda v: v if v > 0 else 0.0)(x)


def linear(v, layer):
    W, b = layer.params["W"], layer.params.get("b")
    out = []
    for j in range(W.shape[1]):
        acc = 0.0 if b is None else b[j]
        for i in range(W.shape[0]):
            acc += v[i] * W[i, j]
        out.append(acc)
    return np.array(out)


def sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def bam(x, module):
    C, T, F = x.shape
    lin1, _, lin2, bn_c = module.channel_mlp.layers
    gap = np.array([sum(x[c, t, f] for t in range(T) for f in range(F)) / (T * F) for c in range(C)])
    m_c = bn(linear(relu(linear(gap, lin1)), lin2), bn_c)
    c1, _, c2, _, c3, bn_tf = module.tf_convs.layers
    pooled = np.array([[[sum(x[c, t, f] for c in range(C)) / C for f in range(F)] for t in range(T)]])
    h = relu(conv_layer(pooled, c1))
    h = relu(conv_layer(h, c2))
    m_tf = bn(conv_layer(h, c3), bn_tf)[0]
    mask = np.empty_like(x)
    for c in range(C):
        for t in range(T):
            for f in range(F):
                mask[c, t, f] = (sig(m_c[c]) + sig(m_tf[t, f])) / 2
    return x + x * mask, mask


def seq(x, layers):
    for layer in layers:
        name = type(layer).__name__
        if name == "Conv2d":
            x = conv_layer(x, layer)
        elif name == "BatchNorm":
            x = bn(x, layer)
        elif name == "ReLU":
            x = relu(x)
        else:
            raise TypeError(name)
    return x


def network(x, net):
    """(T, F) crop -> (embedding, logits)."""
    h = seq(x[None], net.stem.layers)
    for block in net.blocks.layers:
        main = seq(h, block.main.layers)
        skip = h if block.shortcut is None else seq(h, block.shortcut.layers)
        h = relu(main + skip)
        if block.bam is not None:
            h, _ = bam(h, block.bam)
    C, T, F = h.shape
    means, stds = [], []
    for c in range(C):
        for f in range(F):
            vals = [h[c, t, f] for t in range(T)]
            m = sum(vals) / T
            s = math.sqrt(sum((v - m) ** 2 for v in vals) / T)
            means.append(m)
            stds.append(max(s, 1e-9))
    emb = linear(np.array(means + stds), net.embed)
    return emb, linear(emb, net.speaker_head)
