"""Numpy forward/backward for the two fixed toy architectures.

Tensors are plain ``numpy.ndarray`` objects. Each layer keeps a small cache
from the forward pass and the backward pass walks the layer list in reverse,
so gradients w.r.t. parameters and w.r.t. the input batch come out of one
sweep.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
import math

import numpy as np

ARCHITECTURES = ("mlp", "conv", "linear")
# mlp and conv see inputs shifted to be centered on mid-grey; linear is the raw affine map
INPUT_CENTER = {"mlp": 0.5, "conv": 0.5, "linear": 0.0}


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    """Raised when a loss or gradient stops being finite.

    ``index`` is the offending sample within the batch.
    """

    def __init__(self, message, index):
        super().__init__(message)
        self.index = index


@dataclass
class Model:
    arch: str
    input_shape: tuple
    classes: int
    params: "OrderedDict[str, np.ndarray]"
    hidden: int = 64
    eval_mode: bool = True

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def copy(self):
        return Model(self.arch, tuple(self.input_shape), self.classes,
                     OrderedDict((k, v.copy()) for k, v in self.params.items()),
                     self.hidden, self.eval_mode)

    def astype(self, dtype):
        m = self.copy()
        for k in m.params:
            m.params[k] = m.params[k].astype(dtype)
        return m

    def num_params(self):
        return sum(p.size for p in self.params.values())


@dataclass
class GradientResult:
    loss_value: float
    param_grads: "OrderedDict[str, np.ndarray]"
    input_grad: np.ndarray | None = None
    per_sample_loss: np.ndarray | None = field(default=None, repr=False)


def param_shapes(arch, input_shape, classes, hidden=64):
    """Parameter names and shapes fully determined by the architecture."""
    input_shape = tuple(int(s) for s in input_shape)
    if arch == "mlp":
        d = int(np.prod(input_shape))
        return OrderedDict([
            ("fc1.weight", (hidden, d)), ("fc1.bias", (hidden,)),
            ("fc2.weight", (hidden, hidden)), ("fc2.bias", (hidden,)),
            ("fc3.weight", (classes, hidden)), ("fc3.bias", (classes,)),
        ])
    if arch == "linear":
        d = int(np.prod(input_shape))
        return OrderedDict([("fc.weight", (classes, d)), ("fc.bias", (classes,))])
    if arch == "conv":
        if len(input_shape) != 3:
            raise ShapeError(f"conv expects (channels, H, W) input shape, got {input_shape}")
        c, h, w = input_shape
        if h % 4 or w % 4:
            raise ShapeError(f"conv needs H and W divisible by 4, got {h}x{w}")
        return OrderedDict([
            ("conv1.weight", (16, c, 3, 3)), ("conv1.bias", (16,)),
            ("conv2.weight", (32, 16, 3, 3)), ("conv2.bias", (32,)),
            ("fc.weight", (classes, 32 * (h // 4) * (w // 4))), ("fc.bias", (classes,)),
        ])
    raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")


def _fan_in(shape):
    return int(np.prod(shape[1:]))


def init_model(arch, input_shape, classes, seed=0, hidden=64, dtype=np.float64):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init from a seeded generator."""
    if isinstance(input_shape, int):
        input_shape = (input_shape,)
    shapes = param_shapes(arch, input_shape, classes, hidden)
    rng = np.random.default_rng(seed)
    params = OrderedDict()
    fan = None
    for name, shape in shapes.items():
        if name.endswith(".weight"):
            fan = _fan_in(shape)
        bound = 1.0 / math.sqrt(fan)
        params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Model(arch, tuple(input_shape), classes, params, hidden)


def mlp(input_shape, classes, seed=0, hidden=64, dtype=np.float64):
    return init_model("mlp", input_shape, classes, seed, hidden, dtype)


def small_convnet(input_shape, classes, seed=0, dtype=np.float64):
    return init_model("conv", input_shape, classes, seed, dtype=dtype)


def linear(input_shape, classes, seed=0, dtype=np.float64):
    return init_model("linear", input_shape, classes, seed, dtype=dtype)


# -- layers ---------------------------------------------------------------

def _dense_fwd(x, w, b):
    return x @ w.T + b


def _dense_bwd(g, x, w):
    return g @ w, g.T @ x, g.sum(axis=0)


def _conv_fwd(x, w, b):
    # stride 1, zero padding 1, 3x3 kernels
    n, c, h, wd = x.shape
    xp = np.zeros((n, c, h + 2, wd + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    s0, s1, s2, s3 = xp.strides
    win = np.lib.stride_tricks.as_strided(xp, (n, c, h, wd, 3, 3), (s0, s1, s2, s3, s2, s3), writeable=False)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * wd, c * 9)
    out = (cols @ w.reshape(len(w), -1).T).reshape(n, h, wd, len(w))
    out = out.transpose(0, 3, 1, 2) + b[None, :, None, None]
    return out, win


def _conv_bwd(g, x, win, w):
    n, c, h, wd = x.shape
    dw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # o,c,3,3
    db = g.sum(axis=(0, 2, 3))
    dxp = np.zeros((n, c, h + 2, wd + 2), dtype=g.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + h, j:j + wd] += np.tensordot(g, w[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1], dw, db


def _pool_fwd(x):
    n, c, h, w = x.shape
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    # argmax returns the first index on ties
    idx = blocks.argmax(axis=-1)
    out = blocks.max(axis=-1)
    return out, idx


def _pool_bwd(g, idx, shape):
    n, c, h, w = shape
    blocks = np.zeros((n, c, h // 2, w // 2, 4), dtype=g.dtype)
    np.put_along_axis(blocks, idx[..., None], g[..., None], axis=-1)
    return blocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)


def _check_batch(model, batch):
    batch = np.asarray(batch)
    expected = tuple(model.input_shape)
    if batch.ndim != len(expected) + 1 or tuple(batch.shape[1:]) != expected:
        raise ShapeError(f"expected input shape (batch, {', '.join(map(str, expected))}), "
                         f"got {tuple(batch.shape)}")
    return batch.astype(model.dtype, copy=False)


def _forward_cached(model, x):
    p = model.params
    cache = []
    center = INPUT_CENTER[model.arch]
    if center:
        x = x - x.dtype.type(center)
    if model.arch in ("mlp", "linear"):
        h = x.reshape(len(x), -1)
        if model.arch == "linear":
            cache.append(("dense", "fc", h))
            return _dense_fwd(h, p["fc.weight"], p["fc.bias"]), cache
        for i, name in enumerate(("fc1", "fc2", "fc3")):
            cache.append(("dense", name, h))
            h = _dense_fwd(h, p[name + ".weight"], p[name + ".bias"])
            if i < 2:
                cache.append(("relu", h > 0))
                h = np.maximum(h, 0)
        return h, cache
    h = x
    for name in ("conv1", "conv2"):
        out, win = _conv_fwd(h, p[name + ".weight"], p[name + ".bias"])
        cache.append(("conv", name, h, win))
        h = out
        cache.append(("relu", h > 0))
        h = np.maximum(h, 0)
        pooled, idx = _pool_fwd(h)
        cache.append(("pool", idx, h.shape))
        h = pooled
    cache.append(("flatten", h.shape))
    h = h.reshape(len(h), -1)
    cache.append(("dense", "fc", h))
    return _dense_fwd(h, p["fc.weight"], p["fc.bias"]), cache


def _forward(model, x):
    # same arithmetic as _forward_cached without keeping anything for backprop
    p = model.params
    center = INPUT_CENTER[model.arch]
    if center:
        x = x - x.dtype.type(center)
    if model.arch == "linear":
        return _dense_fwd(x.reshape(len(x), -1), p["fc.weight"], p["fc.bias"])
    if model.arch == "mlp":
        h = x.reshape(len(x), -1)
        h = np.maximum(_dense_fwd(h, p["fc1.weight"], p["fc1.bias"]), 0)
        h = np.maximum(_dense_fwd(h, p["fc2.weight"], p["fc2.bias"]), 0)
        return _dense_fwd(h, p["fc3.weight"], p["fc3.bias"])
    h = x
    for name in ("conv1", "conv2"):
        h = np.maximum(_conv_fwd(h, p[name + ".weight"], p[name + ".bias"])[0], 0)
        n, c, hh, ww = h.shape
        h = h.reshape(n, c, hh // 2, 2, ww // 2, 2).max(axis=(3, 5))
    return _dense_fwd(h.reshape(len(h), -1), p["fc.weight"], p["fc.bias"])


def forward(model, batch):
    """Logits of shape (batch, classes)."""
    x = _check_batch(model, batch)
    return _forward(model, x)


def predict(model, batch):
    # argmax ties resolve to the lowest class index
    return forward(model, batch).argmax(axis=1)


def _backprop(model, cache, g, input_shape):
    p = model.params
    grads = {}
    for entry in reversed(cache):
        kind = entry[0]
        if kind == "dense":
            _, name, h = entry
            g, grads[name + ".weight"], grads[name + ".bias"] = _dense_bwd(g, h, p[name + ".weight"])
        elif kind == "relu":
            g = g * entry[1]
        elif kind == "pool":
            g = _pool_bwd(g, entry[1], entry[2])
        elif kind == "flatten":
            g = g.reshape(entry[1])
        elif kind == "conv":
            _, name, h, win = entry
            g, grads[name + ".weight"], grads[name + ".bias"] = _conv_bwd(g, h, win, p[name + ".weight"])
    ordered = OrderedDict((k, grads[k]) for k in p)
    return ordered, g.reshape(input_shape)


def backward(model, loss_fn, batch, labels, want_input_grad=False):
    """Mean-over-batch loss and its exact gradients.

    ``loss_fn`` is any loss object from :mod:`advlab.losses`.
    """
    x = _check_batch(model, batch)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (len(x),):
        raise ShapeError(f"expected {len(x)} labels, got shape {labels.shape}")
    logits, cache = _forward_cached(model, x)
    values = loss_fn.value(logits, labels)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise NonFiniteError(f"non-finite loss at sample {bad[0]}", int(bad[0]))
    n = len(x)
    g = loss_fn.grad(logits, labels) / n
    param_grads, input_grad = _backprop(model, cache, g, x.shape)
    return GradientResult(float(values.mean()), param_grads,
                          input_grad if want_input_grad else None, values)


def input_gradient(model, loss_fn, batch, labels):
    """Per-sample input gradients (not divided by the batch size)."""
    res = backward(model, loss_fn, batch, labels, want_input_grad=True)
    return res.input_grad * len(res.per_sample_loss), res.per_sample_loss


def _mean_loss(model, loss_fn, x, labels):
    return float(loss_fn.value(forward(model, x), labels).mean())


def finite_difference_gradient(model, loss_fn, batch, labels, h=1e-4, want_input_grad=True):
    """Central differences, one coordinate at a time. Meant as a test oracle."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = _check_batch(model, batch).astype(np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    m = model.astype(np.float64)
    grads = OrderedDict()
    for name, w in m.params.items():
        flat = w.reshape(-1)
        out = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = _mean_loss(m, loss_fn, x, labels)
            flat[i] = orig - h
            down = _mean_loss(m, loss_fn, x, labels)
            flat[i] = orig
            out[i] = (up - down) / (2 * h)
        grads[name] = out.reshape(w.shape)
    input_grad = None
    if want_input_grad:
        flat = x.reshape(-1)
        out = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = _mean_loss(m, loss_fn, x, labels)
            flat[i] = orig - h
            down = _mean_loss(m, loss_fn, x, labels)
            flat[i] = orig
            out[i] = (up - down) / (2 * h)
        input_grad = out.reshape(x.shape)
    return GradientResult(_mean_loss(m, loss_fn, x, labels), grads, input_grad)


def nonsmooth_margin(model, batch):
    """Distance of a batch from the model's non-differentiable set.

    The smallest |pre-activation| over all ReLUs and the smallest gap between the
    two largest positive entries of any max-pool window. Central differences with
    step h are only trustworthy when this is well above h.
    """
    x = _check_batch(model, batch)
    _, cache = _forward_cached(model, x)
    margin = np.inf
    p = model.params
    for i, entry in enumerate(cache):
        if entry[0] == "dense" and entry[1] in ("fc1", "fc2"):
            pre = _dense_fwd(entry[2], p[entry[1] + ".weight"], p[entry[1] + ".bias"])
            margin = min(margin, float(np.abs(pre).min()))
        elif entry[0] == "conv":
            pre, _ = _conv_fwd(entry[2], p[entry[1] + ".weight"], p[entry[1] + ".bias"])
            margin = min(margin, float(np.abs(pre).min()))
            n, c, h, w = pre.shape
            act = np.maximum(pre, 0)
            blocks = np.sort(act.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
                             .reshape(-1, 4), axis=1)
            live = blocks[:, 3] > 0
            if live.any():
                margin = min(margin, float((blocks[live, 3] - blocks[live, 2]).min()))
    return margin


def scalar_finite_difference(fn, w, h=1e-4):
    return (fn(w + h) - fn(w - h)) / (2 * h)


def relative_error(a, b, floor=1e-8):
    """Elementwise |a-b| / max(|a|, |b|, floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
