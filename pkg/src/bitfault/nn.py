"""Dense float64 layer stack with exact reverse-mode gradients.

``forward`` and ``backward`` are pure in the model parameters: per-call
caches live in locals, so concurrent calls against a shared model are safe.
Weighted layers hold either float weights or quantized codes (see
``quantize``); biases stay float in both modes and are never attacked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FLOAT = np.float64


class ShapeError(ValueError):
    """Batch or layer shapes that do not fit together."""


class ModeError(RuntimeError):
    """Operation not available in the model's current parameter mode."""


class _WeightedLayer:
    """Shared storage for layers owning a weight tensor (float or quantized)."""

    kind = "?"
    weighted = True

    def __init__(self, weight, bias=None):
        self.weight = np.array(weight, dtype=FLOAT)
        out = self.weight.shape[0]
        self.bias = np.zeros(out, FLOAT) if bias is None else np.array(bias, dtype=FLOAT)
        if self.bias.shape != (out,):
            raise ShapeError(f"{self.kind}: bias shape {self.bias.shape} != ({out},)")
        self.q = None  # quantize.QuantizedLayer once quantized

    @property
    def quantized(self):
        return self.q is not None

    @property
    def weight_shape(self):
        return self.q.codes.shape if self.q is not None else self.weight.shape

    def effective_weight(self):
        """Float view used by inference: codes * step when quantized."""
        if self.q is not None:
            return self.q.dequantize()
        if self.weight is None:
            raise ModeError(f"{self.kind}: no float weights and no codes")
        return self.weight

    def _copy_params_to(self, other):
        other.bias = self.bias.copy()
        other.weight = None if self.weight is None else self.weight.copy()
        other.q = None if self.q is None else self.q.clone()


class FullyConnected(_WeightedLayer):
    kind = "fc"

    def __init__(self, weight, bias=None):
        super().__init__(weight, bias)
        if self.weight.ndim != 2:
            raise ShapeError(f"fc: weight must be (out, in), got {self.weight.shape}")

    def out_shape(self, in_shape):
        out, nin = self.weight_shape
        if in_shape != (nin,):
            raise ShapeError(f"fc: expects flat input ({nin},), got {in_shape}")
        return (out,)

    def forward(self, x):
        w = self.effective_weight()
        return x @ w.T + self.bias, x

    def backward(self, gout, cache):
        x = cache
        w = self.effective_weight()
        return gout @ w, gout.T @ x, gout.sum(axis=0)

    def clone(self):
        other = FullyConnected.__new__(FullyConnected)
        self._copy_params_to(other)
        return other


class Conv2d(_WeightedLayer):
    kind = "conv2d"

    def __init__(self, weight, bias=None, stride=1, padding=0):
        super().__init__(weight, bias)
        if self.weight.ndim != 4:
            raise ShapeError(f"conv2d: weight must be (out_c, in_c, kh, kw), got {self.weight.shape}")
        if stride < 1 or padding < 0:
            raise ShapeError(f"conv2d: bad stride={stride} / padding={padding}")
        self.stride = int(stride)
        self.padding = int(padding)

    def out_shape(self, in_shape):
        oc, ic, kh, kw = self.weight_shape
        if len(in_shape) != 3 or in_shape[0] != ic:
            raise ShapeError(f"conv2d: expects ({ic}, h, w) input, got {in_shape}")
        _, h, w = in_shape
        oh = (h + 2 * self.padding - kh) // self.stride + 1
        ow = (w + 2 * self.padding - kw) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(f"conv2d: kernel {kh}x{kw} too large for input {h}x{w} (padding={self.padding})")
        return (oc, oh, ow)

    def forward(self, x):
        oc, ic, kh, kw = self.weight_shape
        cols, oh, ow = _im2col(x, kh, kw, self.stride, self.padding)
        w2 = self.effective_weight().reshape(oc, -1)
        out = (w2 @ cols).reshape(x.shape[0], oc, oh, ow)
        out += self.bias[None, :, None, None]
        return out, (cols, x.shape, oh, ow)

    def backward(self, gout, cache):
        cols, x_shape, oh, ow = cache
        oc, ic, kh, kw = self.weight_shape
        n = x_shape[0]
        g2 = gout.reshape(n, oc, oh * ow)
        gw = np.einsum("nol,nkl->ok", g2, cols, optimize=True).reshape(self.weight_shape)
        gb = gout.sum(axis=(0, 2, 3))
        w2 = self.effective_weight().reshape(oc, -1)
        gcols = w2.T @ g2
        gx = _col2im(gcols, x_shape, kh, kw, self.stride, self.padding, oh, ow)
        return gx, gw, gb

    def clone(self):
        other = Conv2d.__new__(Conv2d)
        self._copy_params_to(other)
        other.stride = self.stride
        other.padding = self.padding
        return other


class ReLU:
    kind = "relu"
    weighted = False

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        return np.maximum(x, 0.0), x > 0.0

    def backward(self, gout, cache):
        return gout * cache, None, None

    def clone(self):
        return ReLU()


class MaxPool:
    kind = "maxpool"
    weighted = False

    def __init__(self, size=2):
        if size < 1:
            raise ShapeError(f"maxpool: size must be >= 1, got {size}")
        self.size = int(size)

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool: expects (c, h, w) input, got {in_shape}")
        c, h, w = in_shape
        if h % self.size or w % self.size:
            raise ShapeError(f"maxpool: input {h}x{w} not divisible by window {self.size}")
        return (c, h // self.size, w // self.size)

    def forward(self, x):
        n, c, h, w = x.shape
        k = self.size
        oh, ow = h // k, w // k
        windows = x.reshape(n, c, oh, k, ow, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, k * k)
        idx = windows.argmax(axis=-1)  # ties -> first element, deterministic
        out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
        return out, (idx, x.shape)

    def backward(self, gout, cache):
        idx, (n, c, h, w) = cache
        k = self.size
        oh, ow = h // k, w // k
        gwin = np.zeros((n, c, oh, ow, k * k), FLOAT)
        np.put_along_axis(gwin, idx[..., None], gout[..., None], axis=-1)
        gx = gwin.reshape(n, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return gx, None, None

    def clone(self):
        return MaxPool(self.size)


class Flatten:
    kind = "flatten"
    weighted = False

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, gout, cache):
        return gout.reshape(cache), None, None

    def clone(self):
        return Flatten()


def _im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((n, c, kh, kw, oh, ow), FLOAT)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.reshape(n, c * kh * kw, oh * ow), oh, ow


def _col2im(gcols, x_shape, kh, kw, stride, pad, oh, ow):
    n, c, h, w = x_shape
    gc = gcols.reshape(n, c, kh, kw, oh, ow)
    gxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), FLOAT)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += gc[:, :, i, j]
    return gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp


class ModelGraph:
    """Ordered layer stack with a fixed per-sample input shape.

    Shape compatibility between adjacent layers is checked once at
    construction; errors name the offending layer.
    """

    def __init__(self, layers, input_shape):
        self.layers = list(layers)
        if not self.layers:
            raise ShapeError("model must have at least one layer")
        self.input_shape = tuple(int(d) for d in input_shape)
        self.layer_shapes = self._infer_shapes()

    def _infer_shapes(self):
        shapes = []
        cur = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                cur = layer.out_shape(cur)
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({layer.kind}): {e}") from None
            shapes.append(cur)
        return shapes

    @property
    def out_shape(self):
        return self.layer_shapes[-1]

    @property
    def num_classes(self):
        out = self.out_shape
        if len(out) != 1:
            raise ShapeError(f"model output is not a logit vector: {out}")
        return out[0]

    def weighted_indices(self):
        return tuple(i for i, l in enumerate(self.layers) if l.weighted)

    @property
    def mode(self):
        flags = {self.layers[i].quantized for i in self.weighted_indices()}
        if len(flags) > 1:
            raise ModeError("model has a mix of float and quantized layers")
        return "quantized" if flags == {True} else "float"

    def num_weights(self):
        return sum(int(np.prod(self.layers[i].weight_shape)) for i in self.weighted_indices())

    def clone(self):
        return ModelGraph([l.clone() for l in self.layers], self.input_shape)


def _check_batch(model, batch):
    x = np.asarray(batch, FLOAT)
    if x.ndim < 1 or x.shape[1:] != model.input_shape:
        raise ShapeError(f"model input: expected (n, {', '.join(map(str, model.input_shape))}), got {x.shape}")
    return x


def _run_forward(model, batch, want_caches):
    x = _check_batch(model, batch)
    caches = []
    for layer in model.layers:
        x, cache = layer.forward(x)
        caches.append(cache if want_caches else None)
    return x, caches


def forward(model, batch):
    """Logits for a batch; parameters are read, never written."""
    return _run_forward(model, batch, want_caches=False)[0]


def _check_targets(targets, num_classes, n):
    t = np.asarray(targets)
    if t.shape != (n,):
        raise ShapeError(f"targets: expected ({n},), got {t.shape}")
    if not np.issubdtype(t.dtype, np.integer):
        raise ValueError(f"targets must be integer class indices, got dtype {t.dtype}")
    if t.size and (t.min() < 0 or t.max() >= num_classes):
        raise ValueError(f"targets out of range [0, {num_classes})")
    return t.astype(np.int64)


def cross_entropy(logits, targets):
    """Mean negative log-softmax of the target classes.

    Non-finite logits yield a non-finite loss rather than raising, so callers
    can detect saturation-driven blowups and halt cleanly.
    """
    z = np.asarray(logits, FLOAT)
    if z.ndim != 2:
        raise ShapeError(f"logits must be (n, classes), got {z.shape}")
    t = _check_targets(targets, z.shape[1], z.shape[0])
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        m = z.max(axis=1, keepdims=True)
        s = z - m
        lse = np.log(np.exp(s).sum(axis=1))
        losses = lse - s[np.arange(len(t)), t]
        return float(losses.mean())


def _softmax(z):
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)


@dataclass
class GradientMap:
    """Loss gradients w.r.t. the float view of every weighted layer's weights.

    In quantized mode this is the gradient at the dequantized weights, which
    the straight-through estimator also treats as the gradient at the original
    float weights.
    """

    loss: float
    weight_grads: dict
    bias_grads: dict
    finite: bool


def backward(model, batch, targets):
    """Cross-entropy loss and exact parameter gradients for a batch.

    Pure in the model: gradients come back in a fresh :class:`GradientMap`.
    Non-finite values propagate into the map (``finite=False``) instead of
    raising.
    """
    logits, caches = _run_forward(model, batch, want_caches=True)
    t = _check_targets(targets, logits.shape[1], logits.shape[0])
    loss = cross_entropy(logits, t)
    n = logits.shape[0]
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        g = _softmax(logits)
        g[np.arange(n), t] -= 1.0
        g /= n
        weight_grads, bias_grads = {}, {}
        for i in reversed(range(len(model.layers))):
            g, gw, gb = model.layers[i].backward(g, caches[i])
            if model.layers[i].weighted:
                weight_grads[i] = gw
                bias_grads[i] = gb
    finite = bool(np.isfinite(loss)) and all(
        np.isfinite(gw).all() for gw in weight_grads.values()
    )
    return GradientMap(loss, weight_grads, bias_grads, finite)


@dataclass
class EvalResult:
    top1: float
    top5: float | None
    loss: float


def evaluate(model, images, labels, batch_size=256):
    """Top-1 / top-5 accuracy and mean loss over a labelled split, chunked.

    top5 is None for models with fewer than 10 output classes.
    """
    x = np.asarray(images, FLOAT)
    y = _check_targets(labels, model.num_classes, x.shape[0])
    want5 = model.num_classes >= 10
    n = x.shape[0]
    if n == 0:
        raise ValueError("evaluate: empty split")
    hit1 = hit5 = 0
    loss_sum = 0.0
    for lo in range(0, n, batch_size):
        xb, yb = x[lo : lo + batch_size], y[lo : lo + batch_size]
        logits = forward(model, xb)
        loss_sum += cross_entropy(logits, yb) * len(yb)
        hit1 += int((logits.argmax(axis=1) == yb).sum())
        if want5:
            part = np.argpartition(logits, -5, axis=1)[:, -5:]
            hit5 += int((part == yb[:, None]).any(axis=1).sum())
    return EvalResult(hit1 / n, hit5 / n if want5 else None, loss_sum / n)


def predict(model, images, batch_size=512):
    """Argmax class labels, chunked to bound memory."""
    x = np.asarray(images, FLOAT)
    out = np.empty(x.shape[0], np.int64)
    for lo in range(0, x.shape[0], batch_size):
        out[lo : lo + batch_size] = forward(model, x[lo : lo + batch_size]).argmax(axis=1)
    return out
