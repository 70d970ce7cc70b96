"""
Differentiable op catalog.

Each op computes its output with numpy and, when any input requires a
gradient, records a closure returning the exact vector-Jacobian product for
every input.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from dhalab.exceptions import ShapeError

from .tensor import DTYPE, Tensor, as_tensor, current_graph, is_grad_enabled


def _emit(kind, inputs, data, vjp):
    out = Tensor._wrap(data)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        current_graph().record(kind, inputs, out, vjp)
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(kind, a.shape, b.shape) from None


# elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _emit("add", (a, b), a.data + b.data,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _emit("sub", (a, b), a.data - b.data,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _emit("mul", (a, b), a.data * b.data,
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    return _emit("div", (a, b), a.data / b.data,
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a):
    a = as_tensor(a)
    return _emit("neg", (a,), -a.data, lambda g: (-g,))


def relu(x):
    mask = x.data > 0
    return _emit("relu", (x,), np.where(mask, x.data, 0.0), lambda g: (g * mask,))


# shape ops

def reshape(x, shape):
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, shape) from None
    return _emit("reshape", (x,), data, lambda g: (g.reshape(x.shape),))


def index(x, key):
    try:
        data = np.array(x.data[key])
    except IndexError as exc:
        raise ShapeError("index", x.shape, detail=str(exc)) from None

    def vjp(g):
        full = np.zeros(x.shape, dtype=DTYPE)
        np.add.at(full, key, g)
        return (full,)

    return _emit("index", (x,), data, vjp)


def stack(tensors):
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError("stack", *sorted(shapes))
    data = np.stack([t.data for t in tensors])
    return _emit("stack", tuple(tensors), data, lambda g: tuple(g[i] for i in range(len(tensors))))


# reductions

def sum(x, axis=None, keepdims=False):  # noqa: A001
    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _emit("sum", (x,), x.data.sum(axis=axis, keepdims=keepdims), vjp)


def mean(x, axis=None, keepdims=False):
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def weighted_sum(values, weights):
    """Sum of `values` scaled by `weights`; `values` may be a list of scalar losses."""
    if isinstance(values, (list, tuple)):
        values = stack(values)
    values, weights = as_tensor(values), as_tensor(weights)
    if values.shape != weights.shape:
        raise ShapeError("weighted_sum", values.shape, weights.shape)
    return sum(mul(values, weights))


def mix(weights, tensors):
    """sum_k weights[k] * tensors[k] for equally shaped tensors and a 1-D weight vector."""
    weights = as_tensor(weights)
    tensors = [as_tensor(t) for t in tensors]
    if weights.shape != (len(tensors),):
        raise ShapeError("mix", weights.shape, (len(tensors),), detail="one weight per candidate output")
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError("mix", *sorted(shapes))
    w = weights.data
    data = np.zeros(tensors[0].shape, dtype=DTYPE)
    for k, t in enumerate(tensors):
        data = data + w[k] * t.data

    def vjp(g):
        dweights = np.array([(g * t.data).sum() for t in tensors])
        return (dweights,) + tuple(w[k] * g for k in range(len(tensors)))

    return _emit("mix", (weights, *tensors), data, vjp)


# linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError("matmul", a.shape, b.shape, detail="operands must be 1-D or 2-D")
    inner_b = b.shape[0]
    if a.shape[-1] != inner_b:
        raise ShapeError("matmul", a.shape, b.shape)

    def vjp(g):
        if a.ndim == 1 and b.ndim == 1:
            return g * b.data, g * a.data
        if a.ndim == 1:
            return b.data @ g, np.outer(a.data, g)
        if b.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        return g @ b.data.T, a.data.T @ g

    return _emit("matmul", (a, b), a.data @ b.data, vjp)


def affine(x, scale, shift):
    """Per-channel scale and shift on axis 1 of a (N, C) or (N, C, H, W) tensor."""
    scale, shift = as_tensor(scale), as_tensor(shift)
    channels = x.shape[1] if x.ndim >= 2 else None
    if channels is None or scale.shape != (channels,) or shift.shape != (channels,):
        raise ShapeError("affine", x.shape, scale.shape, shift.shape)
    view = (1, channels) + (1,) * (x.ndim - 2)
    axes = (0,) + tuple(range(2, x.ndim))
    s = scale.data.reshape(view)
    data = x.data * s + shift.data.reshape(view)

    def vjp(g):
        return g * s, (g * x.data).sum(axis=axes), g.sum(axis=axes)

    return _emit("affine", (x, scale, shift), data, vjp)


# losses

def softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    return _emit("softmax", (x,), y,
                 lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def log_softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - logz
    p = np.exp(out)
    return _emit("log_softmax", (x,), out,
                 lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def cross_entropy(logits, labels, reduction="mean"):
    """Softmax cross-entropy; `reduction` is "mean", "sum" or "none"."""
    if logits.ndim == 1:
        logits = reshape(logits, (1, logits.shape[0]))
        labels = np.atleast_1d(labels)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("cross_entropy", logits.shape, labels.shape)
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ShapeError("cross_entropy", logits.shape, labels.shape, detail="label out of range")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    losses = -logp[rows, labels]
    delta = np.exp(logp)
    delta[rows, labels] -= 1.0

    if reduction == "none":
        return _emit("cross_entropy", (logits,), losses, lambda g: (delta * g[:, None],))
    if reduction == "sum":
        return _emit("cross_entropy", (logits,), losses.sum(), lambda g: (delta * g,))
    if reduction == "mean":
        return _emit("cross_entropy", (logits,), losses.mean(), lambda g: (delta * (g / n),))
    raise ValueError(f"unknown reduction {reduction!r}")


def mse_loss(prediction, target):
    diff = sub(prediction, target)
    return mean(mul(diff, diff))


# convolution and pooling

def _out_extent(op, size, kernel, stride, padding, dilation, shapes):
    extent = (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1
    if extent <= 0:
        raise ShapeError(op, *shapes, detail="kernel larger than padded input")
    return extent


def _windows(padded, kh, kw, stride, dilation, ho, wo):
    view = sliding_window_view(padded, (dilation * (kh - 1) + 1, dilation * (kw - 1) + 1), axis=(2, 3))
    return view[:, :, ::stride, ::stride, ::dilation, ::dilation][:, :, :ho, :wo]


def _scatter_windows(target, window_grads, kh, kw, stride, dilation, ho, wo):
    for i in range(kh):
        for j in range(kw):
            r, c = i * dilation, j * dilation
            target[:, :, r:r + stride * (ho - 1) + 1:stride, c:c + stride * (wo - 1) + 1:stride] += window_grads[..., i, j]
    return target


def _pad(array, padding, value=0.0):
    if padding == 0:
        return array
    return np.pad(array, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=value)


def _unpad(array, padding):
    if padding == 0:
        return array
    return array[:, :, padding:-padding, padding:-padding]


def conv2d(x, weight, stride=1, padding=0, dilation=1, groups=1):
    """2-D cross-correlation of (N, C, H, W) input with (O, C/groups, kh, kw) weight."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d", x.shape, weight.shape, detail="expected 4-D input and weight")
    n, c, h, w = x.shape
    o, cg, kh, kw = weight.shape
    if c != cg * groups or o % groups:
        raise ShapeError("conv2d", x.shape, weight.shape, detail=f"groups={groups}")
    ho = _out_extent("conv2d", h, kh, stride, padding, dilation, (x.shape, weight.shape))
    wo = _out_extent("conv2d", w, kw, stride, padding, dilation, (x.shape, weight.shape))

    padded = _pad(x.data, padding)
    win = _windows(padded, kh, kw, stride, dilation, ho, wo).reshape(n, groups, cg, ho, wo, kh, kw)
    wg = weight.data.reshape(groups, o // groups, cg, kh, kw)
    data = np.einsum("ngchwij,gocij->ngohw", win, wg).reshape(n, o, ho, wo)

    def vjp(g):
        gg = g.reshape(n, groups, o // groups, ho, wo)
        dweight = np.einsum("ngohw,ngchwij->gocij", gg, win).reshape(weight.shape)
        dwin = np.einsum("ngohw,gocij->ngchwij", gg, wg).reshape(n, c, ho, wo, kh, kw)
        dpad = _scatter_windows(np.zeros(padded.shape, dtype=DTYPE), dwin, kh, kw, stride, dilation, ho, wo)
        return _unpad(dpad, padding), dweight

    return _emit("conv2d", (x, weight), data, vjp)


def max_pool2d(x, kernel=3, stride=1, padding=1):
    if x.ndim != 4:
        raise ShapeError("max_pool2d", x.shape, detail="expected 4-D input")
    n, c, h, w = x.shape
    ho = _out_extent("max_pool2d", h, kernel, stride, padding, 1, (x.shape,))
    wo = _out_extent("max_pool2d", w, kernel, stride, padding, 1, (x.shape,))
    padded = _pad(x.data, padding, value=-np.inf)
    flat = _windows(padded, kernel, kernel, stride, 1, ho, wo).reshape(n, c, ho, wo, kernel * kernel)
    arg = flat.argmax(axis=-1)
    data = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        routed = np.zeros((n, c, ho, wo, kernel, kernel), dtype=DTYPE)
        for p in range(kernel * kernel):
            routed[..., p // kernel, p % kernel] = np.where(arg == p, g, 0.0)
        dpad = _scatter_windows(np.zeros(padded.shape, dtype=DTYPE), routed, kernel, kernel, stride, 1, ho, wo)
        return (_unpad(dpad, padding),)

    return _emit("max_pool2d", (x,), data, vjp)


def avg_pool2d(x, kernel=3, stride=1, padding=1):
    """Average pooling that excludes padded cells from the divisor."""
    if x.ndim != 4:
        raise ShapeError("avg_pool2d", x.shape, detail="expected 4-D input")
    n, c, h, w = x.shape
    ho = _out_extent("avg_pool2d", h, kernel, stride, padding, 1, (x.shape,))
    wo = _out_extent("avg_pool2d", w, kernel, stride, padding, 1, (x.shape,))
    padded = _pad(x.data, padding)
    ones = _pad(np.ones((1, 1, h, w), dtype=DTYPE), padding)
    counts = _windows(ones, kernel, kernel, stride, 1, ho, wo).sum(axis=(-2, -1))
    data = _windows(padded, kernel, kernel, stride, 1, ho, wo).sum(axis=(-2, -1)) / counts

    def vjp(g):
        share = np.broadcast_to((g / counts)[..., None, None], (n, c, ho, wo, kernel, kernel))
        dpad = _scatter_windows(np.zeros(padded.shape, dtype=DTYPE), share, kernel, kernel, stride, 1, ho, wo)
        return (_unpad(dpad, padding),)

    return _emit("avg_pool2d", (x,), data, vjp)


def global_avg_pool(x):
    return mean(x, axis=(2, 3))
