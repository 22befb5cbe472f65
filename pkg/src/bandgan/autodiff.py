"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only the operations needed by the generator/discriminator networks and the
CycleGAN losses are provided. Every op records its parents and a backward
closure on the output tensor; :func:`backward` walks the recorded graph in
reverse topological order. Shapes are explicit everywhere: apart from the
per-channel affine parameters of :func:`instance_norm` nothing broadcasts.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ShapeError, UsageError

__all__ = [
    "Tensor",
    "as_tensor",
    "add",
    "scale",
    "concat",
    "pad2d",
    "conv2d",
    "conv_transpose2d",
    "instance_norm",
    "relu",
    "leaky_relu",
    "tanh",
    "mse_loss",
    "l1_loss",
    "tensor_sum",
    "backward",
    "gradient_check",
    "GradCheckReport",
]


class Tensor:
    """An n-d array node in the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = ""):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def values(self) -> np.ndarray:
        return self.data.ravel()

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __getitem__(self, index) -> "Tensor":
        return _slice(self, index)

    def __add__(self, other) -> "Tensor":
        return add(self, other)

    def __sub__(self, other) -> "Tensor":
        return add(self, scale(other, -1.0))

    def __mul__(self, factor) -> "Tensor":
        return scale(self, factor)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward_fn, op) -> Tensor:
    # Graph edges are only recorded when some parent needs a gradient.
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward_fn, op)
    return Tensor(data, op=op)


# ---------------------------------------------------------------------------
# elementwise / structural ops

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")

    def _bw(g):
        return g, g

    return _result(a.data + b.data, (a, b), _bw, "add")


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)
    factor = float(factor)

    def _bw(g):
        return (g * factor,)

    return _result(a.data * a.dtype.type(factor), (a,), _bw, "scale")


def _slice(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def _bw(g):
        full = np.zeros_like(a.data)
        full[index] += g
        return (full,)

    return _result(np.ascontiguousarray(out), (a,), _bw, "slice")


def concat(tensors, axis: int = 0) -> Tensor:
    """Join tensors along ``axis``; all other dims must agree."""
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape[:axis] + t.shape[axis + 1:] for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def _bw(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, _bw, "concat")


def pad2d(x, pads: tuple[int, int, int, int]) -> Tensor:
    """Zero-pad the last two axes by (top, bottom, left, right)."""
    x = as_tensor(x)
    top, bottom, left, right = pads
    if min(pads) < 0:
        raise ShapeError(f"pad2d: negative padding {pads}")
    width = [(0, 0)] * (x.data.ndim - 2) + [(top, bottom), (left, right)]
    out = np.pad(x.data, width)
    h, w = x.shape[-2:]

    def _bw(g):
        return (g[..., top:top + h, left:left + w],)

    return _result(out, (x,), _bw, "pad2d")


def tensor_sum(x) -> Tensor:
    x = as_tensor(x)

    def _bw(g):
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return _result(np.asarray(x.data.sum()), (x,), _bw, "sum")


# ---------------------------------------------------------------------------
# convolution

def _check_conv_shapes(x: np.ndarray, w: np.ndarray, in_axis: int, name: str):
    if x.ndim != 4:
        raise ShapeError(f"{name}: input must be rank 4 (batch, channels, H, W), got {x.shape}")
    if w.ndim != 4:
        raise ShapeError(f"{name}: kernel must be rank 4, got {w.shape}")
    if x.shape[1] != w.shape[in_axis]:
        raise ShapeError(f"{name}: input has {x.shape[1]} channels, kernel expects {w.shape[in_axis]}")


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (B, C, Ho, Wo, kh, kw) view; no copy until tensordot
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def _transposed_correlate(g: np.ndarray, kernel: np.ndarray, stride: int, out_hw: tuple[int, int]) -> np.ndarray:
    """Overlap-add each input position's kernel footprint into a (B, C, *out_hw) array.

    ``g`` is (B, K, H, W) and ``kernel`` is (K, C, kh, kw). Implemented as a
    correlation of the zero-dilated input with the flipped kernel.
    """
    b, k, h, w = g.shape
    kh, kw = kernel.shape[2:]
    dh, dw = (h - 1) * stride + 1, (w - 1) * stride + 1
    gp = np.zeros((b, k, dh + 2 * (kh - 1), dw + 2 * (kw - 1)), dtype=g.dtype)
    gp[:, :, kh - 1:kh - 1 + dh:stride, kw - 1:kw - 1 + dw:stride] = g
    flipped = kernel[:, :, ::-1, ::-1]
    out = np.tensordot(_windows(gp, kh, kw, 1), flipped, axes=([1, 4, 5], [0, 2, 3])).transpose(0, 3, 1, 2)
    full_h, full_w = out.shape[2:]
    if (full_h, full_w) == tuple(out_hw):
        return np.ascontiguousarray(out)
    result = np.zeros((b, kernel.shape[1]) + tuple(out_hw), dtype=g.dtype)
    result[:, :, :min(full_h, out_hw[0]), :min(full_w, out_hw[1])] = out[:, :, :out_hw[0], :out_hw[1]]
    return result


def _conv2d_backward(g, x_padded, kernel, stride, padding, in_shape, need_input=True):
    """Return (d_input, d_kernel) for a cross-correlation."""
    kh, kw = kernel.shape[2:]
    win = _windows(x_padded, kh, kw, stride)
    d_kernel = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
    if not need_input:
        return None, d_kernel
    d_padded = _transposed_correlate(g, kernel, stride, x_padded.shape[2:])
    h, w = in_shape[2:]
    return d_padded[:, :, padding:padding + h, padding:padding + w], d_kernel


def conv2d(x, kernel, stride: int = 1, padding: int = 0, bias=None) -> Tensor:
    """2-D cross-correlation with symmetric zero padding.

    ``kernel`` has shape (out_ch, in_ch, kh, kw); ``bias`` is optional,
    one value per output channel.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check_conv_shapes(x.data, kernel.data, 1, "conv2d")
    kh, kw = kernel.shape[2:]
    ho = conv_output_size(x.shape[2], kh, stride, padding)
    wo = conv_output_size(x.shape[3], kw, stride, padding)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: non-positive output size ({ho}, {wo}) for input {x.shape}, kernel {kernel.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    out = np.tensordot(_windows(xp, kh, kw, stride), kernel.data, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (kernel.shape[0],):
            raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {kernel.shape[0]} output channels")
        out += bias.data[None, :, None, None]
        parents.append(bias)

    def _bw(g):
        dx, dk = _conv2d_backward(g, xp, kernel.data, stride, padding, x.shape, x.requires_grad)
        grads = [dx, dk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _result(out, parents, _bw, "conv2d")


def conv_transpose_output_size(size: int, kernel: int, stride: int, padding: int, output_padding: int) -> int:
    return (size - 1) * stride - 2 * padding + kernel + output_padding


def _conv_transpose2d_backward(g, x, kernel, stride, padding, output_padding):
    kh, kw = kernel.shape[2:]
    h, w = x.shape[2:]
    full_h = (h - 1) * stride + kh + output_padding
    full_w = (w - 1) * stride + kw + output_padding
    g_full = np.zeros(g.shape[:2] + (full_h, full_w), dtype=g.dtype)
    g_full[:, :, padding:padding + g.shape[2], padding:padding + g.shape[3]] = g
    win = _windows(g_full, kh, kw, stride)[:, :, :h, :w]
    dx = np.tensordot(win, kernel, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    dk = np.tensordot(x, win, axes=([0, 2, 3], [0, 2, 3]))
    return np.ascontiguousarray(dx), dk


def conv_transpose2d(x, kernel, stride: int = 2, padding: int = 0, output_padding: int = 0, bias=None) -> Tensor:
    """Transposed convolution (the adjoint of :func:`conv2d`).

    ``kernel`` has shape (in_ch, out_ch, kh, kw). With kernel 3, stride 2,
    padding 1 and output_padding 1 the output is exactly twice the input,
    undoing the stride-2 conv shape formula on even sizes.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check_conv_shapes(x.data, kernel.data, 0, "conv_transpose2d")
    if output_padding >= max(stride, 1) or output_padding > padding:
        raise ShapeError("conv_transpose2d: output_padding must be < stride and <= padding")
    kh, kw = kernel.shape[2:]
    ho = conv_transpose_output_size(x.shape[2], kh, stride, padding, output_padding)
    wo = conv_transpose_output_size(x.shape[3], kw, stride, padding, output_padding)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv_transpose2d: non-positive output size ({ho}, {wo})")
    full = _transposed_correlate(x.data, kernel.data, stride,
                                 ((x.shape[2] - 1) * stride + kh + output_padding,
                                  (x.shape[3] - 1) * stride + kw + output_padding))
    out = np.ascontiguousarray(full[:, :, padding:padding + ho, padding:padding + wo])
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (kernel.shape[1],):
            raise ShapeError("conv_transpose2d: bias shape mismatch")
        out += bias.data[None, :, None, None]
        parents.append(bias)

    def _bw(g):
        dx, dk = _conv_transpose2d_backward(g, x.data, kernel.data, stride, padding, output_padding)
        grads = [dx, dk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _result(out, parents, _bw, "conv_transpose2d")


# ---------------------------------------------------------------------------
# normalization and activations

def instance_norm(x, gain, bias, epsilon: float = 1e-5) -> Tensor:
    """Normalize each (sample, channel) plane to zero mean, unit variance, then apply gain/bias."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if x.data.ndim != 4:
        raise ShapeError(f"instance_norm: input must be rank 4, got {x.shape}")
    c = x.shape[1]
    if gain.shape != (c,) or bias.shape != (c,):
        raise ShapeError(f"instance_norm: gain/bias must have shape ({c},)")
    mean = x.data.mean(axis=(2, 3), keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=(2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + x.dtype.type(epsilon))
    xhat = centered * inv_std
    out = xhat * gain.data[None, :, None, None] + bias.data[None, :, None, None]
    n = x.shape[2] * x.shape[3]

    def _bw(g):
        dxhat = g * gain.data[None, :, None, None]
        s1 = dxhat.sum(axis=(2, 3), keepdims=True)
        s2 = (dxhat * xhat).sum(axis=(2, 3), keepdims=True)
        dx = inv_std * (dxhat - s1 / n - xhat * (s2 / n))
        return dx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return _result(out, (x, gain, bias), _bw, "instance_norm")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def _bw(g):
        return (g * mask,)

    return _result(x.data * mask, (x,), _bw, "relu")


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    factor = np.where(x.data > 0, 1.0, slope).astype(x.dtype)

    def _bw(g):
        return (g * factor,)

    return _result(x.data * factor, (x,), _bw, "leaky_relu")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)

    def _bw(g):
        return (g * (1.0 - out * out),)

    return _result(out, (x,), _bw, "tanh")


# ---------------------------------------------------------------------------
# losses

def _loss_operands(pred, target, name):
    pred = as_tensor(pred)
    target = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"{name}: shape mismatch {pred.shape} vs {target.shape}")
    return pred, target


def mse_loss(pred, target) -> Tensor:
    """Mean of squared differences. ``target`` is treated as a constant."""
    pred, target = _loss_operands(pred, target, "mse_loss")
    diff = pred.data - target
    n = diff.size

    def _bw(g):
        return (diff * (2.0 * g / n),)

    return _result(np.asarray(np.mean(diff * diff)), (pred,), _bw, "mse_loss")


def l1_loss(pred, target) -> Tensor:
    """Mean absolute difference. ``target`` is treated as a constant."""
    pred, target = _loss_operands(pred, target, "l1_loss")
    diff = pred.data - target
    n = diff.size

    def _bw(g):
        return (np.sign(diff) * (g / n),)

    return _result(np.asarray(np.mean(np.abs(diff))), (pred,), _bw, "l1_loss")


# ---------------------------------------------------------------------------
# reverse pass

def _topological_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Mapping[str, Tensor] | None = None) -> dict[str, np.ndarray] | None:
    """Back-propagate from a scalar ``loss``.

    Leaf tensors with ``requires_grad`` receive ``.grad``. When ``params`` is
    given, a name -> gradient map is returned; parameters the loss does not
    reach get zeros.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward: loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(_topological_order(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
    if params is None:
        return None
    return {name: (t.grad if t.grad is not None else np.zeros_like(t.data)) for name, t in params.items()}


# ---------------------------------------------------------------------------
# finite-difference verification

@dataclass
class GradCheckReport:
    """Outcome of :func:`gradient_check`.

    ``errors`` maps each input name to ``max|analytic - numeric|`` divided by
    the larger of the two gradients' max-abs values.
    """

    errors: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-5
    analytic: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    numeric: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def max_rel_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale_ = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)))
    if scale_ == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric))) / scale_


def gradient_check(
    f: Callable[[Mapping[str, Tensor]], Tensor],
    inputs: Mapping[str, np.ndarray],
    step: float = 1e-5,
    tolerance: float = 1e-5,
    analytic_dtype=np.float64,
    max_elements: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare :func:`backward` against central differences.

    ``f`` maps a dict of tensors to a scalar tensor. Numeric derivatives are
    always taken in float64; the analytic pass runs in ``analytic_dtype`` so
    the float32 training path can be checked against a float64 reference.
    ``max_elements`` caps the number of randomly chosen coordinates probed per
    input.
    """
    if step <= 0:
        raise UsageError("gradient_check: step must be positive")
    ref = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    tensors = {k: Tensor(v.astype(analytic_dtype), requires_grad=True) for k, v in ref.items()}
    analytic = backward(f(tensors), tensors)
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)

    def evaluate(values):
        return float(f({k: Tensor(v) for k, v in values.items()}).item())

    for name, value in ref.items():
        flat = value.ravel()
        coords = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            coords = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        numeric = np.zeros(coords.size)
        for n, idx in enumerate(coords):
            orig = flat[idx]
            flat[idx] = orig + step
            hi = evaluate(ref)
            flat[idx] = orig - step
            lo = evaluate(ref)
            flat[idx] = orig
            numeric[n] = (hi - lo) / (2.0 * step)
        a = np.asarray(analytic[name], dtype=np.float64).ravel()[coords]
        report.analytic[name] = a
        report.numeric[name] = numeric
        report.errors[name] = relative_error(a, numeric)
    return report
