"""Differentiable primitives on 4-D tensors.

Forward math is plain numpy; each op builds a closure that maps the output
gradient back onto its inputs and registers it with the active graph via
:func:`frpose.tensor.record`.  Convolution runs as im2col + batched matmul;
transposed convolution is its exact adjoint (col2im scatter-add), which is
also what makes ``deconv2d`` forward equal ``conv2d``'s input gradient.

Gradients are only computed for inputs that require them, so e.g. the image
tensor at the network entry never pays for a col2im.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tensor import ShapeError, Tensor, record

__all__ = [
    "conv2d",
    "deconv2d",
    "batch_norm",
    "layer_norm_channels",
    "relu",
    "sigmoid",
    "softmax_spatial",
    "bilinear_resize",
    "concat_channels",
    "elementwise",
    "add",
    "mul",
    "sum_spatial",
    "max_pool2d",
    "weighted_mse",
]


# ---------------------------------------------------------------------------
# im2col / col2im


def _window_extents(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if span < 0:
        raise ShapeError(
            f"kernel {kernel} exceeds padded extent {size + 2 * padding}"
        )
    return span // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int,
            pad_value: float = 0.0) -> tuple[np.ndarray, int, int]:
    """Gather sliding windows into ``(N, C*kh*kw, out_h*out_w)`` columns."""
    n, c, h, w = x.shape
    out_h = _window_extents(h, kh, stride, padding)
    out_w = _window_extents(w, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                   constant_values=pad_value)
    cols = np.empty((n, c, kh, kw, out_h, out_w), dtype=x.dtype)
    for i in range(kh):
        rows = slice(i, i + stride * out_h, stride)
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, rows, j:j + stride * out_w:stride]
    return cols.reshape(n, c * kh * kw, out_h * out_w), out_h, out_w


def _col2im(cols: np.ndarray, x_shape: tuple, kh: int, kw: int, stride: int,
            padding: int, out_h: int, out_w: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add columns back onto the image."""
    n, c, h, w = x_shape
    acc = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    cols = cols.reshape(n, c, kh, kw, out_h, out_w)
    for i in range(kh):
        rows = slice(i, i + stride * out_h, stride)
        for j in range(kw):
            acc[:, :, rows, j:j + stride * out_w:stride] += cols[:, :, i, j]
    if padding:
        acc = acc[:, :, padding:padding + h, padding:padding + w]
    return np.ascontiguousarray(acc)


# ---------------------------------------------------------------------------
# convolution and its transpose


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate ``x`` (N,C,H,W) with ``weight`` (O,C,kh,kw)."""
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {ci}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: bad stride/padding ({stride}, {padding})")
    cols, out_h, out_w = _im2col(x.data, kh, kw, stride, padding)
    w_mat = weight.data.reshape(o, c * kh * kw)
    out = np.matmul(w_mat, cols).reshape(n, o, out_h, out_w)
    if bias is not None:
        if bias.shape != (1, o, 1, 1):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != (1, {o}, 1, 1)")
        out = out + bias.data
    y = Tensor(out)

    def backward(g: np.ndarray):
        g_mat = g.reshape(n, o, out_h * out_w)
        gx = gw = gb = None
        if x.requires_grad:
            gcols = np.matmul(w_mat.T, g_mat)
            gx = _col2im(gcols, x.shape, kh, kw, stride, padding, out_h, out_w)
        if weight.requires_grad:
            gw = np.einsum("nol,nkl->ok", g_mat, cols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3)).reshape(bias.shape)
        return (gx, gw) if bias is None else (gx, gw, gb)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record("conv2d", inputs, y, backward)


def deconv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0,
             output_padding: int = 0) -> Tensor:
    """Transposed convolution with ``weight`` laid out (in, out, kh, kw).

    Output extent per axis is ``(in - 1) * stride - 2 * padding + kernel
    + output_padding``.  Forward is the scatter adjoint of :func:`conv2d`,
    i.e. exactly the gradient a conv with the same geometry would push back
    onto its input.
    """
    n, c, h, w = x.shape
    ci, co, kh, kw = weight.shape
    if ci != c:
        raise ShapeError(f"deconv2d: input has {c} channels, weight expects {ci}")
    if not 0 <= output_padding < stride:
        raise ShapeError(
            f"deconv2d: output_padding {output_padding} must be < stride {stride}")
    out_h = (h - 1) * stride - 2 * padding + kh + output_padding
    out_w = (w - 1) * stride - 2 * padding + kw + output_padding
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"deconv2d: output extents ({out_h}, {out_w}) collapse")
    w_mat = weight.data.reshape(c, co * kh * kw)
    x_mat = x.data.reshape(n, c, h * w)
    cols = np.matmul(w_mat.T, x_mat)  # (n, co*kh*kw, h*w)
    out = _col2im(cols, (n, co, out_h, out_w), kh, kw, stride, padding, h, w)
    y = Tensor(out)

    def backward(g: np.ndarray):
        gcols, gh, gw_ = _im2col(g, kh, kw, stride, padding)
        assert (gh, gw_) == (h, w)
        gx = gweight = None
        if x.requires_grad:
            gx = np.matmul(w_mat, gcols).reshape(x.shape)
        if weight.requires_grad:
            gweight = np.einsum("nil,nkl->ik", x_mat, gcols).reshape(weight.shape)
        return gx, gweight

    return record("deconv2d", (x, weight), y, backward)


# ---------------------------------------------------------------------------
# normalization


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization with affine transform.

    In training mode the batch mean/variance (population variance) are used
    and folded into ``running_mean``/``running_var`` in place with the given
    momentum; in eval mode the running statistics are used and nothing is
    mutated.
    """
    n, c, h, w = x.shape
    if gamma.shape != (1, c, 1, 1) or beta.shape != (1, c, 1, 1):
        raise ShapeError(f"batch_norm: affine shapes must be (1, {c}, 1, 1)")
    if training:
        m = n * h * w
        if m == 1:
            raise ShapeError("batch_norm: cannot take batch statistics over a "
                             "single element (N*H*W == 1)")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    y = Tensor(gamma.data * xhat + beta.data)

    def backward(g: np.ndarray):
        ggamma = gbeta = gx = None
        if gamma.requires_grad:
            ggamma = (g * xhat).sum(axis=(0, 2, 3)).reshape(gamma.shape)
        if beta.requires_grad:
            gbeta = g.sum(axis=(0, 2, 3)).reshape(beta.shape)
        if x.requires_grad:
            istd = inv_std.reshape(1, c, 1, 1)
            dxhat = g * gamma.data
            if training:
                m = n * h * w
                dx_sum = dxhat.sum(axis=(0, 2, 3), keepdims=True)
                dxx_sum = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                gx = (istd / m) * (m * dxhat - dx_sum - xhat * dxx_sum)
            else:
                gx = dxhat * istd
        return gx, ggamma, gbeta

    return record("batch_norm", (x, gamma, beta), y, backward)


def layer_norm_channels(x: Tensor, gamma: Tensor, beta: Tensor,
                        eps: float = 1e-5) -> Tensor:
    """Normalize across the channel axis of a (N, C, 1, 1) tensor."""
    n, c, h, w = x.shape
    if h != 1 or w != 1:
        raise ShapeError(f"layer_norm_channels expects 1x1 spatial, got {x.shape}")
    if gamma.shape != (1, c, 1, 1) or beta.shape != (1, c, 1, 1):
        raise ShapeError(f"layer_norm_channels: affine shapes must be (1, {c}, 1, 1)")
    mean = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    y = Tensor(gamma.data * xhat + beta.data)

    def backward(g: np.ndarray):
        ggamma = gbeta = gx = None
        if gamma.requires_grad:
            ggamma = (g * xhat).sum(axis=0, keepdims=True).reshape(gamma.shape)
        if beta.requires_grad:
            gbeta = g.sum(axis=0, keepdims=True).reshape(beta.shape)
        if x.requires_grad:
            dxhat = g * gamma.data
            dx_sum = dxhat.sum(axis=1, keepdims=True)
            dxx_sum = (dxhat * xhat).sum(axis=1, keepdims=True)
            gx = (inv_std / c) * (c * dxhat - dx_sum - xhat * dxx_sum)
        return gx, ggamma, gbeta

    return record("layer_norm_channels", (x, gamma, beta), y, backward)


# ---------------------------------------------------------------------------
# pointwise


def relu(x: Tensor) -> Tensor:
    y = Tensor(np.maximum(x.data, 0.0))

    def backward(g: np.ndarray):
        return (g * (x.data > 0.0),)

    return record("relu", (x,), y, backward)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out[~pos] = ez / (1.0 + ez)
    y = Tensor(out)

    def backward(g: np.ndarray):
        return (g * out * (1.0 - out),)

    return record("sigmoid", (x,), y, backward)


def softmax_spatial(x: Tensor) -> Tensor:
    """Softmax over all spatial positions, independently per (image, channel).

    Max-subtraction keeps the exponentials bounded; per-map sums come out
    exactly 1 up to rounding.
    """
    d = x.data
    n, c, h, w = d.shape
    flat = d.reshape(n, c, h * w)
    z = flat - flat.max(axis=2, keepdims=True)
    e = np.exp(z)
    sm = e / e.sum(axis=2, keepdims=True)
    out = sm.reshape(n, c, h, w)
    y = Tensor(out)

    def backward(g: np.ndarray):
        dot = (g * out).sum(axis=(2, 3), keepdims=True)
        return (out * (g - dot),)

    return record("softmax_spatial", (x,), y, backward)


# ---------------------------------------------------------------------------
# resampling


def _interp_matrix(n_out: int, n_in: int, dtype) -> np.ndarray:
    """Dense 1-D bilinear interpolation matrix with half-pixel centers.

    Output coordinate ``o`` samples source position
    ``(o + 0.5) * n_in / n_out - 0.5``, clamped to the edges, so resizing to
    the same extent is exactly the identity.
    """
    mat = np.zeros((n_out, n_in), dtype=dtype)
    if n_out == n_in:
        np.fill_diagonal(mat, 1.0)
        return mat
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(mat, (rows, lo), (1.0 - frac).astype(dtype))
    np.add.at(mat, (rows, hi), frac.astype(dtype))
    return mat


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resample to (out_h, out_w) with half-pixel center alignment."""
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear_resize: bad target extents ({out_h}, {out_w})")
    n, c, h, w = x.shape
    wh = _interp_matrix(out_h, h, x.dtype)
    ww = _interp_matrix(out_w, w, x.dtype)
    out = np.einsum("nchw,oh,pw->ncop", x.data, wh, ww, optimize=True)
    y = Tensor(out)

    def backward(g: np.ndarray):
        gx = np.einsum("ncop,oh,pw->nchw", g, wh, ww, optimize=True)
        return (gx,)

    return record("bilinear_resize", (x,), y, backward)


# ---------------------------------------------------------------------------
# structure


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the channel axis; batch and spatial extents must agree."""
    if not tensors:
        raise ShapeError("concat_channels: need at least one tensor")
    n, _, h, w = tensors[0].shape
    for t in tensors[1:]:
        tn, _, th, tw = t.shape
        if (tn, th, tw) != (n, h, w):
            raise ShapeError(
                f"concat_channels: extents {t.shape} incompatible with "
                f"{tensors[0].shape} outside the channel axis")
    widths = [t.shape[1] for t in tensors]
    y = Tensor(np.concatenate([t.data for t in tensors], axis=1))
    bounds = np.cumsum([0] + widths)

    def backward(g: np.ndarray):
        return tuple(
            g[:, bounds[i]:bounds[i + 1]] if t.requires_grad else None
            for i, t in enumerate(tensors))

    return record("concat_channels", tuple(tensors), y, backward)


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    axes = tuple(ax for ax in range(4) if shape[ax] == 1 and g.shape[ax] > 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def elementwise(a: Tensor, b: Tensor, op: str = "add") -> Tensor:
    """Broadcasting add/mul; a broadcast axis must have extent 1 on one side."""
    for ax, (ea, eb) in enumerate(zip(a.shape, b.shape)):
        if ea != eb and 1 not in (ea, eb):
            raise ShapeError(
                f"elementwise: axis {ax} extents {ea} and {eb} cannot broadcast")
    if op == "add":
        y = Tensor(a.data + b.data)

        def backward(g: np.ndarray):
            ga = _reduce_to(g, a.shape) if a.requires_grad else None
            gb = _reduce_to(g, b.shape) if b.requires_grad else None
            return ga, gb
    elif op == "mul":
        y = Tensor(a.data * b.data)

        def backward(g: np.ndarray):
            ga = _reduce_to(g * b.data, a.shape) if a.requires_grad else None
            gb = _reduce_to(g * a.data, b.shape) if b.requires_grad else None
            return ga, gb
    else:
        raise ValueError(f"elementwise: unknown op {op!r}")
    return record(f"elementwise_{op}", (a, b), y, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "mul")


def sum_spatial(x: Tensor) -> Tensor:
    """Sum over both spatial axes, keeping them as size-1 extents."""
    n, c, h, w = x.shape
    y = Tensor(x.data.sum(axis=(2, 3), keepdims=True))

    def backward(g: np.ndarray):
        return (np.broadcast_to(g, x.shape).copy(),)

    return record("sum_spatial", (x,), y, backward)


def max_pool2d(x: Tensor, kernel: int, stride: int, padding: int = 0) -> Tensor:
    """Window max; gradient routes only to each window's argmax position."""
    if padding >= kernel:
        raise ShapeError(f"max_pool2d: padding {padding} must be < kernel {kernel}")
    n, c, h, w = x.shape
    cols, out_h, out_w = _im2col(x.data, kernel, kernel, stride, padding,
                                 pad_value=-np.inf)
    windows = cols.reshape(n, c, kernel * kernel, out_h * out_w)
    idx = windows.argmax(axis=2)
    out = np.take_along_axis(windows, idx[:, :, None, :], axis=2)
    y = Tensor(out.reshape(n, c, out_h, out_w))

    def backward(g: np.ndarray):
        gcols = np.zeros_like(windows)
        np.put_along_axis(gcols, idx[:, :, None, :],
                          g.reshape(n, c, 1, out_h * out_w), axis=2)
        gx = _col2im(gcols.reshape(n, c * kernel * kernel, out_h * out_w),
                     x.shape, kernel, kernel, stride, padding, out_h, out_w)
        return (gx,)

    return record("max_pool2d", (x,), y, backward)


# ---------------------------------------------------------------------------
# loss


def weighted_mse(pred: Tensor, target: Tensor, weights: np.ndarray,
                 reduction: str = "mean") -> Tensor:
    """Per-map mean squared error, weighted per (sample, channel).

    ``weights`` is (N, K); maps with weight 0 contribute nothing to either
    the value or the gradient.  ``reduction`` averages ("mean") or sums
    ("sum") the weighted per-map terms.
    """
    if pred.shape != target.shape:
        raise ShapeError(f"weighted_mse: {pred.shape} vs {target.shape}")
    n, k, h, w = pred.shape
    wmap = np.asarray(weights, dtype=pred.dtype).reshape(n, k, 1, 1)
    if reduction not in ("mean", "sum"):
        raise ValueError(f"weighted_mse: unknown reduction {reduction!r}")
    diff = pred.data - target.data
    per_map = (diff * diff).mean(axis=(2, 3), keepdims=True)
    total = (wmap * per_map).sum()
    scale = 1.0 / (n * k) if reduction == "mean" else 1.0
    y = Tensor(np.full((1, 1, 1, 1), total * scale, dtype=pred.dtype))

    def backward(g: np.ndarray):
        coeff = g.reshape(()) * scale * 2.0 / (h * w)
        gdiff = coeff * wmap * diff
        gp = gdiff if pred.requires_grad else None
        gt = -gdiff if target.requires_grad else None
        return gp, gt

    return record("weighted_mse", (pred, target), y, backward)
