"""Forward/backward kernels for the layers used by the recognition network.

Tensors are plain numpy arrays in NCHW order. Every backward function is the
exact gradient of its forward counterpart; there is no autodiff graph.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from deepfont.errors import DimensionError


def matmul(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner extents differ: {a.shape} x {b.shape}")
    return a @ b


def conv_output_size(size, kernel, stride, pad):
    span = size + 2 * pad - kernel
    if span < 0:
        raise DimensionError(f"kernel {kernel} larger than padded input {size + 2 * pad}")
    return span // stride + 1


COLS_BUDGET = 1 << 22  # max elements of one im2col buffer; larger batches are chunked


def _shifted(xp, i, j, stride, ho, wo):
    return xp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]


def _channel_major(x, pad):
    """(B, C, H, W) -> zero-padded contiguous (C, B, H + 2 pad, W + 2 pad)."""
    c, b = x.shape[1], x.shape[0]
    out = np.zeros((c, b, x.shape[2] + 2 * pad, x.shape[3] + 2 * pad), dtype=x.dtype)
    out[:, :, pad:pad + x.shape[2], pad:pad + x.shape[3]] = x.transpose(1, 0, 2, 3)
    return out


def _im2col(xp, kh, kw, stride, ho, wo):
    c, b = xp.shape[:2]
    cols = np.empty((kh, kw, c, b, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[i, j] = _shifted(xp, i, j, stride, ho, wo)
    return cols.reshape(kh * kw * c, b * ho * wo)


def _chunks(b, rows, ho, wo):
    step = max(1, COLS_BUDGET // max(1, rows * ho * wo))
    return [(s, min(b, s + step)) for s in range(0, b, step)]


def conv2d_forward(x, kernel, bias, stride=1, pad=0):
    """Cross-correlation of a B×C×H×W batch with an F×C×kh×kw kernel bank."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError("conv2d expects 4-D input and kernel")
    if x.shape[1] != kernel.shape[1]:
        raise DimensionError(f"input has {x.shape[1]} channels, kernel expects {kernel.shape[1]}")
    if stride < 1 or pad < 0:
        raise DimensionError("stride must be positive and pad non-negative")
    b = x.shape[0]
    f, c, kh, kw = kernel.shape
    ho = conv_output_size(x.shape[2], kh, stride, pad)
    wo = conv_output_size(x.shape[3], kw, stride, pad)
    dtype = np.result_type(x, kernel)
    kmat = kernel.transpose(0, 2, 3, 1).reshape(f, -1).astype(dtype)
    xp = _channel_major(x.astype(dtype, copy=False), pad)
    out = np.empty((b, f, ho, wo), dtype=dtype)
    for lo, hi in _chunks(b, kh * kw * c, ho, wo):
        cols = _im2col(xp[:, lo:hi], kh, kw, stride, ho, wo)
        res = (kmat @ cols).reshape(f, hi - lo, ho, wo)
        out[lo:hi] = res.transpose(1, 0, 2, 3)
    out += bias.reshape(1, -1, 1, 1)
    return out


def conv2d_backward(grad_out, x, kernel, stride=1, pad=0, need_input_grad=True):
    """Returns (grad_input, grad_kernel, grad_bias); grad_input is None when not requested."""
    b, c, h, w = x.shape
    f, _, kh, kw = kernel.shape
    ho = conv_output_size(h, kh, stride, pad)
    wo = conv_output_size(w, kw, stride, pad)
    if grad_out.shape != (b, f, ho, wo):
        raise DimensionError(f"grad_out shape {grad_out.shape} != {(b, f, ho, wo)}")
    dtype = np.result_type(grad_out, kernel, x)
    kmat = kernel.transpose(0, 2, 3, 1).reshape(f, -1).astype(dtype)
    xp = _channel_major(x.astype(dtype, copy=False), pad)
    gk = np.zeros((f, kh * kw * c), dtype=dtype)
    gpad = np.zeros((c, b, h + 2 * pad, w + 2 * pad), dtype=dtype) if need_input_grad else None
    for lo, hi in _chunks(b, kh * kw * c, ho, wo):
        g = np.ascontiguousarray(grad_out[lo:hi].transpose(1, 0, 2, 3)).reshape(f, -1)
        cols = _im2col(xp[:, lo:hi], kh, kw, stride, ho, wo)
        gk += g @ cols.T
        if need_input_grad:
            gcols = (kmat.T @ g).reshape(kh, kw, c, hi - lo, ho, wo)
            part = gpad[:, lo:hi]
            for i in range(kh):
                for j in range(kw):
                    _shifted(part, i, j, stride, ho, wo)[...] += gcols[i, j]
    grad_kernel = gk.reshape(f, kh, kw, c).transpose(0, 3, 1, 2).copy()
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    if not need_input_grad:
        return None, grad_kernel, grad_bias
    grad_input = gpad[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(grad_input.transpose(1, 0, 2, 3)), grad_kernel, grad_bias


def maxpool2d(x, window, stride=None):
    """Max pooling; returns (output, argmax) where argmax holds flat H*W indices.

    Ties go to the smallest flat index in the input plane.
    """
    stride = window if stride is None else stride
    b, c, h, w = x.shape
    ho = conv_output_size(h, window, stride, 0)
    wo = conv_output_size(w, window, stride, 0)
    win = sliding_window_view(x, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :ho, :wo].reshape(b, c, ho, wo, window * window)
    local = win.argmax(axis=-1)
    out = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    di, dj = np.divmod(local, window)
    rows = np.arange(ho)[:, None] * stride + di
    cols = np.arange(wo)[None, :] * stride + dj
    return np.ascontiguousarray(out), rows * w + cols


def maxpool2d_backward(grad_out, argmax, input_shape):
    b, c, h, w = input_shape
    flat_idx = argmax.reshape(b * c, -1)
    offsets = (np.arange(b * c) * (h * w))[:, None]
    grad = np.bincount((flat_idx + offsets).ravel(), weights=grad_out.ravel(),
                       minlength=b * c * h * w)
    return grad.astype(grad_out.dtype, copy=False).reshape(input_shape)


def relu(x):
    return np.maximum(x, 0)


def relu_backward(grad_out, x):
    return grad_out * (x > 0)


def fc_forward(x, weight, bias):
    if x.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"fc input {x.shape} incompatible with weight {weight.shape}")
    return x @ weight + bias


def fc_backward(grad_out, x, weight, need_input_grad=True):
    grad_w = x.T @ grad_out
    grad_b = grad_out.sum(axis=0)
    grad_x = grad_out @ weight.T if need_input_grad else None
    return grad_x, grad_w, grad_b


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean cross-entropy of softmax(logits) against integer labels.

    Returns (loss, grad_logits).
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    bsz, n_classes = logits.shape
    if labels.shape != (bsz,):
        raise DimensionError(f"expected {bsz} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - log_norm
    rows = np.arange(bsz)
    loss = -log_p[rows, labels].mean()
    grad = np.exp(log_p)
    grad[rows, labels] -= 1.0
    return float(loss), grad / bsz


def mse_loss(pred, target):
    if pred.shape != target.shape:
        raise DimensionError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def resize_nearest_index(n_in, n_out):
    """Source index for each output position of a nearest-neighbour resize."""
    return (np.arange(n_out) * n_in) // n_out


def upsample_nearest(x, out_h, out_w):
    if out_h < x.shape[2] or out_w < x.shape[3]:
        raise DimensionError("upsample target must not be smaller than the input")
    ri = resize_nearest_index(x.shape[2], out_h)
    ci = resize_nearest_index(x.shape[3], out_w)
    return x[:, :, ri][:, :, :, ci]


def upsample_nearest_backward(grad_out, input_shape):
    _, _, h, w = input_shape
    ri = resize_nearest_index(h, grad_out.shape[2])
    ci = resize_nearest_index(w, grad_out.shape[3])
    # the index maps are non-decreasing and onto, so each source owns a contiguous run
    row_starts = np.searchsorted(ri, np.arange(h))
    col_starts = np.searchsorted(ci, np.arange(w))
    g = np.add.reduceat(grad_out, row_starts, axis=2)
    return np.add.reduceat(g, col_starts, axis=3)
