"""Independent reference computations used by the tests."""
import numpy as np

from deepfont.numerics import (conv2d_backward, conv2d_forward, fc_backward, fc_forward,
                               maxpool2d, maxpool2d_backward, mse_loss, relu, relu_backward,
                               softmax_xent, upsample_nearest, upsample_nearest_backward)


def numeric_grad(f, x, eps=1e-6):
    """Central differences of scalar f with respect to every entry of x (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = f()
        x[i] = old - eps
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def rel_error(a, b):
    return np.abs(a - b).max() / max(1e-8, np.abs(a).max(), np.abs(b).max())


def naive_conv(x, k, b, stride, pad):
    """Direct loop cross-correlation."""
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    bsz, c, h, w = xp.shape
    f, _, kh, kw = k.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    out = np.zeros((bsz, f, ho, wo))
    for i in range(ho):
        for j in range(wo):
            win = xp[:, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
            out[:, :, i, j] = np.tensordot(win, k, axes=([1, 2, 3], [1, 2, 3])) + b
    return out


def _projection(rng, shape):
    return rng.normal(size=shape)


def check_conv(rng):
    b, c, f = rng.integers(1, 3), rng.integers(1, 3), rng.integers(1, 3)
    kh = int(rng.integers(1, 4))
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    h = int(rng.integers(kh, kh + 4))
    x = rng.normal(size=(b, c, h, h + 1))
    k = rng.normal(size=(f, c, kh, kh))
    bias = rng.normal(size=f)
    out = conv2d_forward(x, k, bias, stride, pad)
    r = _projection(rng, out.shape)
    gx, gk, gb = conv2d_backward(r, x, k, stride, pad)
    loss = lambda: float(np.sum(conv2d_forward(x, k, bias, stride, pad) * r))  # noqa: E731
    return max(rel_error(gx, numeric_grad(loss, x)), rel_error(gk, numeric_grad(loss, k)),
               rel_error(gb, numeric_grad(loss, bias)))


def check_fc(rng):
    b, m, n = (int(v) for v in rng.integers(1, 6, size=3))
    x, w, bias = rng.normal(size=(b, m)), rng.normal(size=(m, n)), rng.normal(size=n)
    r = _projection(rng, (b, n))
    gx, gw, gb = fc_backward(r, x, w)
    loss = lambda: float(np.sum(fc_forward(x, w, bias) * r))  # noqa: E731
    return max(rel_error(gx, numeric_grad(loss, x)), rel_error(gw, numeric_grad(loss, w)),
               rel_error(gb, numeric_grad(loss, bias)))


def check_pool(rng):
    window = int(rng.integers(2, 4))
    x = rng.normal(size=(2, 2, window * 3 + 1, window * 2 + 1))  # distinct values, no ties
    out, idx = maxpool2d(x, window)
    r = _projection(rng, out.shape)
    gx = maxpool2d_backward(r, idx, x.shape)
    loss = lambda: float(np.sum(maxpool2d(x, window)[0] * r))  # noqa: E731
    return rel_error(gx, numeric_grad(loss, x))


def check_relu(rng):
    x = rng.normal(size=(3, 7))
    x[np.abs(x) < 1e-3] = 0.5  # keep away from the kink
    r = _projection(rng, x.shape)
    loss = lambda: float(np.sum(relu(x) * r))  # noqa: E731
    return rel_error(relu_backward(r, x), numeric_grad(loss, x))


def check_softmax_xent(rng):
    b, n = int(rng.integers(1, 5)), int(rng.integers(2, 7))
    z = rng.normal(size=(b, n)) * 3
    labels = rng.integers(0, n, size=b)
    _, g = softmax_xent(z, labels)
    return rel_error(g, numeric_grad(lambda: softmax_xent(z, labels)[0], z))


def check_mse(rng):
    p, t = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 3, 4))
    _, g = mse_loss(p, t)
    return rel_error(g, numeric_grad(lambda: mse_loss(p, t)[0], p))


def check_upsample(rng):
    h, w = (int(v) for v in rng.integers(1, 5, size=2))
    x = rng.normal(size=(2, 2, h, w))
    oh, ow = h + int(rng.integers(0, 5)), w + int(rng.integers(0, 5))
    r = _projection(rng, (2, 2, oh, ow))
    loss = lambda: float(np.sum(upsample_nearest(x, oh, ow) * r))  # noqa: E731
    return rel_error(upsample_nearest_backward(r, x.shape), numeric_grad(loss, x))


GRADIENT_CHECKS = {
    "conv": check_conv,
    "fc": check_fc,
    "pool": check_pool,
    "relu": check_relu,
    "softmax_xent": check_softmax_xent,
    "mse": check_mse,
    "upsample": check_upsample,
}
