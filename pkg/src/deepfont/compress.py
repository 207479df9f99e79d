"""Low-rank compression of fully connected layers and parameter accounting.

A dense m x n weight is replaced by U~ (m x k), s~ (k) and V~ (n x k), which
stores k(m + n + 1) numbers instead of mn. Lossy truncation applies this to
any trained weight; lossless export requires the weight to already have rank
at most k, as produced by rank-constrained training.
"""
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from deepfont.errors import NumericError, RankExceededError
from deepfont.network import FC, FULL, Model, build_cnn
from deepfont.numerics.linalg import svd

RANK_TOL = 1e-6        # s[k] / s[0] above this means "rank exceeds k"
LOSSLESS_TOL = 1e-5
FULL_CLASSES = 2383


@dataclass
class FactorizedLayer:
    u_tilde: np.ndarray
    s_tilde: np.ndarray
    v_tilde: np.ndarray

    def __post_init__(self):
        k = len(self.s_tilde)
        if self.u_tilde.shape[1] != k or self.v_tilde.shape[1] != k:
            raise ValueError("factor shapes disagree on k")

    @property
    def k(self):
        return len(self.s_tilde)

    @property
    def shape(self):
        return self.u_tilde.shape[0], self.v_tilde.shape[0]

    @property
    def n_params(self):
        m, n = self.shape
        return self.k * (m + n + 1)

    def dense(self):
        return (self.u_tilde * self.s_tilde) @ self.v_tilde.T


def _factor(res, k):
    k = min(k, len(res.s))
    u, s, v = res.u[:, :k].copy(), res.s[:k].copy(), res.v[:, :k].copy()
    dead = s == 0
    u[:, dead] = 0.0
    v[:, dead] = 0.0
    return FactorizedLayer(u, s, v)


def truncate_lossy(w, k):
    """Top-k SVD factors of w (64-bit); Frobenius error = sqrt of the discarded s_i^2."""
    if k < 1:
        raise ValueError("k must be at least 1")
    return _factor(svd(np.asarray(w, dtype=np.float64)), k)


def export_lossless(w, k):
    """Factor a weight whose numerical rank is at most k.

    Raises RankExceededError when s[k] / s[0] > 1e-6.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    w = np.asarray(w, dtype=np.float64)
    res = svd(w)
    ratio = float(res.s[k] / res.s[0]) if k < len(res.s) and res.s[0] > 0 else 0.0
    if ratio > RANK_TOL:
        raise RankExceededError(ratio, k)
    layer = _factor(res, k)
    err = np.abs(layer.dense() - w).max() if w.size else 0.0
    if err > LOSSLESS_TOL * max(1.0, np.abs(w).max()):
        raise NumericError(f"lossless export reconstruction error {err:.3e}")
    return layer


def compression_ratio(m, n, k):
    """Compressed-to-dense parameter fraction k(m + n + 1) / (mn) of one layer."""
    return Fraction(k * (m + n + 1), m * n)


def _spec(model):
    return model.spec if isinstance(model, Model) else model


@dataclass
class SizeReport:
    dense: dict                     # layer name -> dense weight count
    compressed: dict = field(default_factory=dict)  # layer name -> factorized count
    baseline: int = None            # total the ratio is measured against

    @property
    def total_before(self):
        return sum(self.dense.values())

    @property
    def total_after(self):
        return sum(self.compressed.get(name, c) for name, c in self.dense.items())

    @property
    def ratio(self):
        base = self.total_before if self.baseline is None else self.baseline
        return Fraction(base, self.total_after)

    @property
    def ratio_2dp(self):
        return f"{float(self.ratio):.2f}"

    def rows(self):
        return [(name, count, self.compressed.get(name, count)) for name, count in self.dense.items()]


def size_report(model, compressed_layers=None, baseline=None):
    """Weight counts of every layer, with the given layers counted as factorized.

    compressed_layers maps a layer name to k or to a FactorizedLayer. Counts
    cover weight matrices and kernels only, which is the convention that
    reproduces the published totals.
    """
    spec = _spec(model)
    dense = {}
    shapes = dict(zip(spec.names, spec.param_shapes()))
    for name, (wshape, _) in shapes.items():
        dense[name] = int(np.prod(wshape))
    compressed = {}
    for name, k in (compressed_layers or {}).items():
        if name not in shapes:
            raise ValueError(f"no layer named {name!r}")
        wshape = shapes[name][0]
        if len(wshape) != 2:
            raise ValueError(f"layer {name!r} is not fully connected")
        kk = k.k if isinstance(k, FactorizedLayer) else int(k)
        compressed[name] = kk * (wshape[0] + wshape[1] + 1)
    return SizeReport(dense, compressed, baseline)


def full_baseline():
    return size_report(build_cnn(FULL, FULL_CLASSES, 2)).total_before


def mini_model_report(k=10, width=2048):
    """The reduced full-scale model: fc6/fc7 narrowed to `width`, fc6 factorized at k.

    The ratio is measured against the default full-scale model.
    """
    spec = build_cnn(FULL, FULL_CLASSES, 2, fc_width=width)
    first_fc = next(n for n, i in zip(spec.names, spec.weighted) if spec.layers[i].kind == FC)
    return size_report(spec, {first_fc: k}, baseline=full_baseline())


def factorize_model(model, layer_id, k, mode="lossy"):
    """Copy of the model with one FC layer stored as (u, s, v) factors."""
    if mode not in ("lossy", "lossless"):
        raise ValueError(f"mode must be 'lossy' or 'lossless', got {mode!r}")
    j = model.spec.index_of(layer_id)
    if model.spec.layers[model.spec.weighted[j]].kind != FC:
        raise ValueError(f"layer {layer_id!r} is not fully connected")
    w = model.dense_weight(j)
    layer = (truncate_lossy if mode == "lossy" else export_lossless)(w, k)
    out = model.copy()
    dt = model.dtype
    out.params[j] = {"u": layer.u_tilde.astype(dt), "s": layer.s_tilde.astype(dt),
                     "v": layer.v_tilde.astype(dt), "b": model.params[j]["b"].copy()}
    return out, layer


def model_size_report(model):
    """Size report of a model as stored, counting factorized layers as such."""
    spec = model.spec
    ks = {name: p["s"].shape[0] for name, p in zip(spec.names, model.params) if "s" in p}
    return size_report(spec, ks)

