"""Layer specifications, the classification CNN and its autoencoder twin, and
the split of the weighted layers into a frozen feature extractor (the first K)
and a supervised classifier (the rest).
"""
from dataclasses import dataclass, field, fields, replace

import numpy as np

from deepfont.numerics import layers as L

CONV, POOL, RELU, FC, DROPOUT, SOFTMAX = "CONV", "POOL", "RELU", "FC", "DROPOUT", "SOFTMAX"
UPSAMPLE, UNFLATTEN = "UPSAMPLE", "UNFLATTEN"
KINDS = (CONV, POOL, RELU, FC, DROPOUT, SOFTMAX, UPSAMPLE, UNFLATTEN)
WEIGHTED = (CONV, FC)
INPUT_SHAPE = (1, 105, 105)
FULL, DESK = "FULL", "DESK"
TRAIN, EVAL = "train", "eval"
DECODER_KERNEL = 3


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out: int = 0          # CONV channels / FC features
    kernel: int = 0
    stride: int = 1
    pad: int = 0
    window: int = 0       # POOL
    p: float = 0.0        # DROPOUT
    size: tuple = ()      # UPSAMPLE (h, w) or UNFLATTEN (c, h, w)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == CONV and (self.out < 1 or self.kernel < 1 or self.stride < 1 or self.pad < 0):
            raise ValueError("CONV needs positive channels, kernel and stride")
        if self.kind == FC and self.out < 1:
            raise ValueError("FC needs a positive output width")
        if self.kind == POOL and self.window < 1:
            raise ValueError("POOL needs a positive window")
        if self.kind == DROPOUT and not 0 <= self.p < 1:
            raise ValueError("dropout probability must lie in [0, 1)")
        if self.kind in (UPSAMPLE, UNFLATTEN) and not self.size:
            raise ValueError(f"{self.kind} needs a target size")

    def to_dict(self):
        d = {"kind": self.kind}
        for f in fields(self)[1:]:
            value = getattr(self, f.name)
            if value != f.default:
                d[f.name] = list(value) if isinstance(value, tuple) else value
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "size" in d:
            d["size"] = tuple(d["size"])
        return cls(**d)


def output_shape(layer, shape):
    if layer.kind == CONV:
        _, h, w = shape
        return (layer.out, L.conv_output_size(h, layer.kernel, layer.stride, layer.pad),
                L.conv_output_size(w, layer.kernel, layer.stride, layer.pad))
    if layer.kind == POOL:
        c, h, w = shape
        stride = layer.stride if layer.stride > 1 else layer.window
        return (c, L.conv_output_size(h, layer.window, stride, 0),
                L.conv_output_size(w, layer.window, stride, 0))
    if layer.kind == FC:
        return (layer.out,)
    if layer.kind == UPSAMPLE:
        return (shape[0],) + tuple(layer.size)
    if layer.kind == UNFLATTEN:
        if int(np.prod(shape)) != int(np.prod(layer.size)):
            raise ValueError(f"cannot unflatten {shape} into {layer.size}")
        return tuple(layer.size)
    return shape


def param_shapes(layer, in_shape):
    if layer.kind == CONV:
        if len(in_shape) != 3:
            raise ValueError("CONV layer needs a C x H x W input")
        return (layer.out, in_shape[0], layer.kernel, layer.kernel), (layer.out,)
    if layer.kind == FC:
        return (int(np.prod(in_shape)), layer.out), (layer.out,)
    raise ValueError(f"{layer.kind} has no parameters")


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    k_split: int
    n_classes: int
    input_shape: tuple = INPUT_SHAPE
    shapes: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        shapes = [self.input_shape]
        for layer in self.layers:
            if layer.kind in (CONV, POOL, UPSAMPLE) and len(shapes[-1]) != 3:
                raise ValueError(f"{layer.kind} layer after a flat activation")
            shapes.append(output_shape(layer, shapes[-1]))
        object.__setattr__(self, "shapes", tuple(shapes))
        n = self.n_weighted
        if not 1 <= self.k_split < n:
            raise ValueError(f"k_split must lie in [1, {n - 1}], got {self.k_split}")

    @property
    def weighted(self):
        """Layer indices of the weighted (CONV/FC) layers."""
        return [i for i, layer in enumerate(self.layers) if layer.kind in WEIGHTED]

    @property
    def n_weighted(self):
        return len(self.weighted)

    @property
    def names(self):
        return [f"{self.layers[i].kind.lower()}{j + 1}" for j, i in enumerate(self.weighted)]

    def param_shapes(self):
        return [param_shapes(self.layers[i], self.shapes[i]) for i in self.weighted]

    def index_of(self, layer_id):
        """Weighted-layer index for a name like 'fc5' or an integer index."""
        if isinstance(layer_id, (int, np.integer)):
            if not 0 <= layer_id < self.n_weighted:
                raise KeyError(f"no weighted layer {layer_id}")
            return int(layer_id)
        try:
            return self.names.index(layer_id)
        except ValueError:
            raise KeyError(f"no weighted layer named {layer_id!r}; have {self.names}") from None

    def to_dict(self):
        return {"layers": [layer.to_dict() for layer in self.layers], "k_split": self.k_split,
                "n_classes": self.n_classes, "input_shape": list(self.input_shape)}

    @classmethod
    def from_dict(cls, d):
        return cls(layers=tuple(LayerSpec.from_dict(x) for x in d["layers"]),
                   k_split=d["k_split"], n_classes=d["n_classes"],
                   input_shape=tuple(d["input_shape"]))


def _conv(out, kernel, stride=1, pad=0):
    return LayerSpec(CONV, out=out, kernel=kernel, stride=stride, pad=pad)


def build_cnn(preset=DESK, n_classes=10, k_split=2, fc_width=None, dropout=0.5):
    """Classification network for a preset.

    DESK is the trainable desk-scale network. FULL reproduces the parameter
    budget of the full-scale model (fc6 takes a 36,864-dim input); its
    convolutional geometry only serves parameter accounting.
    """
    relu, pool = LayerSpec(RELU), LayerSpec(POOL, window=2)
    drop = LayerSpec(DROPOUT, p=dropout)
    if preset == DESK:
        width = 256 if fc_width is None else fc_width
        body = [_conv(16, 5, stride=2), relu, pool,
                _conv(32, 3, pad=1), relu, pool,
                _conv(64, 3, pad=1), relu]
    elif preset == FULL:
        width = 4096 if fc_width is None else fc_width
        body = [_conv(64, 3, stride=2, pad=1), relu, pool,
                _conv(8, 3, pad=1), relu,
                _conv(24, 3), relu,
                _conv(8, 3, pad=1), relu,
                _conv(64, 3, pad=1), relu]
    else:
        raise ValueError(f"unknown preset {preset!r}")
    head = [LayerSpec(FC, out=width), relu, drop,
            LayerSpec(FC, out=width), relu, drop,
            LayerSpec(FC, out=n_classes), LayerSpec(SOFTMAX)]
    return NetworkSpec(layers=tuple(body + head), k_split=k_split, n_classes=n_classes)


def encoder_end(spec, k_split):
    """Index one past the last layer of the K-th weighted stage (its ReLU/pool included)."""
    wi = spec.weighted
    if not 1 <= k_split <= len(wi):
        raise ValueError(f"k_split must lie in [1, {len(wi)}]")
    end = wi[k_split - 1] + 1
    while end < len(spec.layers) and spec.layers[end].kind in (RELU, POOL):
        end += 1
    return end


def build_scae(spec, k_split=None):
    """Autoencoder whose encoder is the first K weighted stages of spec.

    The code is read before the last stage's pool. The decoder undoes each
    remaining resampling of the encoder separately: a stage with a
    strided convolution and a pool is mirrored by two nearest-neighbour
    upsamplings, each followed by a size-preserving 3x3 convolution. One step of
    at most 2x keeps every pixel of an upsampled block distinct after the 3x3
    convolution. FC stages are mirrored by an FC layer back to the flattened
    input size. Output has the network's input shape.
    """
    k_split = spec.k_split if k_split is None else k_split
    end = encoder_end(spec, k_split)
    while spec.layers[end - 1].kind == POOL:  # the code is taken before the last pool
        end -= 1
    encoder = [layer for layer in spec.layers[:end] if layer.kind != DROPOUT]
    bounds = list(spec.weighted[1:k_split]) + [end]
    size = tuple(spec.shapes[end][1:])
    decoder = []
    for j, (i, stop) in enumerate(reversed(list(zip(spec.weighted[:k_split], bounds)))):
        layer, in_shape = spec.layers[i], spec.shapes[i]
        last = j == k_split - 1
        if layer.kind == FC:
            decoder.append(LayerSpec(FC, out=int(np.prod(in_shape))))
            if not last:
                decoder.append(LayerSpec(RELU))
            if len(in_shape) == 3:
                decoder.append(LayerSpec(UNFLATTEN, size=tuple(in_shape)))
                size = tuple(in_shape[1:])
            continue
        targets = [tuple(in_shape)]
        mid = tuple(spec.shapes[i + 1])  # after the convolution, before any pool
        if mid[1:] not in (tuple(in_shape[1:]), tuple(spec.shapes[stop][1:])):
            targets.insert(0, mid)
        for n, (c, h, w) in enumerate(targets):
            if (h, w) != size:
                decoder.append(LayerSpec(UPSAMPLE, size=(h, w)))
                size = (h, w)
            decoder.append(_conv(c, DECODER_KERNEL, pad=DECODER_KERNEL // 2))
            if not (last and n == len(targets) - 1):
                decoder.append(LayerSpec(RELU))
    return NetworkSpec(layers=tuple(encoder + decoder), k_split=k_split, n_classes=0,
                       input_shape=spec.input_shape)


@dataclass
class Model:
    spec: NetworkSpec
    params: list          # per weighted layer: {"w", "b"} or factored {"u", "s", "v", "b"}
    frozen: list

    @property
    def dtype(self):
        return self.params[0]["b"].dtype

    def copy(self):
        return Model(self.spec, [{k: v.copy() for k, v in p.items()} for p in self.params],
                     list(self.frozen))

    def astype(self, dtype):
        return Model(self.spec, [{k: v.astype(dtype) for k, v in p.items()} for p in self.params],
                     list(self.frozen))

    def dense_weight(self, idx):
        p = self.params[idx]
        if "w" in p:
            return p["w"]
        return (p["u"] * p["s"]) @ p["v"].T


def init_model(spec, rng, dtype=np.float32):
    """He-normal weights (std sqrt(2 / fan_in)), zero biases."""
    params = []
    for wshape, bshape in spec.param_shapes():
        fan_in = int(np.prod(wshape[1:])) if len(wshape) == 4 else wshape[0]
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=wshape).astype(dtype)
        params.append({"w": w, "b": np.zeros(bshape, dtype=dtype)})
    return Model(spec, params, [False] * len(params))


def network_input(pixels, dtype=np.float32):
    """Gray patches (1 = background) to network input with ink as positive signal."""
    x = 1.0 - np.asarray(pixels, dtype=dtype)
    if x.ndim == 2:
        x = x[None]
    return x[:, None] if x.ndim == 3 else x


@dataclass
class Trace:
    acts: list     # acts[0] is the input, acts[i + 1] the output of layer i
    cache: dict


def forward(model, x, mode=EVAL, rng=None, stop=None):
    """Run the network, keeping every intermediate activation.

    In TRAIN mode dropout layers draw inverted-dropout masks from rng; EVAL mode
    applies no dropout and no rescaling. `stop` truncates after that many layers.
    """
    spec = model.spec
    if x.shape[1:] != spec.input_shape:
        raise ValueError(f"input shape {x.shape[1:]} != {spec.input_shape}")
    acts = [x]
    cache = {}
    pidx = 0
    n_layers = len(spec.layers) if stop is None else stop
    for i, layer in enumerate(spec.layers[:n_layers]):
        h = acts[-1]
        if layer.kind == CONV:
            p = model.params[pidx]
            h = L.conv2d_forward(h, p["w"], p["b"], layer.stride, layer.pad)
        elif layer.kind == FC:
            p = model.params[pidx]
            flat = h.reshape(h.shape[0], -1)
            if "w" in p:
                h = L.fc_forward(flat, p["w"], p["b"])
            else:
                h = ((flat @ p["u"]) * p["s"]) @ p["v"].T + p["b"]
        elif layer.kind == RELU:
            h = L.relu(h)
        elif layer.kind == POOL:
            stride = layer.stride if layer.stride > 1 else layer.window
            h, cache[i] = L.maxpool2d(h, layer.window, stride)
        elif layer.kind == DROPOUT:
            if mode == TRAIN and layer.p > 0:
                if rng is None:
                    raise ValueError("TRAIN mode with dropout needs an rng")
                mask = (rng.random(h.shape) >= layer.p).astype(h.dtype) / (1 - layer.p)
                cache[i] = mask
                h = h * mask
        elif layer.kind == SOFTMAX:
            h = L.softmax(h)
        elif layer.kind == UPSAMPLE:
            h = L.upsample_nearest(h, *layer.size)
        elif layer.kind == UNFLATTEN:
            h = h.reshape((h.shape[0],) + tuple(layer.size))
        if layer.kind in WEIGHTED:
            pidx += 1
        acts.append(h)
    return Trace(acts, cache)


def logits_index(spec):
    """Position in Trace.acts of the pre-softmax scores."""
    n = len(spec.layers)
    return n if spec.layers[-1].kind != SOFTMAX else n - 1


def backward(model, trace, grad, upto=None):
    """Backpropagate `grad` (w.r.t. acts[upto]) down to the lowest trainable layer.

    Returns one {"w", "b"} gradient dict per weighted layer, None for frozen
    layers and for layers below the lowest trainable one.
    """
    spec = model.spec
    upto = logits_index(spec) if upto is None else upto
    widx = {li: j for j, li in enumerate(spec.weighted)}
    trainable = [li for li, j in widx.items() if not model.frozen[j]]
    grads = [None] * spec.n_weighted
    if not trainable:
        return grads
    lowest = min(trainable)
    for i in range(upto - 1, lowest - 1, -1):
        layer = spec.layers[i]
        x = trace.acts[i]
        need_input = i > lowest
        if layer.kind == CONV:
            j = widx[i]
            gx, gw, gb = L.conv2d_backward(grad, x, model.params[j]["w"], layer.stride,
                                           layer.pad, need_input_grad=need_input)
            if not model.frozen[j]:
                grads[j] = {"w": gw, "b": gb}
            grad = gx
        elif layer.kind == FC:
            j = widx[i]
            p = model.params[j]
            flat = x.reshape(x.shape[0], -1)
            gx, gw, gb = L.fc_backward(grad, flat, model.dense_weight(j), need_input)
            if not model.frozen[j]:
                grads[j] = {"w": gw, "b": gb}
            grad = gx.reshape(x.shape) if gx is not None else None
        elif layer.kind == RELU:
            grad = L.relu_backward(grad, x)
        elif layer.kind == POOL:
            grad = L.maxpool2d_backward(grad, trace.cache[i], x.shape)
        elif layer.kind == DROPOUT:
            if i in trace.cache:
                grad = grad * trace.cache[i]
        elif layer.kind == UPSAMPLE:
            grad = L.upsample_nearest_backward(grad, x.shape)
        elif layer.kind == UNFLATTEN:
            grad = grad.reshape(x.shape)
        elif layer.kind == SOFTMAX:
            raise ValueError("backpropagate from the logits, not through SOFTMAX")
        if grad is None:
            break
    return grads


def predict_logits(model, x, batch=64):
    idx = logits_index(model.spec)
    out = [forward(model, x[i:i + batch], EVAL, stop=idx).acts[-1] for i in range(0, len(x), batch)]
    return np.concatenate(out)


@dataclass
class Fragment:
    names: list
    params: list
    frozen: list


def split(model):
    """(C_u, C_s): the first K weighted layers and the remaining ones."""
    k = model.spec.k_split
    names = model.spec.names
    cu = Fragment(names[:k], model.params[:k], model.frozen[:k])
    cs = Fragment(names[k:], model.params[k:], model.frozen[k:])
    return cu, cs


def reassemble(spec, cu, cs):
    if cu.names + cs.names != spec.names:
        raise ValueError("fragments do not cover the network's weighted layers")
    return Model(spec, list(cu.params) + list(cs.params), list(cu.frozen) + list(cs.frozen))


def import_cu(model, encoder):
    """Copy the encoder's first K weighted layers into the model and freeze them."""
    k = model.spec.k_split
    out = model.copy()
    for j in range(k):
        src = encoder.params[j]
        dst = out.params[j]
        if src["w"].shape != dst["w"].shape:
            raise ValueError(f"encoder layer {j} shape {src['w'].shape} != {dst['w'].shape}")
        out.params[j] = {"w": src["w"].astype(dst["w"].dtype), "b": src["b"].astype(dst["b"].dtype)}
        out.frozen[j] = True
    return out


def with_k(spec, k_split):
    return replace(spec, k_split=k_split)
