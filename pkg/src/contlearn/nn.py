"""Layers with hand-written forward/backward passes and the architecture builders.

Every layer exposes ``forward(x, mode, rng) -> (y, cache)`` and
``backward(cache, dy) -> (dx, grads)``; there is no autodiff tape. A
``MultiHeadNetwork`` is a backbone (ordered layer list) plus one linear
classifier head per task sharing the extracted features.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import (
    ConfigError,
    FormatError,
    LabelError,
    ShapeError,
    StateError,
    TaskError,
)
from .tensor import (
    Prng,
    channel_mean,
    conv2d,
    conv2d_input_grad,
    conv2d_weight_grad,
    ensure_finite,
)

PROB_EPS = 1e-12  # probability floor before any log or fractional power

# Observation hook for the gradient-check harness (kink margins); None in
# production. Called as kink_probe(kind, values).
kink_probe = None


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class Layer:
    kind = "base"

    def param_arrays(self) -> dict:
        return {}

    def buffer_arrays(self) -> dict:
        return {}

    def forward(self, x, mode="train", rng=None):
        raise NotImplementedError

    def backward(self, cache, dy):
        raise NotImplementedError

    def clone(self) -> "Layer":
        import copy

        return copy.deepcopy(self)


class Linear(Layer):
    kind = "linear"

    def __init__(self, in_features: int, out_features: int, dtype=np.float32):
        self.in_features = in_features
        self.out_features = out_features
        self.p = {
            "weight": np.zeros((out_features, in_features), dtype=dtype),
            "bias": np.zeros(out_features, dtype=dtype),
        }

    def param_arrays(self):
        return self.p

    def forward(self, x, mode="train", rng=None):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"linear expects [N,{self.in_features}], got {x.shape}")
        y = x @ self.p["weight"].T + self.p["bias"]
        return ensure_finite(y, "linear output"), x

    def backward(self, cache, dy):
        x = cache
        grads = {"weight": dy.T @ x, "bias": dy.sum(axis=0)}
        return dy @ self.p["weight"], grads


class Conv2d(Layer):
    kind = "conv"

    def __init__(self, in_ch, out_ch, kernel, stride=1, pad=0, bias=True, dtype=np.float32):
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.pad = kernel, stride, pad
        self.p = {"weight": np.zeros((out_ch, in_ch, kernel, kernel), dtype=dtype)}
        if bias:
            self.p["bias"] = np.zeros(out_ch, dtype=dtype)

    def param_arrays(self):
        return self.p

    def forward(self, x, mode="train", rng=None):
        y = conv2d(x, self.p["weight"], stride=self.stride, pad=self.pad)
        if "bias" in self.p:
            y = y + self.p["bias"][None, :, None, None]
        return y, x

    def backward(self, cache, dy):
        x = cache
        grads = {
            "weight": conv2d_weight_grad(x, dy, (self.kernel, self.kernel),
                                         stride=self.stride, pad=self.pad)
        }
        if "bias" in self.p:
            grads["bias"] = dy.sum(axis=(0, 2, 3))
        dx = conv2d_input_grad(dy, self.p["weight"], x.shape,
                               stride=self.stride, pad=self.pad)
        return dx, grads


class BatchNorm2d(Layer):
    """Per-channel batch normalization.

    Normalization uses the biased batch variance; the running-variance update
    uses the unbiased estimate. Running statistics follow an exponential
    moving average with momentum 0.1 and are only touched in train mode.
    """

    kind = "batchnorm2d"

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1,
                 dtype=np.float32):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.p = {
            "weight": np.ones(channels, dtype=dtype),
            "bias": np.zeros(channels, dtype=dtype),
        }
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def param_arrays(self):
        return self.p

    def buffer_arrays(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, mode="train", rng=None):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"batchnorm expects [N,{self.channels},H,W], got {x.shape}")
        if mode == "train":
            n = x.shape[0] * x.shape[2] * x.shape[3]
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
            unbiased = var * (n / (n - 1)) if n > 1 else var
            m = self.momentum
            self.running_mean[...] = (1 - m) * self.running_mean + m * mean
            self.running_var[...] = (1 - m) * self.running_var + m * unbiased
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean[None, :, None, None]) * inv_std[None, :, None, None]
        y = self.p["weight"][None, :, None, None] * xhat + self.p["bias"][None, :, None, None]
        return y, (xhat, inv_std, mode)

    def backward(self, cache, dy):
        xhat, inv_std, mode = cache
        grads = {
            "weight": (dy * xhat).sum(axis=(0, 2, 3)),
            "bias": dy.sum(axis=(0, 2, 3)),
        }
        gamma_inv = (self.p["weight"] * inv_std)[None, :, None, None]
        if mode != "train":
            return dy * gamma_inv, grads
        n = dy.shape[0] * dy.shape[2] * dy.shape[3]
        sum_dy = dy.sum(axis=(0, 2, 3))[None, :, None, None]
        sum_dy_xhat = (dy * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
        dx = gamma_inv / n * (n * dy - sum_dy - xhat * sum_dy_xhat)
        return dx, grads


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, mode="train", rng=None):
        if kink_probe is not None:
            kink_probe("relu", x)
        mask = x > 0  # gradient at exactly 0 is defined as 0
        return x * mask, mask

    def backward(self, cache, dy):
        return dy * cache, {}


class Dropout(Layer):
    """Inverted dropout: activations are scaled by 1/(1-p) at train time so
    eval mode is the identity."""

    kind = "dropout"

    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"dropout rate must be in [0,1), got {p}")
        self.rate = p

    def forward(self, x, mode="train", rng=None):
        if mode != "train" or self.rate == 0.0:
            return x, None
        if rng is None:
            raise StateError("train-mode dropout requires a random stream")
        keep = (rng.uniform(0.0, 1.0, size=x.shape) >= self.rate)
        mask = keep.astype(x.dtype) / (1.0 - self.rate)
        return x * mask, mask

    def backward(self, cache, dy):
        if cache is None:
            return dy, {}
        return dy * cache, {}


class MaxPool2d(Layer):
    kind = "maxpool"

    def __init__(self, kernel: int):
        self.kernel = kernel

    def forward(self, x, mode="train", rng=None):
        k = self.kernel
        n, c, h, w = x.shape
        ho, wo = h // k, w // k
        if ho < 1 or wo < 1:
            raise ShapeError(f"maxpool {k}x{k} needs input >= {k}x{k}, got {h}x{w}")
        win = x[:, :, :ho * k, :wo * k].reshape(n, c, ho, k, wo, k)
        win = win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, k * k)
        if kink_probe is not None:
            kink_probe("maxpool", win)
        idx = win.argmax(axis=-1)
        y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        return y, (x.shape, idx)

    def backward(self, cache, dy):
        (n, c, h, w), idx = cache
        k = self.kernel
        ho, wo = h // k, w // k
        dwin = np.zeros((n, c, ho, wo, k * k), dtype=dy.dtype)
        np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
        dx = np.zeros((n, c, h, w), dtype=dy.dtype)
        dx[:, :, :ho * k, :wo * k] = (
            dwin.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, ho * k, wo * k)
        )
        return dx, {}


class AdaptiveAvgPool(Layer):
    """Global average pool to 1x1, emitted as [N, C]."""

    kind = "avgpool_adaptive"

    def forward(self, x, mode="train", rng=None):
        return channel_mean(x), x.shape

    def backward(self, cache, dy):
        n, c, h, w = cache
        dx = np.broadcast_to(dy[:, :, None, None] / (h * w), (n, c, h, w))
        return np.ascontiguousarray(dx.astype(dy.dtype)), {}


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, mode="train", rng=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, dy):
        return dy.reshape(cache), {}


class BasicBlock(Layer):
    """Two 3x3 conv+batchnorm pairs with a skip connection.

    The skip is the identity when shapes are preserved, otherwise a projection
    (1x1 conv + batchnorm) with the block's stride.
    """

    kind = "basic_block"

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1, dtype=np.float32):
        self.in_ch, self.out_ch, self.stride = in_ch, out_ch, stride
        self.conv1 = Conv2d(in_ch, out_ch, 3, stride=stride, pad=1, bias=False, dtype=dtype)
        self.bn1 = BatchNorm2d(out_ch, dtype=dtype)
        self.conv2 = Conv2d(out_ch, out_ch, 3, stride=1, pad=1, bias=False, dtype=dtype)
        self.bn2 = BatchNorm2d(out_ch, dtype=dtype)
        self.relu = ReLU()
        if stride != 1 or in_ch != out_ch:
            self.sc_conv = Conv2d(in_ch, out_ch, 1, stride=stride, pad=0, bias=False, dtype=dtype)
            self.sc_bn = BatchNorm2d(out_ch, dtype=dtype)
        else:
            self.sc_conv = None
            self.sc_bn = None

    def _children(self):
        kids = {"conv1": self.conv1, "bn1": self.bn1, "conv2": self.conv2, "bn2": self.bn2}
        if self.sc_conv is not None:
            kids["sc_conv"] = self.sc_conv
            kids["sc_bn"] = self.sc_bn
        return kids

    def param_arrays(self):
        out = {}
        for name, child in self._children().items():
            for pname, arr in child.param_arrays().items():
                out[f"{name}.{pname}"] = arr
        return out

    def buffer_arrays(self):
        out = {}
        for name, child in self._children().items():
            for bname, arr in child.buffer_arrays().items():
                out[f"{name}.{bname}"] = arr
        return out

    def forward(self, x, mode="train", rng=None):
        h1, c_conv1 = self.conv1.forward(x, mode)
        h1, c_bn1 = self.bn1.forward(h1, mode)
        h1, c_relu1 = self.relu.forward(h1, mode)
        h2, c_conv2 = self.conv2.forward(h1, mode)
        h2, c_bn2 = self.bn2.forward(h2, mode)
        if self.sc_conv is not None:
            s, c_sc = self.sc_conv.forward(x, mode)
            s, c_scbn = self.sc_bn.forward(s, mode)
        else:
            s, c_sc, c_scbn = x, None, None
        y, c_relu2 = self.relu.forward(h2 + s, mode)
        return y, (c_conv1, c_bn1, c_relu1, c_conv2, c_bn2, c_sc, c_scbn, c_relu2)

    def backward(self, cache, dy):
        c_conv1, c_bn1, c_relu1, c_conv2, c_bn2, c_sc, c_scbn, c_relu2 = cache
        dsum, _ = self.relu.backward(c_relu2, dy)
        grads = {}
        d, g = self.bn2.backward(c_bn2, dsum)
        grads.update({f"bn2.{k}": v for k, v in g.items()})
        d, g = self.conv2.backward(c_conv2, d)
        grads.update({f"conv2.{k}": v for k, v in g.items()})
        d, _ = self.relu.backward(c_relu1, d)
        d, g = self.bn1.backward(c_bn1, d)
        grads.update({f"bn1.{k}": v for k, v in g.items()})
        dx, g = self.conv1.backward(c_conv1, d)
        grads.update({f"conv1.{k}": v for k, v in g.items()})
        if self.sc_conv is not None:
            ds, g = self.sc_bn.backward(c_scbn, dsum)
            grads.update({f"sc_bn.{k}": v for k, v in g.items()})
            ds, g = self.sc_conv.backward(c_sc, ds)
            grads.update({f"sc_conv.{k}": v for k, v in g.items()})
            dx = dx + ds
        else:
            dx = dx + dsum
        return dx, grads


# ---------------------------------------------------------------------------
# Multi-head network
# ---------------------------------------------------------------------------


class MultiHeadNetwork:
    """Shared feature extractor plus one linear classifier head per task."""

    def __init__(self, backbone: list, feat_dim: int, input_shape,
                 init_family: str, dtype=np.float32):
        self.backbone = backbone
        self.feat_dim = feat_dim
        self.input_shape = tuple(input_shape)
        self.init_family = init_family
        self.dtype = dtype
        self.heads: list[Linear] = []
        self.frozen = False
        self.dropout_rng: Prng | None = None

    # -- parameter bookkeeping ------------------------------------------------

    def named_params(self) -> dict:
        out = {}
        for i, layer in enumerate(self.backbone):
            for name, arr in layer.param_arrays().items():
                out[f"backbone.{i}.{name}"] = arr
        for t, head in enumerate(self.heads):
            for name, arr in head.param_arrays().items():
                out[f"head.{t}.{name}"] = arr
        return out

    def backbone_params(self) -> dict:
        return {k: v for k, v in self.named_params().items() if k.startswith("backbone.")}

    def named_buffers(self) -> dict:
        out = {}
        for i, layer in enumerate(self.backbone):
            for name, arr in layer.buffer_arrays().items():
                out[f"backbone.{i}.{name}"] = arr
        return out

    def param_count(self) -> int:
        """Parameter count of the shared feature extractor (heads excluded)."""
        return int(sum(a.size for a in self.backbone_params().values()))

    def zero_grads(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.named_params().items()}

    # -- heads ---------------------------------------------------------------

    def add_head(self, num_classes: int, rng: Prng) -> int:
        if self.frozen:
            raise StateError("cannot add a head to a frozen network")
        head = Linear(self.feat_dim, num_classes, dtype=self.dtype)
        _init_linear_xavier(head, rng, self.dtype)
        self.heads.append(head)
        return len(self.heads) - 1

    def _check_head(self, t: int):
        if not (0 <= t < len(self.heads)):
            raise TaskError(f"no head for task {t}; network has {len(self.heads)} heads")

    # -- forward / backward ----------------------------------------------------

    def forward_features(self, x, mode="train"):
        if self.frozen:
            mode = "eval"
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"input shape {x.shape[1:]} != expected {self.input_shape}")
        caches = []
        h = x
        for layer in self.backbone:
            h, cache = layer.forward(h, mode, rng=self.dropout_rng)
            caches.append(cache)
        return h, caches

    def head_logits(self, t: int, feats):
        self._check_head(t)
        return self.heads[t].forward(feats, mode="eval")

    def forward(self, x, head: int, mode="train"):
        """Logits of `head` plus the cache needed by `backward`."""
        self._check_head(head)
        feats, bcaches = self.forward_features(x, mode)
        logits, hcache = self.head_logits(head, feats)
        return logits, (bcaches, [(head, hcache)])

    def backward(self, cache, dlogits):
        bcaches, head_caches = cache
        (head, hcache), = head_caches
        return self.backward_multi(bcaches, [(head, hcache, dlogits)])

    def backward_multi(self, bcaches, head_terms):
        """Backward through several heads at once, summing feature gradients.

        Returns (grads, dinput) where grads covers every parameter (zeros for
        those not on any gradient path).
        """
        if self.frozen:
            raise StateError("frozen networks do not accept gradients")
        grads = self.zero_grads()
        dfeat = None
        for t, hcache, dlogits in head_terms:
            dft, hgrads = self.heads[t].backward(hcache, dlogits)
            for name, g in hgrads.items():
                grads[f"head.{t}.{name}"] += g
            dfeat = dft if dfeat is None else dfeat + dft
        d = dfeat
        for i in range(len(self.backbone) - 1, -1, -1):
            d, lgrads = self.backbone[i].backward(bcaches[i], d)
            for name, g in lgrads.items():
                grads[f"backbone.{i}.{name}"] += g
        return grads, d

    # -- snapshots / state ------------------------------------------------------

    def snapshot(self) -> "MultiHeadNetwork":
        """Frozen deep copy: always evaluates with the stats captured now."""
        import copy

        snap = MultiHeadNetwork([l.clone() for l in self.backbone], self.feat_dim,
                                self.input_shape, self.init_family, self.dtype)
        snap.heads = [copy.deepcopy(h) for h in self.heads]
        snap.frozen = True
        return snap

    def clone(self) -> "MultiHeadNetwork":
        snap = self.snapshot()
        snap.frozen = False
        snap.dropout_rng = self.dropout_rng
        return snap

    def state_dict(self) -> dict:
        out = dict(self.named_params())
        out.update(self.named_buffers())
        return out

    def load_state(self, state: dict) -> None:
        own = self.state_dict()
        if set(own) != set(state):
            missing = set(own) ^ set(state)
            raise StateError(f"checkpoint keys do not match network: {sorted(missing)[:4]}")
        for name, arr in own.items():
            src = state[name]
            if src.shape != arr.shape:
                raise StateError(f"shape mismatch for {name}: {src.shape} vs {arr.shape}")
            arr[...] = src.astype(arr.dtype)


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def _init_linear_xavier(layer: Linear, rng: Prng, dtype):
    fan_in, fan_out = layer.in_features, layer.out_features
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    layer.p["weight"][...] = rng.uniform(-limit, limit,
                                         size=layer.p["weight"].shape).astype(dtype)
    layer.p["bias"][...] = 0.0


def _init_conv(layer: Conv2d, rng: Prng, family: str, dtype):
    k = layer.kernel
    if family == "kaiming_fanout":
        fan_out = k * k * layer.out_ch
        std = np.sqrt(2.0 / fan_out)
        w = rng.normal(size=layer.p["weight"].shape) * std
    else:
        fan_in = k * k * layer.in_ch
        fan_out = k * k * layer.out_ch
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=layer.p["weight"].shape)
    layer.p["weight"][...] = w.astype(dtype)
    if "bias" in layer.p:
        layer.p["bias"][...] = 0.0


def _init_layer(layer: Layer, rng: Prng, family: str, dtype):
    if isinstance(layer, Conv2d):
        _init_conv(layer, rng, family, dtype)
    elif isinstance(layer, Linear):
        _init_linear_xavier(layer, rng, dtype)
    elif isinstance(layer, BatchNorm2d):
        layer.p["weight"][...] = 1.0
        layer.p["bias"][...] = 0.0
        layer.running_mean[...] = 0.0
        layer.running_var[...] = 1.0
    elif isinstance(layer, BasicBlock):
        for child in layer._children().values():
            _init_layer(child, rng, family, dtype)


def init_params(net: MultiHeadNetwork, rng: Prng) -> None:
    """Initialize all backbone parameters in layer order from `rng`.

    ResNet-family convolutions use Kaiming normal with fan-out mode,
    AlexNet-family layers use Xavier uniform; normalization layers are set to
    weight 1 / bias 0 and every bias starts at 0.
    """
    for layer in net.backbone:
        _init_layer(layer, rng, net.init_family, net.dtype)


# ---------------------------------------------------------------------------
# Architecture builders
# ---------------------------------------------------------------------------


def _conv_out(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def build_alexnet(dropout: bool, input_shape=(3, 32, 32), dtype=np.float32):
    """AlexNet-like stack: conv(64,4x4), conv(128,3x3), conv(256,2x2), each with
    ReLU and 2x2 max-pool, then two 2048-unit fully-connected layers.

    Dropout (when enabled) is 0.2 after the first two conv stages and 0.5
    after everything else.
    """
    c, h, w = input_shape
    if c != 3:
        raise ConfigError(f"alexnet expects 3-channel input, got {c}")
    layers = []
    sizes = [(64, 4), (128, 3), (256, 2)]
    rates = [0.2, 0.2, 0.5]
    in_ch = c
    for (out_ch, k), rate in zip(sizes, rates):
        layers.append(Conv2d(in_ch, out_ch, k, stride=1, pad=0, bias=True, dtype=dtype))
        layers.append(ReLU())
        layers.append(MaxPool2d(2))
        if dropout:
            layers.append(Dropout(rate))
        h = _conv_out(h, k, 1, 0) // 2
        w = _conv_out(w, k, 1, 0) // 2
        if h < 1 or w < 1:
            raise ConfigError(f"alexnet input {input_shape} too small for its conv stack")
        in_ch = out_ch
    layers.append(Flatten())
    flat = in_ch * h * w
    for i in range(2):
        layers.append(Linear(flat if i == 0 else 2048, 2048, dtype=dtype))
        layers.append(ReLU())
        if dropout:
            layers.append(Dropout(0.5))
    return layers, 2048, "xavier_uniform"


def build_resnet(blocks_per_group: int, width_factor: int, input_shape=(3, 32, 32),
                 dtype=np.float32):
    """ResNet/WideResNet family: a 16-filter 3x3 stem, then three groups of
    basic blocks with widths (16, 32, 64) x width_factor and strides (1, 2, 2),
    ending in a global average pool."""
    if blocks_per_group < 1 or width_factor < 1:
        raise ConfigError("blocks_per_group and width_factor must be >= 1")
    c, h, w = input_shape
    layers = [
        Conv2d(c, 16, 3, stride=1, pad=1, bias=False, dtype=dtype),
        BatchNorm2d(16, dtype=dtype),
        ReLU(),
    ]
    in_ch = 16
    for base_width, stride in ((16, 1), (32, 2), (64, 2)):
        out_ch = base_width * width_factor
        for b in range(blocks_per_group):
            layers.append(BasicBlock(in_ch, out_ch, stride if b == 0 else 1, dtype=dtype))
            in_ch = out_ch
    layers.append(AdaptiveAvgPool())
    return layers, in_ch, "kaiming_fanout"


def build_tinycnn(dropout: bool, input_shape=(3, 8, 8), dtype=np.float32):
    """Desk-scale conv net (no normalization) mirroring the AlexNet dropout
    pattern, for small synthetic images."""
    c, h, w = input_shape
    if c != 3:
        raise ConfigError(f"tinycnn expects 3-channel input, got {c}")
    layers = [Conv2d(c, 8, 3, stride=1, pad=1, bias=True, dtype=dtype), ReLU(), MaxPool2d(2)]
    if dropout:
        layers.append(Dropout(0.2))
    layers += [Conv2d(8, 16, 3, stride=1, pad=1, bias=True, dtype=dtype), ReLU(), MaxPool2d(2)]
    if dropout:
        layers.append(Dropout(0.2))
    h, w = h // 4, w // 4
    if h < 1 or w < 1:
        raise ConfigError(f"tinycnn input {input_shape} too small")
    layers.append(Flatten())
    layers.append(Linear(16 * h * w, 64, dtype=dtype))
    layers.append(ReLU())
    if dropout:
        layers.append(Dropout(0.5))
    return layers, 64, "xavier_uniform"


_ARCH_BUILDERS = {
    "alexnet": lambda cfg, shape, dtype: build_alexnet(cfg.get("dropout", False), shape, dtype),
    "resnet": lambda cfg, shape, dtype: build_resnet(cfg["blocks_per_group"],
                                                     cfg["width_factor"], shape, dtype),
    "tinycnn": lambda cfg, shape, dtype: build_tinycnn(cfg.get("dropout", False), shape, dtype),
}


def make_network(arch: dict, input_shape, dtype=np.float32) -> MultiHeadNetwork:
    """Build an initialized-to-zero MultiHeadNetwork from an architecture config."""
    name = arch.get("name")
    if name not in _ARCH_BUILDERS:
        raise ConfigError(f"unknown architecture {name!r}; have {sorted(_ARCH_BUILDERS)}")
    layers, feat_dim, family = _ARCH_BUILDERS[name](arch, tuple(input_shape), dtype)
    return MultiHeadNetwork(layers, feat_dim, input_shape, family, dtype)


def param_count(net: MultiHeadNetwork) -> int:
    return net.param_count()


# ---------------------------------------------------------------------------
# Softmax and cross-entropy
# ---------------------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for stability."""
    if logits.ndim != 2:
        raise ShapeError(f"softmax expects [N,K] logits, got {logits.shape}")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-probability of the true labels, clamped at 1e-12."""
    labels = np.asarray(labels)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ShapeError(f"cross_entropy got probs {probs.shape}, labels {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=-1) >= probs.shape[1]:
        raise LabelError(f"labels out of range for {probs.shape[1]} classes")
    picked = probs[np.arange(probs.shape[0]), labels]
    return float(-np.log(np.maximum(picked, PROB_EPS)).mean())


# ---------------------------------------------------------------------------
# Checkpoint container: magic, version, then per-array records of
# (name, dtype code, shape, little-endian raw data). Round-trips bit-exactly.
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"CLNT0001"
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def write_checkpoint(path, state: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", 1, len(state)))
        for name in sorted(state):
            arr = np.ascontiguousarray(state[name])
            code = _DTYPE_CODES.get(arr.dtype.newbyteorder("<"))
            if code is None:
                raise FormatError(f"unsupported checkpoint dtype {arr.dtype} for {name}")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<BB", code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _CKPT_MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    try:
        version, count = struct.unpack_from("<II", blob, 8)
        if version != 1:
            raise FormatError(f"unsupported checkpoint version {version}")
        off = 16
        state = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + nlen].decode("utf-8")
            off += nlen
            code, ndim = struct.unpack_from("<BB", blob, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            dt = _CODE_DTYPES[code]
            nbytes = int(np.prod(shape)) * dt.itemsize
            if off + nbytes > len(blob):
                raise FormatError("checkpoint truncated")
            state[name] = np.frombuffer(blob[off:off + nbytes], dtype=dt).reshape(shape).copy()
            off += nbytes
        if off != len(blob):
            raise FormatError("trailing bytes after checkpoint payload")
        return state
    except struct.error as exc:
        raise FormatError(f"checkpoint truncated: {exc}") from exc
