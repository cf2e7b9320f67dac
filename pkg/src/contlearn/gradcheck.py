"""Central finite-difference gradient checking, 64-bit only.

The harness compares hand-written backward passes against central differences
on randomly drawn toy instances. Kinked layers (ReLU, max-pool) make finite
differences invalid near their non-differentiable points, so instances are
redrawn until every kink has a safe margin; the margin is recorded during
forward via a module-level probe.
"""

from __future__ import annotations

import numpy as np

from . import nn as nn_mod
from .nn import (
    AdaptiveAvgPool,
    BasicBlock,
    BatchNorm2d,
    Conv2d,
    Dropout,
    Flatten,
    Linear,
    MaxPool2d,
    MultiHeadNetwork,
    ReLU,
    cross_entropy,
    softmax,
)
from .tensor import Prng

FD_EPS = 1e-5
REL_TOL = 1e-4
KINK_MARGIN = 2e-3


def numeric_grad(fn, x: np.ndarray, eps: float = FD_EPS) -> np.ndarray:
    """Central finite differences of scalar fn() w.r.t. x, perturbed in place."""
    g = np.zeros(x.shape, dtype=np.float64)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = fn()
        flat[i] = orig - eps
        fm = fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute difference normalized by the larger gradient magnitude."""
    scale = max(float(np.abs(analytic).max(initial=0.0)),
                float(np.abs(numeric).max(initial=0.0)), 1e-6)
    return float(np.abs(analytic - numeric).max(initial=0.0)) / scale


# -- kink margin probe -------------------------------------------------------

_probe_min_margin = np.inf


def _observe(kind: str, values: np.ndarray) -> None:
    global _probe_min_margin
    if kind == "relu" and values.size:
        _probe_min_margin = min(_probe_min_margin, float(np.abs(values).min()))
    elif kind == "maxpool" and values.shape[-1] >= 2:
        two = np.partition(values, -2, axis=-1)[..., -2:]
        _probe_min_margin = min(_probe_min_margin, float((two[..., 1] - two[..., 0]).min()))


def _probe_reset():
    global _probe_min_margin
    _probe_min_margin = np.inf
    nn_mod.kink_probe = _observe


def _probe_stop() -> float:
    nn_mod.kink_probe = None
    return _probe_min_margin


def _lattice(shape, rng: Prng) -> np.ndarray:
    """Shuffled lattice values: pairwise-distinct, bounded away from zero.

    Keeps ReLU/max-pool instances clear of their kinks by construction.
    """
    n = int(np.prod(shape))
    vals = (np.arange(n, dtype=np.float64) - (n - 1) / 2.0) * 0.07
    vals = vals + np.where(vals >= 0, 0.035, -0.035)
    return vals[rng.permutation(n)].reshape(shape)


# -- single-layer checks -------------------------------------------------------


def _randn(rng: Prng, shape):
    return rng.normal(size=shape)


def _check_layer(layer, x: np.ndarray, mode: str = "train",
                 dropout_seed: int | None = None) -> float:
    """FD-check a layer's input and parameter gradients under projection loss."""
    def fresh_rng():
        return None if dropout_seed is None else Prng(dropout_seed, stream=77)

    y0, cache = layer.forward(x, mode, rng=fresh_rng())
    proj = Prng(991, stream=5).normal(size=y0.shape)

    def loss():
        y, _ = layer.forward(x, mode, rng=fresh_rng())
        return float((y * proj).sum())

    dx, grads = layer.backward(cache, proj.copy())
    err = rel_error(dx, numeric_grad(loss, x))
    for name, arr in layer.param_arrays().items():
        err = max(err, rel_error(grads[name], numeric_grad(loss, arr)))
    return err


def _retry_margin(build_and_check, seed: int, needs_margin: bool) -> float:
    """Run a check, redrawing the instance while any kink margin is unsafe."""
    for attempt in range(64):
        inst_seed = seed * 1009 + attempt
        if not needs_margin:
            return build_and_check(inst_seed)
        _probe_reset()
        try:
            err = build_and_check(inst_seed)
        finally:
            margin = _probe_stop()
        if margin >= KINK_MARGIN:
            return err
    raise RuntimeError("could not draw a kink-free gradcheck instance")


def check_linear(seed: int) -> float:
    rng = Prng(seed, stream=1)
    layer = Linear(5, 4, dtype=np.float64)
    layer.p["weight"][...] = _randn(rng, (4, 5))
    layer.p["bias"][...] = _randn(rng, 4)
    return _check_layer(layer, _randn(rng, (3, 5)))


def check_conv3x3(seed: int) -> float:
    rng = Prng(seed, stream=2)
    layer = Conv2d(2, 3, 3, stride=1, pad=1, bias=False, dtype=np.float64)
    layer.p["weight"][...] = _randn(rng, layer.p["weight"].shape)
    return _check_layer(layer, _randn(rng, (2, 2, 5, 5)))


def check_conv_k_s(seed: int) -> float:
    rng = Prng(seed, stream=3)
    layer = Conv2d(3, 2, 4, stride=2, pad=1, bias=True, dtype=np.float64)
    layer.p["weight"][...] = _randn(rng, layer.p["weight"].shape)
    layer.p["bias"][...] = _randn(rng, 2)
    return _check_layer(layer, _randn(rng, (2, 3, 6, 6)))


def check_batchnorm2d(seed: int) -> float:
    rng = Prng(seed, stream=4)
    layer = BatchNorm2d(3, dtype=np.float64)
    layer.p["weight"][...] = 0.5 + rng.uniform(0.0, 1.0, size=3)
    layer.p["bias"][...] = _randn(rng, 3)
    err = _check_layer(layer, _randn(rng, (4, 3, 3, 3)), mode="train")
    layer.running_mean[...] = _randn(rng, 3)
    layer.running_var[...] = 0.5 + rng.uniform(0.0, 1.0, size=3)
    return max(err, _check_layer(layer, _randn(rng, (4, 3, 3, 3)), mode="eval"))


def check_relu(seed: int) -> float:
    def run(inst_seed):
        rng = Prng(inst_seed, stream=5)
        return _check_layer(ReLU(), _lattice((3, 7), rng))

    return _retry_margin(run, seed, needs_margin=False)


def check_dropout(seed: int) -> float:
    rng = Prng(seed, stream=6)
    layer = Dropout(0.4)
    err = _check_layer(layer, _randn(rng, (3, 8)), mode="train", dropout_seed=seed)
    return max(err, _check_layer(layer, _randn(rng, (3, 8)), mode="eval"))


def check_maxpool(seed: int) -> float:
    rng = Prng(seed, stream=7)
    return _check_layer(MaxPool2d(2), _lattice((2, 2, 5, 4), rng))


def check_avgpool_adaptive(seed: int) -> float:
    rng = Prng(seed, stream=8)
    return _check_layer(AdaptiveAvgPool(), _randn(rng, (2, 3, 4, 4)))


def check_flatten(seed: int) -> float:
    rng = Prng(seed, stream=9)
    return _check_layer(Flatten(), _randn(rng, (2, 2, 3, 3)))


def check_basic_block(seed: int) -> float:
    def run(inst_seed):
        rng = Prng(inst_seed, stream=10)
        for stride, in_ch in ((1, 2), (2, 1)):
            block = BasicBlock(in_ch, 2, stride=stride, dtype=np.float64)
            for arr in block.param_arrays().values():
                arr[...] = _randn(rng, arr.shape) * 0.5 + (1.0 if arr.ndim == 1 else 0.0)
            err = _check_layer(block, _randn(rng, (2, in_ch, 4, 4)))
        return err

    return _retry_margin(run, seed, needs_margin=True)


# -- loss checks (built on the strategies module) -----------------------------


def _toy_two_head_net(rng: Prng, n_classes=(3, 3)) -> MultiHeadNetwork:
    layers = [Flatten(), Linear(6, 5, dtype=np.float64), ReLU(),
              Linear(5, 4, dtype=np.float64)]
    net = MultiHeadNetwork(layers, 4, (6,), "xavier_uniform", dtype=np.float64)
    for arr in net.named_params().values():
        arr[...] = rng.normal(size=arr.shape) * 0.7
    for k in n_classes:
        net.add_head(k, rng.fork(len(net.heads) + 50))
    for head in net.heads:
        head.p["weight"][...] = rng.normal(size=head.p["weight"].shape) * 0.7
    return net


def _net_param_fd(net: MultiHeadNetwork, loss_fn) -> float:
    """FD over every parameter of `net` against analytic grads from loss_fn.

    loss_fn() -> (loss, grads dict) with grads keyed like named_params.
    """
    _, grads = loss_fn()
    err = 0.0
    for name, arr in net.named_params().items():
        num = numeric_grad(lambda: loss_fn()[0], arr)
        err = max(err, rel_error(grads[name], num))
    return err


def check_cross_entropy(seed: int) -> float:
    from .strategies import ce_loss_and_dlogits

    rng = Prng(seed, stream=11)
    logits = rng.normal(size=(4, 5))
    labels = np.array([rng.integers(0, 4) for _ in range(4)])

    def loss():
        return cross_entropy(softmax(logits), labels)

    _, dlogits = ce_loss_and_dlogits(logits, labels)
    return rel_error(dlogits, numeric_grad(loss, logits))


def check_distill(seed: int) -> float:
    from .strategies import distill_loss_batch_and_dlogits

    rng = Prng(seed, stream=12)
    logits = rng.normal(size=(3, 4))
    teacher = softmax(rng.normal(size=(3, 4)))
    theta = 2.0

    def loss():
        return distill_loss_batch_and_dlogits(logits, teacher, theta)[0]

    _, dlogits = distill_loss_batch_and_dlogits(logits, teacher, theta)
    return rel_error(dlogits, numeric_grad(loss, logits))


def check_lwf_composite(seed: int) -> float:
    from .strategies import LwF

    def run(inst_seed):
        rng = Prng(inst_seed, stream=13)
        net = _toy_two_head_net(rng)
        teacher_src = _toy_two_head_net(rng.fork(4))
        teacher = teacher_src.snapshot()
        strat = LwF(theta=2.0)
        strat.teacher = teacher
        strat.task_id = 1
        x = rng.normal(size=(4, 6))
        y = np.array([rng.integers(0, 2) for _ in range(4)])

        def loss_fn():
            loss, grads = strat.batch_loss(net, x, y)
            return loss, grads

        return _net_param_fd(net, loss_fn)

    return _retry_margin(run, seed, needs_margin=True)


def check_ewc_penalty(seed: int) -> float:
    from .strategies import FisherState, ewc_penalty

    rng = Prng(seed, stream=14)
    params = {"a": rng.normal(size=(3, 2)), "b": rng.normal(size=(4,))}
    state = FisherState(
        fisher={k: rng.uniform(0.0, 2.0, size=v.shape) for k, v in params.items()},
        anchor={k: v + rng.normal(size=v.shape) for k, v in params.items()},
        lam=7.0, gamma=1.0,
    )

    def loss():
        return ewc_penalty(params, state)[0]

    _, pgrads = ewc_penalty(params, state)
    err = 0.0
    for name, arr in params.items():
        err = max(err, rel_error(pgrads[name], numeric_grad(loss, arr)))
    return err


LAYER_COMPONENTS = {
    "linear": check_linear,
    "conv3x3": check_conv3x3,
    "conv_k_s": check_conv_k_s,
    "batchnorm2d": check_batchnorm2d,
    "relu": check_relu,
    "dropout": check_dropout,
    "maxpool": check_maxpool,
    "avgpool_adaptive": check_avgpool_adaptive,
    "flatten": check_flatten,
    "basic_block": check_basic_block,
}

LOSS_COMPONENTS = {
    "cross_entropy": check_cross_entropy,
    "distill": check_distill,
    "lwf_composite": check_lwf_composite,
    "ewc_penalty": check_ewc_penalty,
}

_CORRUPTIBLE = {
    "relu": (ReLU, "backward"),
    "linear": (Linear, "backward"),
    "conv": (Conv2d, "backward"),
    "batchnorm2d": (BatchNorm2d, "backward"),
    "maxpool": (MaxPool2d, "backward"),
}


class _corrupted:
    """Test fixture: scales a layer class's backward output by 1.02."""

    def __init__(self, kind: str):
        if kind not in _CORRUPTIBLE:
            raise ValueError(f"cannot corrupt unknown layer kind {kind!r}")
        self.cls, self.attr = _CORRUPTIBLE[kind]
        self.orig = None

    def __enter__(self):
        orig = getattr(self.cls, self.attr)
        self.orig = orig

        def bad(layer, cache, dy):
            dx, grads = orig(layer, cache, dy)
            return dx * 1.02, {k: v * 1.02 for k, v in grads.items()}

        setattr(self.cls, self.attr, bad)
        return self

    def __exit__(self, *exc):
        setattr(self.cls, self.attr, self.orig)
        return False


def run_suite(draws: int = 20, corrupt: str | None = None, log=None) -> dict:
    """Run every component `draws` times; returns {component: max rel error}.

    `corrupt` deliberately breaks one layer kind's backward (a fault-injection
    fixture for testing the harness itself).
    """
    results = {}
    components = {**LAYER_COMPONENTS, **LOSS_COMPONENTS}
    ctx = _corrupted(corrupt) if corrupt else None
    try:
        if ctx:
            ctx.__enter__()
        for name, check in components.items():
            worst = 0.0
            for d in range(draws):
                worst = max(worst, check(1000 + d))
            results[name] = worst
            if log is not None:
                status = "PASS" if worst < REL_TOL else "FAIL"
                log(f"{name:<18} max_rel_err={worst:.3e}  {status}")
    finally:
        if ctx:
            ctx.__exit__()
    return results
