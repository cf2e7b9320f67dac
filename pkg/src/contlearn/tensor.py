"""Deterministic numeric core.

Tensors are plain ``numpy.ndarray`` values (row-major, 32-bit for training,
64-bit for gradient checking). This module provides the handful of array
operations the network layers are built from, plus ``Prng``, a counter-based
random stream whose draws depend only on the (seed, stream, counter) triple.
"""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError, NumericError, ShapeError

DTYPES = {"f32": np.float32, "f64": np.float64}

_debug_validation = False


def set_debug_validation(enabled: bool) -> None:
    """Toggle NaN/Inf checking on op outputs (off by default; costs a pass)."""
    global _debug_validation
    _debug_validation = bool(enabled)


def debug_validation_enabled() -> bool:
    return _debug_validation


def ensure_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    """Raise NumericError if x contains NaN/Inf while debug validation is on."""
    if _debug_validation and not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")
    return x


def tensor_new(shape, fill: float = 0.0, dtype=np.float32) -> np.ndarray:
    """Allocate a tensor of `shape` with every element equal to `fill`."""
    shape = list(shape)
    if len(shape) == 0:
        raise ShapeError("tensor shape must have at least one dimension")
    for d in shape:
        if not isinstance(d, (int, np.integer)) or d < 1:
            raise ShapeError(f"tensor dimensions must be positive integers, got {shape}")
    return np.full(shape, fill, dtype=dtype)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of a[m,k] and b[k,n], accumulated in the element dtype."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    return ensure_finite(a @ b, "matmul output")


def reflect_pad2d(x: np.ndarray, pad: int) -> np.ndarray:
    """Reflection-pad the two trailing spatial axes without repeating the edge.

    A row [1, 2, 3] padded by 1 becomes [2, 1, 2, 3, 2].
    """
    if x.ndim != 4:
        raise ShapeError(f"reflect_pad2d expects [N,C,H,W], got {x.shape}")
    if pad < 0:
        raise ArgumentError("pad must be >= 0")
    if pad == 0:
        return x
    n, c, h, w = x.shape
    if pad >= h or pad >= w:
        raise ShapeError(f"reflection pad {pad} must be smaller than spatial dims {h}x{w}")
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="reflect")


def channel_mean(x: np.ndarray) -> np.ndarray:
    """Spatial mean per sample and channel: [N,C,H,W] -> [N,C]."""
    if x.ndim != 4:
        raise ShapeError(f"channel_mean expects [N,C,H,W], got {x.shape}")
    return x.mean(axis=(2, 3))


# ---------------------------------------------------------------------------
# Convolution (cross-correlation convention, no kernel flip).
#
# Two code paths share one contract: float64 inputs take the direct
# patch-sum path (the reference semantics used by the gradient-check
# harness), float32 inputs take an im2col + GEMM path for speed.
# ---------------------------------------------------------------------------


def _conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _check_conv_args(x, w, stride, pad, pad_mode):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape[1]}, weight {w.shape[1]}")
    if stride < 1:
        raise ArgumentError("conv2d stride must be >= 1")
    if pad < 0:
        raise ArgumentError("conv2d pad must be >= 0")
    if pad_mode not in ("zero", "reflect"):
        raise ArgumentError(f"unknown pad_mode {pad_mode!r}")
    kh, kw = w.shape[2], w.shape[3]
    if kh > x.shape[2] + 2 * pad or kw > x.shape[3] + 2 * pad:
        raise ShapeError(
            f"kernel {kh}x{kw} larger than padded input "
            f"{x.shape[2] + 2 * pad}x{x.shape[3] + 2 * pad}"
        )


def _pad_input(x: np.ndarray, pad: int, pad_mode: str) -> np.ndarray:
    if pad == 0:
        return x
    if pad_mode == "reflect":
        return reflect_pad2d(x, pad)
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Patch matrix of padded input: [N, C*kh*kw, H'*W'] with (c,kh,kw) row order."""
    n, c, h, w = xp.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # [N, C, H', W', kh, kw]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, ho * wo)
    return np.ascontiguousarray(cols)


def conv2d(x: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 0,
           pad_mode: str = "zero") -> np.ndarray:
    """2-D cross-correlation of x[N,C,H,W] with w[O,C,kh,kw]."""
    _check_conv_args(x, w, stride, pad, pad_mode)
    xp = _pad_input(x, pad, pad_mode)
    if x.dtype == np.float64:
        out = _conv_forward_direct(xp, w, stride)
    else:
        out = _conv_forward_im2col(xp, w, stride)
    return ensure_finite(out, "conv2d output")


def _conv_forward_im2col(xp, w, stride):
    n = xp.shape[0]
    o, _, kh, kw = w.shape
    ho = (xp.shape[2] - kh) // stride + 1
    wo = (xp.shape[3] - kw) // stride + 1
    cols = _im2col(xp, kh, kw, stride)
    w2d = w.reshape(o, -1)
    return np.matmul(w2d, cols).reshape(n, o, ho, wo)


def _conv_forward_direct(xp, w, stride):
    n = xp.shape[0]
    o, _, kh, kw = w.shape
    ho = (xp.shape[2] - kh) // stride + 1
    wo = (xp.shape[3] - kw) // stride + 1
    out = np.empty((n, o, ho, wo), dtype=xp.dtype)
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
            prod = patch[:, None, :, :, :] * w[None, :, :, :, :]
            out[:, :, i, j] = prod.reshape(n, o, -1).sum(axis=-1)
    return out


def conv2d_input_grad(dy: np.ndarray, w: np.ndarray, x_shape, stride: int = 1,
                      pad: int = 0) -> np.ndarray:
    """Gradient of conv2d w.r.t. its input: transposed correlation of dy with w."""
    n, c, h, wd = x_shape
    o, _, kh, kw = w.shape
    hp, wp = h + 2 * pad, wd + 2 * pad
    dxp = np.zeros((n, c, hp, wp), dtype=dy.dtype)
    ho, wo = dy.shape[2], dy.shape[3]
    if dy.dtype == np.float64:
        for i in range(ho):
            for j in range(wo):
                g = np.tensordot(dy[:, :, i, j], w, axes=([1], [0]))  # [N,C,kh,kw]
                dxp[:, :, i * stride:i * stride + kh, j * stride:j * stride + kw] += g
    else:
        w2d = w.reshape(o, -1)
        dcols = np.matmul(w2d.T, dy.reshape(n, o, ho * wo))  # [N, C*kh*kw, L]
        dcols = dcols.reshape(n, c, kh, kw, ho, wo)
        for u in range(kh):
            for v in range(kw):
                dxp[:, :, u:u + ho * stride:stride, v:v + wo * stride:stride] += dcols[:, :, u, v]
    if pad:
        return np.ascontiguousarray(dxp[:, :, pad:pad + h, pad:pad + wd])
    return dxp


def conv2d_weight_grad(x: np.ndarray, dy: np.ndarray, k: tuple, stride: int = 1,
                       pad: int = 0) -> np.ndarray:
    """Gradient of conv2d w.r.t. the weight: correlation of input with dy."""
    kh, kw = k
    xp = _pad_input(x, pad, "zero")
    n, c = xp.shape[0], xp.shape[1]
    o, ho, wo = dy.shape[1], dy.shape[2], dy.shape[3]
    if dy.dtype == np.float64:
        dw = np.zeros((o, c, kh, kw), dtype=dy.dtype)
        for i in range(ho):
            for j in range(wo):
                patch = xp[:, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                dw += np.tensordot(dy[:, :, i, j], patch, axes=([0], [0]))
        return dw
    cols = _im2col(xp, kh, kw, stride)  # [N, C*kh*kw, L]
    dy2d = dy.reshape(n, o, ho * wo)
    dw2d = np.matmul(dy2d, cols.transpose(0, 2, 1)).sum(axis=0)
    return dw2d.reshape(o, c, kh, kw)


# ---------------------------------------------------------------------------
# Counter-based random stream.
#
# The bit generator is the SplitMix64 finalizer (Steele, Lea & Flood 2014;
# the mixer used by Java's SplittableRandom) run in counter mode: draw k of
# stream (seed, stream) is mix64(base + (k+1)*GOLDEN) with
# base = mix64(seed + GOLDEN) ^ mix64(stream + LEAF). Every draw is a pure
# function of the (seed, stream, counter) triple, so recorded positions replay
# exactly and forked child streams never depend on how much the parent drew.
# ---------------------------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_LEAF = np.uint64(0xD1B54A32D192ED03)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _mix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def _as_u64(v: int) -> np.uint64:
    return np.uint64(int(v) & 0xFFFFFFFFFFFFFFFF)


class Prng:
    """Seeded counter-based random stream; single-owner, fork for parallel use."""

    __slots__ = ("seed", "stream", "counter", "_base")

    def __init__(self, seed: int, stream: int = 0, counter: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        self.counter = int(counter)
        with np.errstate(over="ignore"):
            base = _mix64(np.asarray([_as_u64(self.seed) + _GOLDEN]))[0]
            base = base ^ _mix64(np.asarray([_as_u64(self.stream) + _LEAF]))[0]
        self._base = base

    def fork(self, stream_key: int) -> "Prng":
        """Child stream keyed by `stream_key`; independent of this stream's draws."""
        with np.errstate(over="ignore"):
            child = _mix64(np.asarray([self._base + _as_u64(stream_key) * _LEAF + _LEAF]))[0]
        return Prng(self.seed, int(child))

    def _words(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix64(self._base + idx * _GOLDEN)

    def uniform(self, lo: float = 0.0, hi: float = 1.0, size=None):
        """Uniform draw(s) in [lo, hi); one counter per value."""
        if lo > hi:
            raise ArgumentError(f"uniform bounds reversed: lo={lo} > hi={hi}")
        n = 1 if size is None else int(np.prod(size))
        u = (self._words(n) >> np.uint64(11)) * (2.0 ** -53)
        out = lo + (hi - lo) * u
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def integers(self, lo: int, hi: int, size=None):
        """Uniform integer draw(s) in [lo, hi] inclusive."""
        if lo > hi:
            raise ArgumentError(f"integer bounds reversed: lo={lo} > hi={hi}")
        n = 1 if size is None else int(np.prod(size))
        u = (self._words(n) >> np.uint64(11)) * (2.0 ** -53)
        vals = lo + np.minimum((u * (hi - lo + 1)).astype(np.int64), hi - lo)
        if size is None:
            return int(vals[0])
        return vals.reshape(size)

    def bernoulli(self, p: float, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = (self._words(n) >> np.uint64(11)) * (2.0 ** -53)
        out = u < p
        if size is None:
            return bool(out[0])
        return out.reshape(size)

    def normal(self, size=None, dtype=np.float64):
        """Standard normal draw(s) via Box-Muller; two counters per value."""
        n = 1 if size is None else int(np.prod(size))
        w = self._words(2 * n)
        u1 = 1.0 - (w[:n] >> np.uint64(11)) * (2.0 ** -53)   # (0, 1]
        u2 = (w[n:] >> np.uint64(11)) * (2.0 ** -53)
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        z = z.astype(dtype)
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        """Random permutation of range(n); n counters."""
        keys = self._words(n)
        return np.argsort(keys, kind="stable")


def prng_draw_uniform(rng: Prng, lo: float, hi: float) -> float:
    """Single uniform draw in [lo, hi); advances the counter by one."""
    return rng.uniform(lo, hi)
