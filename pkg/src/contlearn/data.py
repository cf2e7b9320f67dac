"""Dataset ingestion, seeded task splitting and the augmentation pipeline.

Images are float32 arrays [N,3,H,W] with values in [0,1]. Task splits are
driven entirely by the run seed through counter-based streams, so membership,
validation selection and per-sample augmentation never depend on iteration
order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, ConfigError, DataError, FormatError
from .tensor import Prng, reflect_pad2d

# Stream keys for deriving child rngs (see Prng.fork). Shuffle streams live
# far above any epoch*N + sample_index augmentation key.
SHUFFLE_STREAM_BASE = 2 ** 62

_CIFAR_RECORD = 3074  # coarse byte + fine byte + 3*32*32 pixels
_ARCHIVE_MAGIC = b"TIA1"


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    class_names: list | None = None

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def __len__(self) -> int:
        return int(self.images.shape[0])


@dataclass
class TaskData:
    """One task: its global class subset and local-label splits."""

    classes: np.ndarray  # global ids; position defines the local label
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray

    @property
    def num_classes(self) -> int:
        return len(self.classes)


@dataclass
class TaskSequence:
    tasks: list
    class_order: np.ndarray


@dataclass
class AugPolicy:
    enabled: bool = True
    max_translate_px: int = 3
    hflip_prob: float = 0.5
    color_jitter: float = 0.3
    hue_jitter: float = 0.2
    two_axis_translate: bool = True  # horizontal-only when False


# ---------------------------------------------------------------------------
# Loaders
# ---------------------------------------------------------------------------


def load_cifar100(path) -> Dataset:
    """Read CIFAR-100 binary records (coarse byte, fine byte, 3072 pixel bytes,
    channel-major R,G,B); fine labels kept, pixels scaled to [0,1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) == 0 or len(blob) % _CIFAR_RECORD != 0:
        raise FormatError(
            f"{path}: size {len(blob)} is not a positive multiple of {_CIFAR_RECORD}")
    rec = np.frombuffer(blob, dtype=np.uint8).reshape(-1, _CIFAR_RECORD)
    labels = rec[:, 1].astype(np.int64)
    if labels.max() >= 100:
        raise FormatError(f"{path}: fine label {labels.max()} out of range for CIFAR-100")
    images = rec[:, 2:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return Dataset(images=images, labels=labels)


def write_tensor_archive(path, ds: Dataset) -> None:
    """Write the TIA1 container: magic, u32 version, u64 N, u32 C/H/W,
    N u16 labels, then N*C*H*W uint8 pixels (all little-endian)."""
    n, c, h, w = ds.images.shape
    if n == 0:
        raise FormatError("refusing to write an empty tensor archive")
    pixels = np.clip(np.round(ds.images * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(_ARCHIVE_MAGIC)
        fh.write(struct.pack("<IQIII", 1, n, c, h, w))
        fh.write(ds.labels.astype("<u2").tobytes())
        fh.write(pixels.tobytes())


def load_tensor_archive(path) -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _ARCHIVE_MAGIC:
        raise FormatError(f"{path}: bad magic, not a TIA1 archive")
    try:
        version, n, c, h, w = struct.unpack_from("<IQIII", blob, 4)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated header") from exc
    if version != 1:
        raise FormatError(f"{path}: unsupported archive version {version}")
    if n == 0:
        raise FormatError(f"{path}: empty archive rejected")
    off = 4 + 24
    label_bytes = 2 * n
    pixel_bytes = n * c * h * w
    if len(blob) != off + label_bytes + pixel_bytes:
        raise FormatError(f"{path}: payload size mismatch "
                          f"(have {len(blob)}, want {off + label_bytes + pixel_bytes})")
    labels = np.frombuffer(blob, dtype="<u2", count=n, offset=off).astype(np.int64)
    pix = np.frombuffer(blob, dtype=np.uint8, count=pixel_bytes, offset=off + label_bytes)
    images = pix.reshape(n, c, h, w).astype(np.float32) / 255.0
    return Dataset(images=images, labels=labels)


def load_raw_rgb_dump(dirpath) -> Dataset:
    """Pre-decoded RGB dump: images.raw (N*3*H*W uint8), labels.bin (N u16 LE)
    and shape.json {"n","height","width"}."""
    import json
    import os

    shape_path = os.path.join(dirpath, "shape.json")
    try:
        with open(shape_path) as fh:
            meta = json.load(fh)
        n, h, w = int(meta["n"]), int(meta["height"]), int(meta["width"])
    except (OSError, KeyError, ValueError) as exc:
        raise FormatError(f"{dirpath}: missing or invalid shape.json: {exc}") from exc
    try:
        raw = open(os.path.join(dirpath, "images.raw"), "rb").read()
        lab = open(os.path.join(dirpath, "labels.bin"), "rb").read()
    except OSError as exc:
        raise FormatError(f"{dirpath}: {exc}") from exc
    if len(raw) != n * 3 * h * w:
        raise FormatError(f"{dirpath}: images.raw has {len(raw)} bytes, want {n * 3 * h * w}")
    if len(lab) != 2 * n:
        raise FormatError(f"{dirpath}: labels.bin has {len(lab)} bytes, want {2 * n}")
    images = np.frombuffer(raw, dtype=np.uint8).reshape(n, 3, h, w).astype(np.float32) / 255.0
    labels = np.frombuffer(lab, dtype="<u2").astype(np.int64)
    return Dataset(images=images, labels=labels)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


def synth_tasks(n_classes: int, per_class: int, image_size: int,
                separation: float, rng: Prng) -> Dataset:
    """Gaussian class blobs around per-class templates drawn once from `rng`.

    Per-sample noise std is the template spread (std of U[0,1]) divided by
    `separation`; larger separation means more separable classes.
    """
    if n_classes < 2 or per_class < 2:
        raise ArgumentError("synth_tasks needs n_classes >= 2 and per_class >= 2")
    if separation <= 0:
        raise ArgumentError("separation must be positive")
    s = image_size
    templates = rng.fork(0).uniform(0.0, 1.0, size=(n_classes, 3, s, s))
    spread = 1.0 / np.sqrt(12.0)  # std of U[0,1]
    noise_std = 0.0 if np.isinf(separation) else spread / separation
    images = np.empty((n_classes * per_class, 3, s, s), dtype=np.float32)
    labels = np.empty(n_classes * per_class, dtype=np.int64)
    for c in range(n_classes):
        noise = rng.fork(1 + c).normal(size=(per_class, 3, s, s)) * noise_std
        block = np.clip(templates[c][None] + noise, 0.0, 1.0)
        images[c * per_class:(c + 1) * per_class] = block.astype(np.float32)
        labels[c * per_class:(c + 1) * per_class] = c
    return Dataset(images=images, labels=labels)


def split_train_test(ds: Dataset, test_per_class: int):
    """Deterministically hold out the last `test_per_class` samples of each class."""
    train_idx, test_idx = [], []
    for c in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == c)
        if len(idx) <= test_per_class:
            raise DataError(f"class {c} has only {len(idx)} samples, "
                            f"cannot hold out {test_per_class}")
        train_idx.append(idx[:-test_per_class])
        test_idx.append(idx[-test_per_class:])
    tr = np.concatenate(train_idx)
    te = np.concatenate(test_idx)
    return (Dataset(ds.images[tr], ds.labels[tr], ds.class_names),
            Dataset(ds.images[te], ds.labels[te], ds.class_names))


# ---------------------------------------------------------------------------
# Task splitting
# ---------------------------------------------------------------------------


def split_tasks(train_ds: Dataset, test_ds: Dataset, n_tasks: int, seed: int) -> TaskSequence:
    """Shuffle the class order by `seed`, cut it into `n_tasks` equal groups,
    and split each task's training data 90/10 into train/val."""
    n_classes = max(train_ds.num_classes, test_ds.num_classes)
    if n_tasks < 1 or n_classes % n_tasks != 0:
        raise ConfigError(f"{n_classes} classes not divisible into {n_tasks} tasks")
    per_task = n_classes // n_tasks
    rng = Prng(seed, stream=SHUFFLE_STREAM_BASE + 1)
    class_order = rng.permutation(n_classes)
    tasks = []
    for t in range(n_tasks):
        classes = np.asarray(class_order[t * per_task:(t + 1) * per_task])
        local = {int(g): i for i, g in enumerate(classes)}
        tr_idx = np.flatnonzero(np.isin(train_ds.labels, classes))
        te_idx = np.flatnonzero(np.isin(test_ds.labels, classes))
        if len(tr_idx) == 0 or len(te_idx) == 0:
            raise DataError(f"task {t} has an empty split (classes {classes.tolist()})")
        perm = rng.fork(100 + t).permutation(len(tr_idx))
        tr_idx = tr_idx[perm]
        n_val = len(tr_idx) // 10
        val_idx, tr_idx = tr_idx[:n_val], tr_idx[n_val:]
        to_local = np.vectorize(local.get, otypes=[np.int64])
        tasks.append(TaskData(
            classes=classes,
            x_train=train_ds.images[tr_idx], y_train=to_local(train_ds.labels[tr_idx]),
            x_val=train_ds.images[val_idx], y_val=to_local(train_ds.labels[val_idx]),
            x_test=test_ds.images[te_idx], y_test=to_local(test_ds.labels[te_idx]),
        ))
    return TaskSequence(tasks=tasks, class_order=np.asarray(class_order))


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------


def _luminance(img: np.ndarray) -> np.ndarray:
    return 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]


def _rgb_to_hsv(img: np.ndarray) -> np.ndarray:
    r, g, b = img[0], img[1], img[2]
    maxc = img.max(axis=0)
    minc = img.min(axis=0)
    delta = maxc - minc
    v = maxc
    s = np.where(maxc > 0, delta / np.maximum(maxc, 1e-12), 0.0)
    safe = np.where(delta == 0, 1.0, delta)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta == 0, 0.0, (h / 6.0) % 1.0)
    return np.stack([h, s, v])


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[0], hsv[1], hsv[2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b])


@dataclass
class AugParams:
    """One sample's drawn augmentation parameters."""

    dx: int = 0
    dy: int = 0
    flip: bool = False
    brightness: float = 1.0
    contrast: float = 1.0
    saturation: float = 1.0
    hue: float = 0.0


def draw_aug_params(policy: AugPolicy, rng: Prng) -> AugParams:
    """Draw the per-sample parameters, one stage at a time in pipeline order."""
    m = policy.max_translate_px
    dx = rng.integers(-m, m) if m > 0 else 0
    dy = (rng.integers(-m, m) if m > 0 else 0) if policy.two_axis_translate else 0
    flip = policy.hflip_prob > 0 and rng.uniform() < policy.hflip_prob
    j = policy.color_jitter
    bright = rng.uniform(1.0 - j, 1.0 + j)
    contrast = rng.uniform(1.0 - j, 1.0 + j)
    sat = rng.uniform(1.0 - j, 1.0 + j)
    hue = rng.uniform(-policy.hue_jitter, policy.hue_jitter)
    return AugParams(dx, dy, flip, bright, contrast, sat, hue)


def apply_aug(image: np.ndarray, p: AugParams, max_translate: int = 3) -> np.ndarray:
    """Apply one sample's augmentation to a [3,H,W] image in [0,1].

    Fixed pipeline order: integer translation with reflection padding,
    horizontal flip, brightness (multiply), contrast (blend with the image's
    mean luminance), saturation (blend with per-pixel luminance), additive hue
    shift in HSV with wrap-around. Each color stage clamps back to [0,1];
    exactly-neutral parameters short-circuit, so a zero-jitter policy is a
    bit-exact identity.
    """
    dtype = image.dtype
    if p.dx or p.dy:
        h, w = image.shape[1], image.shape[2]
        m = max(max_translate, abs(p.dx), abs(p.dy))
        padded = reflect_pad2d(image[None], m)[0]
        image = padded[:, m - p.dy:m - p.dy + h, m - p.dx:m - p.dx + w]
    if p.flip:
        image = image[:, :, ::-1]
    if p.brightness != 1.0:
        image = np.clip(image * p.brightness, 0.0, 1.0)
    if p.contrast != 1.0:
        mean_lum = _luminance(image).mean()
        image = np.clip(p.contrast * image + (1.0 - p.contrast) * mean_lum, 0.0, 1.0)
    if p.saturation != 1.0:
        lum = _luminance(image)
        image = np.clip(p.saturation * image + (1.0 - p.saturation) * lum[None], 0.0, 1.0)
    if p.hue != 0.0:
        hsv = _rgb_to_hsv(np.clip(image, 0.0, 1.0))
        hsv[0] = (hsv[0] + p.hue) % 1.0
        image = np.clip(_hsv_to_rgb(hsv), 0.0, 1.0)
    return np.ascontiguousarray(image, dtype=dtype)


def augment(image: np.ndarray, policy: AugPolicy, rng: Prng) -> np.ndarray:
    """Augment one [3,H,W] image in [0,1] with parameters drawn from `rng`."""
    if not policy.enabled:
        return image
    return apply_aug(image, draw_aug_params(policy, rng), policy.max_translate_px)


# ---------------------------------------------------------------------------
# Minibatch stream
# ---------------------------------------------------------------------------


def batches(x: np.ndarray, y: np.ndarray, batch_size: int, rng: Prng, epoch: int,
            policy: AugPolicy | None = None, task_ids: np.ndarray | None = None):
    """One epoch of minibatches, reshuffled per epoch, final short batch kept.

    The augmentation stream of a sample is rng.fork(epoch*N + index) with
    `index` the sample's position in the split, so augmentations are
    independent of how batches are assembled.
    """
    n = len(y)
    if n == 0:
        raise DataError("cannot iterate an empty split")
    if batch_size < 1:
        raise ArgumentError("batch_size must be >= 1")
    perm = rng.fork(SHUFFLE_STREAM_BASE + epoch).permutation(n)
    do_aug = policy is not None and policy.enabled
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        xb = x[idx]
        if do_aug:
            xb = xb.copy()
            for row, src in enumerate(idx):
                xb[row] = augment(xb[row], policy, rng.fork(epoch * n + int(src)))
        tb = task_ids[idx] if task_ids is not None else None
        yield xb, y[idx], tb
