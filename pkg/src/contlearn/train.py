"""The per-task optimization protocol: SGD with momentum, the validation
plateau schedule, and the epoch loop."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data import AugPolicy, TaskData, batches
from .errors import DataError, NumericError, StateError
from .nn import PROB_EPS, MultiHeadNetwork, softmax
from .tensor import Prng


@dataclass
class OptimState:
    """Classical SGD momentum state: v <- mu*v + g, theta <- theta - lr*v."""

    lr: float = 0.01
    momentum: float = 0.9
    velocity: dict = field(default_factory=dict)


def sgd_step(params: dict, grads: dict, opt: OptimState) -> None:
    """In-place momentum update of every parameter; no weight decay."""
    for name in params:
        p = params[name]
        g = grads[name]
        if g.shape != p.shape:
            raise StateError(f"gradient shape {g.shape} != parameter shape {p.shape} ({name})")
        v = opt.velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
            opt.velocity[name] = v
        v *= opt.momentum
        v += g
        p -= opt.lr * v


@dataclass
class SchedState:
    """Validation-plateau schedule: divide lr by `drop_factor` after `patience`
    consecutive non-improving epochs; stop below `min_lr` or at `max_epochs`."""

    drop_factor: float = 3.0
    patience: int = 5
    min_lr: float = 1e-4
    max_epochs: int = 200
    improve_tol: float = 1e-8
    best: float = math.inf
    stalls: int = 0
    epochs_seen: int = 0


def plateau_update(sched: SchedState, val_loss: float, opt: OptimState) -> str:
    """Consume one epoch's validation loss; returns "continue" or "stop"."""
    if math.isnan(val_loss):
        raise NumericError("validation loss is NaN; aborting run")
    sched.epochs_seen += 1
    if val_loss < sched.best - sched.improve_tol:
        sched.best = val_loss
        sched.stalls = 0
    else:
        sched.stalls += 1
        if sched.stalls >= sched.patience:
            opt.lr /= sched.drop_factor
            sched.stalls = 0
    if opt.lr < sched.min_lr or sched.epochs_seen >= sched.max_epochs:
        return "stop"
    return "continue"


@dataclass
class TaskView:
    """What one training round sees: arrays plus per-sample task ids (the ids
    vary only for JOINT's union view)."""

    x_train: np.ndarray
    y_train: np.ndarray
    t_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    t_val: np.ndarray


def task_view(task: TaskData, task_id: int) -> TaskView:
    n_tr, n_va = len(task.y_train), len(task.y_val)
    return TaskView(task.x_train, task.y_train, np.full(n_tr, task_id, dtype=np.int64),
                    task.x_val, task.y_val, np.full(n_va, task_id, dtype=np.int64))


def union_view(tasks: list, upto: int) -> TaskView:
    """Concatenation of tasks [0..upto] for the JOINT baseline."""
    parts = [task_view(t, i) for i, t in enumerate(tasks[:upto + 1])]
    return TaskView(
        np.concatenate([p.x_train for p in parts]),
        np.concatenate([p.y_train for p in parts]),
        np.concatenate([p.t_train for p in parts]),
        np.concatenate([p.x_val for p in parts]),
        np.concatenate([p.y_val for p in parts]),
        np.concatenate([p.t_val for p in parts]),
    )


def _own_head_nll(net: MultiHeadNetwork, x, y, task_ids, batch_size=256) -> float:
    """Mean cross-entropy of each sample under its own task's head, eval mode."""
    total = 0.0
    n = len(y)
    for start in range(0, n, batch_size):
        xb, yb, tb = x[start:start + batch_size], y[start:start + batch_size], \
            task_ids[start:start + batch_size]
        feats, _ = net.forward_features(xb, "eval")
        for t in np.unique(tb):
            idx = np.flatnonzero(tb == t)
            logits, _ = net.head_logits(int(t), feats)
            p = softmax(logits[idx])
            picked = np.maximum(p[np.arange(len(idx)), yb[idx]], PROB_EPS)
            total += float(-np.log(picked).sum())
    return total / n


def validation_loss(net, strategy, view: TaskView, val_metric: str = "ce",
                    batch_size: int = 256) -> float:
    """Plateau criterion. "ce" (default) is the plain own-head cross-entropy on
    the val split; "full" evaluates the strategy's complete training loss with
    eval-mode forwards."""
    if val_metric == "ce":
        return _own_head_nll(net, view.x_val, view.y_val, view.t_val, batch_size)
    n = len(view.y_val)
    total = 0.0
    for start in range(0, n, batch_size):
        sl = slice(start, start + batch_size)
        loss, _ = strategy.batch_loss(net, view.x_val[sl], view.y_val[sl],
                                      view.t_val[sl], mode="eval")
        total += loss * (min(start + batch_size, n) - start)
    return total / n


def train_task(net: MultiHeadNetwork, strategy, view: TaskView, config: dict,
               rng: Prng) -> list:
    """Run the epoch loop for one task; returns one log row dict per epoch.

    Final weights are kept as-is (early stopping acts only through the lr
    threshold, there is no best-checkpoint restore).
    """
    if net.frozen:
        raise StateError("cannot train a frozen network")
    if len(view.y_train) == 0 or len(view.y_val) == 0:
        raise DataError("train_task needs nonempty train and val splits")
    optim_cfg = config.get("optim", {})
    sched_cfg = config.get("schedule", {})
    opt = OptimState(lr=optim_cfg.get("lr", 0.01), momentum=optim_cfg.get("momentum", 0.9))
    sched = SchedState(
        drop_factor=sched_cfg.get("drop_factor", 3.0),
        patience=sched_cfg.get("patience", 5),
        min_lr=sched_cfg.get("min_lr", 1e-4),
        max_epochs=sched_cfg.get("max_epochs", 200),
        improve_tol=sched_cfg.get("improve_tol", 1e-8),
    )
    val_metric = sched_cfg.get("val_metric", "ce")
    batch_size = config.get("train", {}).get("batch_size", 64)
    aug_cfg = config.get("augment", {})
    policy = AugPolicy(
        enabled=aug_cfg.get("enabled", False),
        max_translate_px=aug_cfg.get("max_translate_px", 3),
        hflip_prob=aug_cfg.get("hflip_prob", 0.5),
        color_jitter=aug_cfg.get("color_jitter", 0.3),
        hue_jitter=aug_cfg.get("hue_jitter", 0.2),
        two_axis_translate=aug_cfg.get("two_axis_translate", True),
    )
    loader_rng = rng.fork(0)
    params = net.named_params()
    log = []
    for epoch in range(sched.max_epochs):
        t0 = time.monotonic()
        lr_used = opt.lr
        total_loss = 0.0
        seen = 0
        for xb, yb, tb in batches(view.x_train, view.y_train, batch_size, loader_rng,
                                  epoch, policy=policy, task_ids=view.t_train):
            loss, grads = strategy.batch_loss(net, xb, yb, tb)
            sgd_step(params, grads, opt)
            total_loss += loss * len(yb)
            seen += len(yb)
        val = validation_loss(net, strategy, view, val_metric)
        log.append({
            "epoch": epoch,
            "train_loss": total_loss / seen,
            "val_loss": val,
            "lr": lr_used,
            "seconds": time.monotonic() - t0,
        })
        if plateau_update(sched, val, opt) == "stop":
            break
    return log


def evaluate(net: MultiHeadNetwork, head: int, x: np.ndarray, y: np.ndarray,
             batch_size: int = 512) -> float:
    """Eval-mode top-1 accuracy of one head on its task's split."""
    if len(y) == 0:
        raise DataError("cannot evaluate an empty split")
    correct = 0
    for start in range(0, len(y), batch_size):
        xb = x[start:start + batch_size]
        feats, _ = net.forward_features(xb, "eval")
        logits, _ = net.head_logits(head, feats)
        correct += int((logits.argmax(axis=1) == y[start:start + batch_size]).sum())
    return correct / len(y)
