"""Continual-learning strategies behind a common lifecycle contract.

Each strategy implements ``start_task`` (called before the new head is
attached), ``batch_loss`` (full loss + gradients for one minibatch),
``end_task`` (consolidation) and ``eval_net`` (the network evaluation should
run on, which differs from the trained one only for IMM).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ConfigError, DataError, ShapeError, StateError
from .nn import PROB_EPS, MultiHeadNetwork, cross_entropy, softmax
from .tensor import Prng


# ---------------------------------------------------------------------------
# Distillation numerics
# ---------------------------------------------------------------------------


def temperature_scale(p, theta: float):
    """Sharpen/soften a probability vector: p_k^(1/theta), renormalized.

    Entries are clamped at 1e-12 before the fractional power. Works on a
    single vector or row-wise on a batch.
    """
    if theta <= 0:
        raise ArgumentError(f"temperature must be positive, got {theta}")
    p = np.asarray(p, dtype=np.float64)
    q = np.maximum(p, PROB_EPS) ** (1.0 / theta)
    return q / q.sum(axis=-1, keepdims=True)


def distill_loss(student_p, teacher_p, theta: float) -> float:
    """Knowledge-distillation loss: cross-entropy between the temperature-scaled
    teacher and student probability vectors."""
    student_p = np.asarray(student_p, dtype=np.float64)
    teacher_p = np.asarray(teacher_p, dtype=np.float64)
    if student_p.shape != teacher_p.shape:
        raise ShapeError(
            f"student/teacher length mismatch: {student_p.shape} vs {teacher_p.shape}")
    ys = temperature_scale(student_p, theta)
    yt = temperature_scale(teacher_p, theta)
    return float(-(yt * np.log(np.maximum(ys, PROB_EPS))).sum(axis=-1).mean())


def ce_loss_and_dlogits(logits: np.ndarray, labels: np.ndarray):
    """Batch-mean cross-entropy from logits plus its gradient w.r.t. logits."""
    p = softmax(logits)
    loss = cross_entropy(p, labels)
    d = p.copy()
    d[np.arange(len(labels)), labels] -= 1.0
    d /= len(labels)
    return loss, d


def distill_loss_batch_and_dlogits(student_logits: np.ndarray,
                                   teacher_probs: np.ndarray, theta: float):
    """Batch-mean distillation loss for one head plus its logit gradient."""
    sp = softmax(student_logits)
    loss = distill_loss(sp, teacher_probs, theta)
    s_soft = softmax((student_logits / theta).astype(student_logits.dtype))
    q_soft = temperature_scale(teacher_probs, theta).astype(student_logits.dtype)
    d = (s_soft - q_soft) / (theta * student_logits.shape[0])
    return loss, d.astype(student_logits.dtype)


# ---------------------------------------------------------------------------
# EWC machinery
# ---------------------------------------------------------------------------


@dataclass
class FisherState:
    """Diagonal Fisher plus the parameter anchor of the last consolidation."""

    fisher: dict
    anchor: dict
    lam: float
    gamma: float


def fisher_diag(net: MultiHeadNetwork, head: int, x: np.ndarray, y: np.ndarray,
                max_samples: int | None = None) -> dict:
    """Empirical diagonal Fisher over backbone parameters.

    Mean over samples of the squared gradient of log p(true label | x),
    evaluated one sample at a time in eval mode.
    """
    if x.shape[0] == 0:
        raise DataError("fisher_diag needs a nonempty sample set")
    n = x.shape[0] if max_samples is None else min(x.shape[0], max_samples)
    fisher = {k: np.zeros(v.shape, dtype=np.float64)
              for k, v in net.backbone_params().items()}
    for i in range(n):
        feats, bc = net.forward_features(x[i:i + 1], "eval")
        logits, hc = net.head_logits(head, feats)
        p = softmax(logits)
        d = p.copy()
        d[0, y[i]] -= 1.0  # grad of -log p; the square is sign-blind
        grads, _ = net.backward_multi(bc, [(head, hc, d)])
        for k in fisher:
            fisher[k] += grads[k].astype(np.float64) ** 2
    dtype = net.dtype
    return {k: (v / n).astype(dtype) for k, v in fisher.items()}


def ewc_penalty(params: dict, state: FisherState):
    """Quadratic anchoring penalty (lam/2) * sum F * (theta - anchor)^2.

    Returns (penalty value, gradient contribution per parameter).
    """
    if set(params) != set(state.anchor):
        raise StateError("EWC state does not match the parameter store")
    pen = 0.0
    grads = {}
    for k, theta in params.items():
        if theta.shape != state.anchor[k].shape:
            raise StateError(f"EWC anchor shape mismatch for {k}")
        delta = theta - state.anchor[k]
        f = state.fisher[k]
        pen += float((f * delta * delta).sum())
        grads[k] = state.lam * f * delta
    return 0.5 * state.lam * pen, grads


# ---------------------------------------------------------------------------
# IMM machinery
# ---------------------------------------------------------------------------


@dataclass
class BankEntry:
    params: dict
    buffers: dict
    fisher: dict | None = None


@dataclass
class ModelBank:
    entries: list = field(default_factory=list)


def _copy_arrays(d: dict) -> dict:
    return {k: v.copy() for k, v in d.items()}


def imm_merge(bank: ModelBank, mode: str = "mean") -> dict:
    """Merge the bank's backbone parameters: equal mixing ("mean") or
    Fisher-weighted ("mode"); heads are never merged."""
    if not bank.entries:
        raise StateError("cannot merge an empty model bank")
    if mode not in ("mean", "mode"):
        raise ConfigError(f"unknown IMM merge mode {mode!r}")
    keys = bank.entries[0].params.keys()
    merged = {}
    for k in keys:
        thetas = [e.params[k].astype(np.float64) for e in bank.entries]
        if mode == "mean":
            merged[k] = np.mean(thetas, axis=0)
        else:
            fishers = [e.fisher[k].astype(np.float64) for e in bank.entries]
            num = np.sum([f * t for f, t in zip(fishers, thetas)], axis=0)
            den = np.sum(fishers, axis=0) + 1e-8
            merged[k] = num / den
    dtype = bank.entries[0].params[next(iter(keys))].dtype
    return {k: v.astype(dtype) for k, v in merged.items()}


def merge_buffers(bank: ModelBank) -> dict:
    """Equal-mix running statistics for evaluating a merged backbone."""
    if not bank.entries:
        raise StateError("cannot merge an empty model bank")
    keys = bank.entries[0].buffers.keys()
    dtype = None
    out = {}
    for k in keys:
        stack = [e.buffers[k].astype(np.float64) for e in bank.entries]
        dtype = bank.entries[0].buffers[k].dtype
        out[k] = np.mean(stack, axis=0).astype(dtype)
    return out


# ---------------------------------------------------------------------------
# Strategies
# ---------------------------------------------------------------------------


class Strategy:
    name = "base"
    needs_union = False  # JOINT trains on all seen tasks' data

    def __init__(self):
        self.task_id = -1

    def start_task(self, net: MultiHeadNetwork, task_id: int, rng: Prng) -> None:
        """Called before the new task's head is attached."""
        self.task_id = task_id

    def batch_loss(self, net, x, y, task_ids=None, mode="train"):
        raise NotImplementedError

    def end_task(self, net: MultiHeadNetwork, task_id: int, view, rng: Prng) -> None:
        pass

    def eval_net(self, net: MultiHeadNetwork) -> MultiHeadNetwork:
        return net

    def _ce_term(self, net, x, y, head, mode):
        feats, bc = net.forward_features(x, mode)
        logits, hc = net.head_logits(head, feats)
        loss, dlogits = ce_loss_and_dlogits(logits, y)
        return loss, bc, [(head, hc, dlogits)]


class FineTune(Strategy):
    """Naive baseline: plain cross-entropy on the current task's head."""

    name = "finetune"

    def batch_loss(self, net, x, y, task_ids=None, mode="train"):
        loss, bc, terms = self._ce_term(net, x, y, self.task_id, mode)
        grads, _ = net.backward_multi(bc, terms)
        return loss, grads


class LwF(Strategy):
    """Learning without Forgetting: cross-entropy on the new head plus one
    temperature-scaled distillation term per previous head, each weighted 1.

    The teacher is a frozen snapshot taken before the new head is attached and
    consumes the same (augmented) batch inputs as the student, in eval mode.
    """

    name = "lwf"

    def __init__(self, theta: float = 2.0):
        super().__init__()
        if theta <= 0:
            raise ConfigError(f"lwf temperature must be positive, got {theta}")
        self.theta = theta
        self.teacher: MultiHeadNetwork | None = None

    def start_task(self, net, task_id, rng):
        super().start_task(net, task_id, rng)
        self.teacher = net.snapshot() if task_id > 0 else None

    def _distill_terms(self, net, feats, x):
        """(loss, head-terms) for all previous heads against the teacher."""
        if self.teacher is None or self.task_id == 0:
            return 0.0, []
        if len(self.teacher.heads) < self.task_id:
            raise StateError(
                f"teacher exposes {len(self.teacher.heads)} heads, "
                f"task {self.task_id} needs {self.task_id}")
        tfeats, _ = self.teacher.forward_features(x, "eval")
        total = 0.0
        terms = []
        for i in range(self.task_id):
            tlogits, _ = self.teacher.head_logits(i, tfeats)
            teacher_p = softmax(tlogits)
            slogits, hc = net.head_logits(i, feats)
            dloss, dlogits = distill_loss_batch_and_dlogits(slogits, teacher_p, self.theta)
            total += dloss
            terms.append((i, hc, dlogits))
        return total, terms

    def batch_loss(self, net, x, y, task_ids=None, mode="train"):
        feats, bc = net.forward_features(x, mode)
        logits, hc = net.head_logits(self.task_id, feats)
        loss, dlogits = ce_loss_and_dlogits(logits, y)
        terms = [(self.task_id, hc, dlogits)]
        dist_loss, dist_terms = self._distill_terms(net, feats, x)
        grads, _ = net.backward_multi(bc, terms + dist_terms)
        return loss + dist_loss, grads


class EWC(Strategy):
    """Online EWC: quadratic penalty toward the last consolidated parameters,
    weighted by a decayed running diagonal Fisher."""

    name = "ewc"

    def __init__(self, lam: float = 5000.0, gamma: float = 1.0,
                 fisher_samples: int = 1024):
        super().__init__()
        self.lam = lam
        self.gamma = gamma
        self.fisher_samples = fisher_samples
        self.state: FisherState | None = None

    def batch_loss(self, net, x, y, task_ids=None, mode="train"):
        loss, bc, terms = self._ce_term(net, x, y, self.task_id, mode)
        grads, _ = net.backward_multi(bc, terms)
        if self.state is not None and self.lam != 0.0:
            pen, pgrads = ewc_penalty(net.backbone_params(), self.state)
            loss += pen
            for k, g in pgrads.items():
                grads[k] += g
        return loss, grads

    def end_task(self, net, task_id, view, rng):
        fresh = fisher_diag(net, task_id, view.x_train, view.y_train,
                            max_samples=self.fisher_samples)
        if self.state is None:
            fisher = fresh
        else:
            fisher = {k: self.gamma * self.state.fisher[k] + fresh[k] for k in fresh}
        self.state = FisherState(fisher=fisher,
                                 anchor=_copy_arrays(net.backbone_params()),
                                 lam=self.lam, gamma=self.gamma)


class IMM(Strategy):
    """Incremental moment matching: sequential training with an optional L2
    pull toward the previous merge; per-task backbones are stored and merged
    (mean or Fisher-weighted mode) for evaluation."""

    name = "imm"

    def __init__(self, mode: str = "mean", l2: float = 0.0,
                 fisher_samples: int = 1024):
        super().__init__()
        if mode not in ("mean", "mode"):
            raise ConfigError(f"imm mode must be 'mean' or 'mode', got {mode!r}")
        self.mode = mode
        self.l2 = l2
        self.fisher_samples = fisher_samples
        self.bank = ModelBank()
        self.anchor: dict | None = None

    def start_task(self, net, task_id, rng):
        super().start_task(net, task_id, rng)
        if self.l2 > 0.0 and self.bank.entries:
            self.anchor = imm_merge(self.bank, self.mode)
        else:
            self.anchor = None

    def batch_loss(self, net, x, y, task_ids=None, mode="train"):
        loss, bc, terms = self._ce_term(net, x, y, self.task_id, mode)
        grads, _ = net.backward_multi(bc, terms)
        if self.anchor is not None:
            params = net.backbone_params()
            for k, theta in params.items():
                delta = theta - self.anchor[k]
                loss += 0.5 * self.l2 * float((delta * delta).sum())
                grads[k] += self.l2 * delta
        return loss, grads

    def end_task(self, net, task_id, view, rng):
        fisher = None
        if self.mode == "mode":
            fisher = fisher_diag(net, task_id, view.x_train, view.y_train,
                                 max_samples=self.fisher_samples)
        self.bank.entries.append(BankEntry(params=_copy_arrays(net.backbone_params()),
                                           buffers=_copy_arrays(net.named_buffers()),
                                           fisher=fisher))

    def eval_net(self, net):
        if not self.bank.entries:
            return net
        merged = net.clone()
        own = merged.backbone_params()
        for k, arr in imm_merge(self.bank, self.mode).items():
            own[k][...] = arr
        bufs = merged.named_buffers()
        for k, arr in merge_buffers(self.bank).items():
            bufs[k][...] = arr
        return merged


class Joint(Strategy):
    """Upper bound: retrains on the union of all seen tasks' data; every
    sample supervises only its own task's head."""

    name = "joint"
    needs_union = True

    def batch_loss(self, net, x, y, task_ids=None, mode="train"):
        if task_ids is None:
            task_ids = np.full(len(y), self.task_id, dtype=np.int64)
        feats, bc = net.forward_features(x, mode)
        terms = []
        total_nll = 0.0
        n = len(y)
        for t in np.unique(task_ids):
            idx = np.flatnonzero(task_ids == t)
            logits, hc = net.head_logits(int(t), feats)
            p = softmax(logits[idx])
            picked = np.maximum(p[np.arange(len(idx)), y[idx]], PROB_EPS)
            total_nll += float(-np.log(picked).sum())
            d = np.zeros_like(logits)
            sub = p.copy()
            sub[np.arange(len(idx)), y[idx]] -= 1.0
            d[idx] = sub / n
            terms.append((int(t), hc, d))
        grads, _ = net.backward_multi(bc, terms)
        return total_nll / n, grads


_STRATEGIES = {
    "finetune": FineTune,
    "lwf": LwF,
    "ewc": EWC,
    "imm": IMM,
    "joint": Joint,
}


def make_strategy(cfg: dict) -> Strategy:
    """Instantiate a strategy from its config section."""
    name = cfg.get("name")
    if name not in _STRATEGIES:
        raise ConfigError(f"unknown strategy {name!r}; have {sorted(_STRATEGIES)}")
    if name == "lwf":
        return LwF(theta=cfg.get("theta", 2.0))
    if name == "ewc":
        return EWC(lam=cfg.get("lam", 5000.0), gamma=cfg.get("gamma", 1.0),
                   fisher_samples=cfg.get("fisher_samples", 1024))
    if name == "imm":
        return IMM(mode=cfg.get("mode", "mean"), l2=cfg.get("l2", 0.0),
                   fisher_samples=cfg.get("fisher_samples", 1024))
    return _STRATEGIES[name]()
