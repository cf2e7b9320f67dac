"""Experiment orchestration: one strategy lifecycle per seed, R-matrix filling,
artifact persistence and cross-seed aggregation.

Run directory layout (fixed):
    out_dir/
      manifest.json          resolved config, digest, status
      seed_<s>/rmatrix.csv   ragged accuracy matrix, one row per task
      seed_<s>/logs.csv      per-epoch training log
      seed_<s>/result.json   seed, digest, wall-clock
      summary.csv            cross-seed mean/std of ACC, BWT and curve points
      charts/                filled in by the plot command
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor

from .config import config_digest
from .data import load_cifar100, load_tensor_archive, split_tasks, split_train_test, synth_tasks
from .errors import ConfigError
from .metrics import RMatrix, RunResult, aggregate, write_rmatrix_csv
from .nn import init_params, make_network
from .strategies import make_strategy
from .tensor import DTYPES, Prng
from .train import evaluate, task_view, train_task, union_view

# Child-stream keys of the per-seed root rng; every consumer gets its own
# stream so strategies stay in lockstep whenever their histories agree.
STREAM_INIT = 1
STREAM_DROPOUT = 2
STREAM_HEAD_BASE = 1_000
STREAM_START_BASE = 2_000
STREAM_TRAIN_BASE = 3_000
STREAM_END_BASE = 4_000


def build_datasets(ds_cfg: dict):
    """Materialize (train, test) datasets from the config's dataset section."""
    kind = ds_cfg["kind"]
    if kind == "synthetic":
        total = ds_cfg["per_class"] + ds_cfg["test_per_class"]
        full = synth_tasks(ds_cfg["classes"], total, ds_cfg["image_size"],
                           ds_cfg["separation"], Prng(ds_cfg["seed"]))
        return split_train_test(full, ds_cfg["test_per_class"])
    if kind == "cifar100":
        return load_cifar100(ds_cfg["path"]), load_cifar100(ds_cfg["test_path"])
    if kind == "archive":
        return load_tensor_archive(ds_cfg["path"]), load_tensor_archive(ds_cfg["test_path"])
    raise ConfigError(f"unknown dataset kind {kind!r}")


def run_lifecycle(cfg: dict, seed: int, strategy=None):
    """Run every task through the configured strategy for one seed.

    Returns (RunResult, final network); the R matrix's row t holds eval-mode
    test accuracies of heads 1..t right after training task t. A pre-built
    `strategy` instance overrides the config's strategy section.
    """
    started = time.monotonic()
    train_ds, test_ds = build_datasets(cfg["dataset"])
    seq = split_tasks(train_ds, test_ds, cfg["tasks"], seed)
    dtype = DTYPES[cfg.get("precision", "f32")]
    net = make_network(cfg["arch"], train_ds.images.shape[1:], dtype)
    root = Prng(seed)
    init_params(net, root.fork(STREAM_INIT))
    net.dropout_rng = root.fork(STREAM_DROPOUT)
    if strategy is None:
        strategy = make_strategy(cfg["strategy"])
    rmat = RMatrix(cfg["tasks"])
    logs = []
    for t, task in enumerate(seq.tasks):
        strategy.start_task(net, t, root.fork(STREAM_START_BASE + t))
        net.add_head(task.num_classes, root.fork(STREAM_HEAD_BASE + t))
        view = union_view(seq.tasks, t) if strategy.needs_union else task_view(task, t)
        rows = train_task(net, strategy, view, cfg, root.fork(STREAM_TRAIN_BASE + t))
        logs.extend({"task": t, **row} for row in rows)
        strategy.end_task(net, t, view, root.fork(STREAM_END_BASE + t))
        eval_net = strategy.eval_net(net)
        rmat.add_row([evaluate(eval_net, i, seq.tasks[i].x_test, seq.tasks[i].y_test)
                      for i in range(t + 1)])
    result = RunResult(config_digest=config_digest(cfg), seed=seed, rmatrix=rmat,
                       wall_clock=time.monotonic() - started, logs=logs)
    return result, net


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

_LOG_COLUMNS = ("task", "epoch", "train_loss", "val_loss", "lr", "seconds")


def _write_logs_csv(path, logs) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(_LOG_COLUMNS) + "\n")
        for row in logs:
            fh.write(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c])
                              for c in _LOG_COLUMNS) + "\n")


def _write_summary_csv(path, agg: dict) -> None:
    with open(path, "w") as fh:
        fh.write("metric,t,mean,std,n\n")
        n = agg["n"]
        fh.write(f"acc,final,{agg['acc'][0]!r},{agg['acc'][1]!r},{n}\n")
        if agg["bwt"] is not None:
            fh.write(f"bwt,final,{agg['bwt'][0]!r},{agg['bwt'][1]!r},{n}\n")
        for t, (m, s) in enumerate(agg["acc_curve"], start=1):
            fh.write(f"acc,{t},{m!r},{s!r},{n}\n")
        for t, ms in enumerate(agg["bwt_curve"], start=1):
            if ms is not None:
                fh.write(f"bwt,{t},{ms[0]!r},{ms[1]!r},{n}\n")


def _run_one_seed(cfg, seed, out_dir):
    result, _ = run_lifecycle(cfg, seed)
    seed_dir = os.path.join(out_dir, f"seed_{seed}")
    os.makedirs(seed_dir, exist_ok=True)
    write_rmatrix_csv(os.path.join(seed_dir, "rmatrix.csv"), result.rmatrix)
    _write_logs_csv(os.path.join(seed_dir, "logs.csv"), result.logs)
    with open(os.path.join(seed_dir, "result.json"), "w") as fh:
        json.dump({"seed": seed, "config_digest": result.config_digest,
                   "wall_clock": result.wall_clock}, fh, indent=2)
    return result


def cmd_run(cfg: dict, log=print) -> str:
    """Execute a resolved config: all seeds, persistence, aggregation.

    On a mid-run failure the manifest is rewritten with status "failed" and
    the partial artifacts are retained.
    """
    out_dir = cfg.get("out_dir")
    if not out_dir:
        raise ConfigError("config needs out_dir for a persisted run")
    os.makedirs(out_dir, exist_ok=True)
    digest = config_digest(cfg)
    manifest = {"config": cfg, "digest": digest, "status": "running"}
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    seeds = cfg["seeds"]
    threads = cfg.get("threads", 1)
    try:
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(lambda s: _run_one_seed(cfg, s, out_dir), seeds))
        else:
            results = [_run_one_seed(cfg, s, out_dir) for s in seeds]
        agg = aggregate(results)
        _write_summary_csv(os.path.join(out_dir, "summary.csv"), agg)
        manifest["status"] = "complete"
        if log is not None:
            acc_m, acc_s = agg["acc"]
            line = f"ACC {acc_m:.1f} +/- {acc_s:.1f}"
            if agg["bwt"] is not None:
                line += f", BWT {agg['bwt'][0]:.1f} +/- {agg['bwt'][1]:.1f}"
            log(f"{out_dir}: {line} over {agg['n']} seed(s)")
    except Exception as exc:
        manifest["status"] = "failed"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        with open(manifest_path, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        raise
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return out_dir
