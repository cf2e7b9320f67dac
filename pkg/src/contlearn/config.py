"""Run-configuration parsing, strict validation and the config digest.

Configs are JSON documents with nested sections. Unknown keys anywhere are
hard errors (they are almost always typos in hyperparameter names), and each
component variant (dataset kind, architecture, strategy) declares exactly
which keys it accepts.
"""

from __future__ import annotations

import copy
import hashlib
import json

from .errors import ConfigError

_DATASET_VARIANTS = {
    "synthetic": {
        "required": {"classes", "per_class"},
        "defaults": {"test_per_class": 10, "image_size": 8, "separation": 3.0, "seed": 0},
    },
    "cifar100": {"required": {"path", "test_path"}, "defaults": {}},
    "archive": {"required": {"path", "test_path"}, "defaults": {}},
}

_ARCH_VARIANTS = {
    "alexnet": {"required": set(), "defaults": {"dropout": False}},
    "tinycnn": {"required": set(), "defaults": {"dropout": False}},
    "resnet": {"required": {"blocks_per_group", "width_factor"}, "defaults": {}},
}

_STRATEGY_VARIANTS = {
    "finetune": {"required": set(), "defaults": {}},
    "lwf": {"required": set(), "defaults": {"theta": 2.0}},
    "ewc": {"required": set(),
            "defaults": {"lam": 5000.0, "gamma": 1.0, "fisher_samples": 1024}},
    "imm": {"required": set(),
            "defaults": {"mode": "mean", "l2": 0.0, "fisher_samples": 1024}},
    "joint": {"required": set(), "defaults": {}},
}

_SECTION_DEFAULTS = {
    "augment": {"enabled": False, "max_translate_px": 3, "hflip_prob": 0.5,
                "color_jitter": 0.3, "hue_jitter": 0.2, "two_axis_translate": True},
    "optim": {"lr": 0.01, "momentum": 0.9},
    "schedule": {"drop_factor": 3.0, "patience": 5, "min_lr": 1e-4, "max_epochs": 200,
                 "improve_tol": 1e-8, "val_metric": "ce"},
    "train": {"batch_size": 64},
}

_TOP_KEYS = {"dataset", "tasks", "arch", "strategy", "augment", "optim", "schedule",
             "train", "seeds", "out_dir", "precision", "threads"}
_TOP_REQUIRED = {"dataset", "tasks", "arch", "strategy", "seeds"}

# Execution-only fields: they never change the experiment's outcome identity.
_DIGEST_EXCLUDED = {"seeds", "out_dir", "threads"}


def _check_keys(section: dict, allowed: set, path: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key {path}.{sorted(unknown)[0]!r}")


def _resolve_variant(section: dict, variants: dict, selector: str, path: str) -> dict:
    if not isinstance(section, dict):
        raise ConfigError(f"{path} must be an object")
    name = section.get(selector)
    if name not in variants:
        raise ConfigError(f"{path}.{selector} must be one of {sorted(variants)}, got {name!r}")
    spec = variants[name]
    allowed = {selector} | spec["required"] | set(spec["defaults"])
    _check_keys(section, allowed, path)
    missing = spec["required"] - set(section)
    if missing:
        raise ConfigError(f"{path} ({name}) is missing {sorted(missing)}")
    out = dict(spec["defaults"])
    out.update(section)
    return out


def resolve_config(raw: dict) -> dict:
    """Validate `raw` and return a fully-defaulted copy."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    _check_keys(raw, _TOP_KEYS, "config")
    missing = _TOP_REQUIRED - set(raw)
    if missing:
        raise ConfigError(f"config is missing {sorted(missing)}")
    cfg = copy.deepcopy(raw)
    cfg["dataset"] = _resolve_variant(cfg["dataset"], _DATASET_VARIANTS, "kind", "dataset")
    cfg["arch"] = _resolve_variant(cfg["arch"], _ARCH_VARIANTS, "name", "arch")
    cfg["strategy"] = _resolve_variant(cfg["strategy"], _STRATEGY_VARIANTS, "name",
                                       "strategy")
    for section, defaults in _SECTION_DEFAULTS.items():
        given = cfg.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"{section} must be an object")
        _check_keys(given, set(defaults), section)
        merged = dict(defaults)
        merged.update(given)
        cfg[section] = merged
    if not isinstance(cfg["tasks"], int) or cfg["tasks"] < 1:
        raise ConfigError("tasks must be a positive integer")
    seeds = cfg["seeds"]
    if (not isinstance(seeds, list) or not seeds
            or any(not isinstance(s, int) for s in seeds)):
        raise ConfigError("seeds must be a nonempty list of integers")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct")
    cfg.setdefault("precision", "f32")
    if cfg["precision"] not in ("f32", "f64"):
        raise ConfigError(f"precision must be 'f32' or 'f64', got {cfg['precision']!r}")
    cfg.setdefault("threads", 1)
    if not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
        raise ConfigError("threads must be a positive integer")
    if cfg["schedule"]["val_metric"] not in ("ce", "full"):
        raise ConfigError("schedule.val_metric must be 'ce' or 'full'")
    if cfg["strategy"]["name"] == "imm" and cfg["strategy"]["mode"] not in ("mean", "mode"):
        raise ConfigError("strategy.mode must be 'mean' or 'mode'")
    return cfg


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return resolve_config(raw)


def config_digest(resolved: dict) -> str:
    """Stable hash over the resolved experiment-defining fields.

    Execution fields (seeds, out_dir, threads) are excluded so results from
    different seeds of one experiment share a digest and can be aggregated.
    """
    payload = {k: v for k, v in resolved.items() if k not in _DIGEST_EXCLUDED}
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
