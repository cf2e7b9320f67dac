"""Development oracle for the forgetting acceptance criteria (not shipped)."""
import sys
import time

import numpy as np

sys.path.insert(0, "src")
from contlearn.config import resolve_config
from contlearn.metrics import acc_final, bwt_final
from contlearn.runner import run_lifecycle


def cfg_for(strategy, arch, separation=2.0, per_class=60, max_epochs=30, theta=2.0):
    raw = {
        "dataset": {"kind": "synthetic", "classes": 12, "per_class": per_class,
                    "test_per_class": 15, "image_size": 8, "separation": separation,
                    "seed": 0},
        "tasks": 4,
        "arch": arch,
        "strategy": {"name": strategy, **({"theta": theta} if strategy == "lwf" else {})},
        "schedule": {"max_epochs": max_epochs},
        "train": {"batch_size": 64},
        "seeds": [1, 2, 3, 4, 5],
    }
    return resolve_config(raw)


def run_setting(label, cfg, seeds=(1, 2, 3, 4, 5)):
    accs, bwts = [], []
    t0 = time.time()
    for s in seeds:
        result, _ = run_lifecycle(cfg, s)
        accs.append(acc_final(result.rmatrix))
        bwts.append(bwt_final(result.rmatrix))
    print(f"{label:<28} ACC {np.mean(accs):7.2f} +/- {np.std(accs, ddof=1):5.2f}   "
          f"BWT {np.mean(bwts):7.2f} +/- {np.std(bwts, ddof=1):5.2f}   "
          f"({time.time() - t0:.1f}s)")
    return np.mean(accs), np.mean(bwts)


if __name__ == "__main__":
    sep = float(sys.argv[1]) if len(sys.argv) > 1 else 2.0
    per_class = int(sys.argv[2]) if len(sys.argv) > 2 else 60
    epochs = int(sys.argv[3]) if len(sys.argv) > 3 else 30
    resnet = {"name": "resnet", "blocks_per_group": 1, "width_factor": 1}
    print(f"separation={sep} per_class={per_class} epochs={epochs}")
    acc_ft, bwt_ft = run_setting("finetune/resnet", cfg_for("finetune", resnet, sep, per_class, epochs))
    acc_lwf, bwt_lwf = run_setting("lwf/resnet", cfg_for("lwf", resnet, sep, per_class, epochs))
    acc_j, bwt_j = run_setting("joint/resnet", cfg_for("joint", resnet, sep, per_class, epochs))
    print(f"  BWT(ft) < -10:        {bwt_ft < -10}")
    print(f"  BWT(lwf) > BWT(ft)+5: {bwt_lwf > bwt_ft + 5}")
    print(f"  ACC(lwf) > ACC(ft):   {acc_lwf > acc_ft}")
    print(f"  ACC(joint) >= ACC(lwf)-1: {acc_j >= acc_lwf - 1}")
    for drop in (False, True):
        arch = {"name": "tinycnn", "dropout": drop}
        run_setting(f"lwf/tinycnn dropout={drop}", cfg_for("lwf", arch, sep, per_class, epochs))
