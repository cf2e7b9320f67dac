"""Tabular summaries across run directories (plain text plus CSV)."""

from __future__ import annotations

import glob
import json
import os

from .errors import ReportError
from .metrics import RunResult, acc_final, aggregate, bwt_final, read_rmatrix_csv


def _arch_label(arch: dict) -> str:
    name = arch["name"]
    if name == "resnet":
        return f"resnet-b{arch['blocks_per_group']}-w{arch['width_factor']}"
    return name + ("-d" if arch.get("dropout") else "-nd")


def collect_run(run_dir: str) -> dict:
    manifest_path = os.path.join(run_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise ReportError(f"missing artifact: {manifest_path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    seed_files = sorted(glob.glob(os.path.join(run_dir, "seed_*", "rmatrix.csv")))
    if not seed_files:
        raise ReportError(f"missing artifact: {os.path.join(run_dir, 'seed_*', 'rmatrix.csv')}")
    results = [RunResult(config_digest=manifest["digest"], seed=i,
                         rmatrix=read_rmatrix_csv(p))
               for i, p in enumerate(seed_files)]
    agg = aggregate(results)
    cfg = manifest["config"]
    return {
        "run": os.path.basename(os.path.normpath(run_dir)),
        "dataset": cfg["dataset"]["kind"],
        "tasks": cfg["tasks"],
        "arch": _arch_label(cfg["arch"]),
        "strategy": cfg["strategy"]["name"],
        "augment": "yes" if cfg["augment"]["enabled"] else "no",
        "seeds": agg["n"],
        "acc": agg["acc"],
        "bwt": agg["bwt"],
    }


def cmd_report(run_dirs: list, out_path: str) -> str:
    """Write a one-row-per-run table (text) plus a full-precision CSV sibling."""
    if not run_dirs:
        raise ReportError("no run directories given")
    missing = [d for d in run_dirs if not os.path.exists(os.path.join(d, "manifest.json"))]
    if missing:
        raise ReportError("missing artifacts: " +
                          ", ".join(os.path.join(d, "manifest.json") for d in missing))
    rows = [collect_run(d) for d in run_dirs]
    header = ["run", "dataset", "tasks", "arch", "strategy", "aug", "seeds",
              "ACC", "BWT"]
    table = [header]
    for r in rows:
        bwt = "-" if r["bwt"] is None else f"{r['bwt'][0]:.1f} +/- {r['bwt'][1]:.1f}"
        table.append([r["run"], r["dataset"], str(r["tasks"]), r["arch"], r["strategy"],
                      r["augment"], str(r["seeds"]),
                      f"{r['acc'][0]:.1f} +/- {r['acc'][1]:.1f}", bwt])
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    lines = []
    for j, row in enumerate(table):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    text = "\n".join(lines) + "\n"
    with open(out_path, "w") as fh:
        fh.write(text)
    csv_path = out_path + ".csv"
    with open(csv_path, "w") as fh:
        fh.write("run,dataset,tasks,arch,strategy,augment,seeds,"
                 "acc_mean,acc_std,bwt_mean,bwt_std\n")
        for r in rows:
            bwt_m = "" if r["bwt"] is None else repr(r["bwt"][0])
            bwt_s = "" if r["bwt"] is None else repr(r["bwt"][1])
            fh.write(f"{r['run']},{r['dataset']},{r['tasks']},{r['arch']},"
                     f"{r['strategy']},{r['augment']},{r['seeds']},"
                     f"{r['acc'][0]!r},{r['acc'][1]!r},{bwt_m},{bwt_s}\n")
    return text
