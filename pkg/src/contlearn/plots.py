"""Deterministic SVG charts of ACC/BWT over time.

Charts are emitted as plain SVG text with fixed number formatting and no
timestamps, so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import os

from .errors import PlotError
from .metrics import RunResult, aggregate, curves, read_rmatrix_csv

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#e377c2", "#7f7f7f"]

_W, _H = 720, 460
_ML, _MR, _MT, _MB = 64, 24, 40, 48  # margins


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5):
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def render_line_chart(series: list, title: str, y_label: str) -> str:
    """series: [{label, xs, means, stds}]; returns SVG text."""
    if not series:
        raise PlotError("no series to plot")
    all_x = sorted({x for s in series for x in s["xs"]})
    lo = min(m - sd for s in series for m, sd in zip(s["means"], s["stds"]))
    hi = max(m + sd for s in series for m, sd in zip(s["means"], s["stds"]))
    if hi - lo < 1e-9:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    x0, x1 = min(all_x), max(all_x)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    px = lambda x: _ML + (x - x0) / (x1 - x0) * (_W - _ML - _MR)
    py = lambda y: _H - _MB - (y - lo) / (hi - lo) * (_H - _MT - _MB)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
           f'viewBox="0 0 {_W} {_H}">',
           f'<rect width="{_W}" height="{_H}" fill="white"/>',
           f'<text x="{_W // 2}" y="24" text-anchor="middle" font-family="sans-serif" '
           f'font-size="16">{title}</text>']
    # axes
    out.append(f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" '
               'stroke="black"/>')
    out.append(f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" stroke="black"/>')
    for yt in _ticks(lo, hi):
        out.append(f'<line x1="{_ML - 4}" y1="{_fmt(py(yt))}" x2="{_ML}" '
                   f'y2="{_fmt(py(yt))}" stroke="black"/>')
        out.append(f'<text x="{_ML - 8}" y="{_fmt(py(yt) + 4)}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="11">{_fmt(yt)}</text>')
    for xt in all_x:
        out.append(f'<line x1="{_fmt(px(xt))}" y1="{_H - _MB}" x2="{_fmt(px(xt))}" '
                   f'y2="{_H - _MB + 4}" stroke="black"/>')
        out.append(f'<text x="{_fmt(px(xt))}" y="{_H - _MB + 18}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="11">{xt}</text>')
    out.append(f'<text x="{_ML - 44}" y="{(_MT + _H - _MB) // 2}" font-family="sans-serif" '
               f'font-size="12" transform="rotate(-90 {_ML - 44} '
               f'{(_MT + _H - _MB) // 2})" text-anchor="middle">{y_label}</text>')
    out.append(f'<text x="{(_ML + _W - _MR) // 2}" y="{_H - 10}" text-anchor="middle" '
               'font-family="sans-serif" font-size="12">task</text>')
    for i, s in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        upper = [(x, m + sd) for x, m, sd in zip(s["xs"], s["means"], s["stds"])]
        lower = [(x, m - sd) for x, m, sd in zip(s["xs"], s["means"], s["stds"])]
        band = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in upper + lower[::-1])
        out.append(f'<polygon points="{band}" fill="{color}" opacity="0.15"/>')
        line = " ".join(f"{_fmt(px(x))},{_fmt(py(m))}" for x, m in zip(s["xs"], s["means"]))
        out.append(f'<polyline points="{line}" fill="none" stroke="{color}" '
                   'stroke-width="1.5"/>')
        ly = _MT + 16 * i
        out.append(f'<line x1="{_W - _MR - 120}" y1="{ly}" x2="{_W - _MR - 96}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{_W - _MR - 90}" y="{ly + 4}" font-family="sans-serif" '
                   f'font-size="11">{s["label"]}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def load_run_curves(run_dir: str):
    """Aggregate a run directory's seed R matrices into ACC/BWT curve stats."""
    import glob
    import json

    manifest_path = os.path.join(run_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise PlotError(f"missing manifest: {manifest_path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    seed_files = sorted(glob.glob(os.path.join(run_dir, "seed_*", "rmatrix.csv")))
    if not seed_files:
        raise PlotError(f"no seed R matrices under {run_dir}")
    results = []
    for path in seed_files:
        try:
            rmat = read_rmatrix_csv(path)
        except Exception as exc:
            raise PlotError(f"{path}: corrupt R matrix ({exc})") from exc
        for acc_t, _ in [curves(rmat)]:
            if any(not 0.0 <= v <= 100.0 for v in acc_t):
                raise PlotError(f"{path}: curve values outside [0,100]")
        results.append(RunResult(config_digest=manifest["digest"], seed=0, rmatrix=rmat))
    agg = aggregate(results)
    return manifest, agg


def cmd_plot(run_dirs: list, out_dir: str) -> list:
    """Emit acc.svg (and bwt.svg when any run has >= 2 tasks) for the runs."""
    if not run_dirs:
        raise PlotError("no run directories given")
    acc_series, bwt_series = [], []
    seen = set()
    for run_dir in run_dirs:
        manifest, agg = load_run_curves(run_dir)
        label = manifest["config"]["strategy"]["name"]
        if manifest["config"].get("augment", {}).get("enabled"):
            label += "+aug"
        if label in seen:
            label = f"{label} ({os.path.basename(os.path.normpath(run_dir))})"
        seen.add(label)
        xs = list(range(1, len(agg["acc_curve"]) + 1))
        acc_series.append({"label": label, "xs": xs,
                           "means": [m for m, _ in agg["acc_curve"]],
                           "stds": [s for _, s in agg["acc_curve"]]})
        pts = [(t, ms) for t, ms in zip(xs, agg["bwt_curve"]) if ms is not None]
        if pts:
            bwt_series.append({"label": label, "xs": [t for t, _ in pts],
                               "means": [m for _, (m, _) in pts],
                               "stds": [s for _, (_, s) in pts]})
    os.makedirs(out_dir, exist_ok=True)
    written = []
    acc_path = os.path.join(out_dir, "acc.svg")
    with open(acc_path, "w") as fh:
        fh.write(render_line_chart(acc_series, "Average accuracy over time", "ACC (%)"))
    written.append(acc_path)
    if bwt_series:
        bwt_path = os.path.join(out_dir, "bwt.svg")
        with open(bwt_path, "w") as fh:
            fh.write(render_line_chart(bwt_series, "Backward transfer over time", "BWT (%)"))
        written.append(bwt_path)
    return written
