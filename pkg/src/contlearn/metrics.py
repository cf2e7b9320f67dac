"""Accuracy-matrix bookkeeping, the ACC/BWT metrics, their over-time curves,
and multi-seed aggregation. Metrics are reported in percent."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AggregationError, MetricError, StateError


class RMatrix:
    """Lower-triangular accuracy matrix: row i holds the test accuracy of
    tasks 1..i after training through task i (entries in [0,1])."""

    def __init__(self, n_tasks: int):
        if n_tasks < 1:
            raise StateError("RMatrix needs at least one task")
        self.n_tasks = n_tasks
        self.rows: list[np.ndarray] = []

    def add_row(self, accs) -> None:
        accs = np.asarray(accs, dtype=np.float64)
        if len(self.rows) >= self.n_tasks:
            raise StateError("RMatrix already complete")
        if accs.shape != (len(self.rows) + 1,):
            raise StateError(
                f"row {len(self.rows) + 1} must have {len(self.rows) + 1} entries, "
                f"got {accs.shape}")
        if np.any(accs < 0) or np.any(accs > 1):
            raise StateError("accuracies must lie in [0,1]")
        self.rows.append(accs)

    def entry(self, i: int, j: int) -> float:
        """R_{i,j} with 1-based task indices, j <= i."""
        return float(self.rows[i - 1][j - 1])

    @property
    def complete(self) -> bool:
        return len(self.rows) == self.n_tasks

    @classmethod
    def from_rows(cls, rows) -> "RMatrix":
        r = cls(len(rows))
        for row in rows:
            r.add_row(row)
        return r


def acc_final(r: RMatrix) -> float:
    """Mean of the final row, in percent."""
    if not r.complete:
        raise StateError(f"R matrix incomplete: {len(r.rows)}/{r.n_tasks} rows")
    return float(r.rows[-1].mean() * 100.0)


def bwt_final(r: RMatrix) -> float:
    """Mean of R_{T,i} - R_{i,i} over i < T, in percent; undefined for T=1."""
    if not r.complete:
        raise StateError(f"R matrix incomplete: {len(r.rows)}/{r.n_tasks} rows")
    t = r.n_tasks
    if t < 2:
        raise MetricError("BWT is undefined for a single task")
    diffs = [r.rows[-1][i] - r.rows[i][i] for i in range(t - 1)]
    return float(np.mean(diffs) * 100.0)


def curves(r: RMatrix):
    """ACC(t) and BWT(t) from the t-prefix of R, t = 1..rows-filled.

    BWT(1) is None (the metric is undefined there), not 0.
    """
    acc_t = []
    bwt_t: list[float | None] = []
    for t in range(1, len(r.rows) + 1):
        acc_t.append(float(r.rows[t - 1].mean() * 100.0))
        if t == 1:
            bwt_t.append(None)
        else:
            diffs = [r.rows[t - 1][i] - r.rows[i][i] for i in range(t - 1)]
            bwt_t.append(float(np.mean(diffs) * 100.0))
    return acc_t, bwt_t


@dataclass
class RunResult:
    """One seed's outcome; digest identifies the resolved configuration."""

    config_digest: str
    seed: int
    rmatrix: RMatrix
    wall_clock: float = 0.0
    logs: list = field(default_factory=list)


def _mean_std(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    if len(arr) == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std(ddof=1))


def aggregate(results: list) -> dict:
    """Mean and sample std (n-1 denominator) of ACC, BWT and each curve point
    across seeds; all results must share one config digest."""
    if not results:
        raise AggregationError("nothing to aggregate")
    digests = {r.config_digest for r in results}
    if len(digests) > 1:
        raise AggregationError(f"mixed config digests: {sorted(digests)}")
    t_counts = {r.rmatrix.n_tasks for r in results}
    if len(t_counts) > 1:
        raise AggregationError(f"mixed task counts: {sorted(t_counts)}")
    n_tasks = t_counts.pop()
    n = len(results)
    acc = _mean_std([acc_final(r.rmatrix) for r in results])
    bwt = _mean_std([bwt_final(r.rmatrix) for r in results]) if n_tasks >= 2 else None
    per_seed_curves = [curves(r.rmatrix) for r in results]
    acc_curve = [_mean_std([c[0][t] for c in per_seed_curves]) for t in range(n_tasks)]
    bwt_curve: list[tuple[float, float] | None] = [None]
    for t in range(1, n_tasks):
        bwt_curve.append(_mean_std([c[1][t] for c in per_seed_curves]))
    return {
        "n": n,
        "single_seed": n == 1,
        "acc": acc,
        "bwt": bwt,
        "acc_curve": acc_curve,
        "bwt_curve": bwt_curve,
    }


# ---------------------------------------------------------------------------
# CSV persistence (full precision; one ragged row per task)
# ---------------------------------------------------------------------------


def write_rmatrix_csv(path, r: RMatrix) -> None:
    with open(path, "w") as fh:
        for row in r.rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_rmatrix_csv(path) -> RMatrix:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(tok) for tok in line.split(",")])
    return RMatrix.from_rows(rows)
