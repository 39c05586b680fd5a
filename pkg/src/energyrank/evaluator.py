"""Error rate, score-distribution robustness, and multi-run statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import ValidationError

N_BUCKETS = 21
BUCKET_STEP = 0.05
DAMPENING = 1e-9
GRID_POINTS = 201


@dataclass
class ScorePDF:
    buckets: np.ndarray
    sample_count: int
    grid: np.ndarray | None = field(default=None, repr=False)  # (201, 2): score, density

    def __post_init__(self):
        self.buckets = np.asarray(self.buckets, dtype=np.float64)
        if np.any(self.buckets < 0) or abs(self.buckets.sum() - 1.0) > 1e-9:
            raise ValidationError("bucket probabilities must be >= 0 and sum to 1")

    @property
    def centers(self) -> np.ndarray:
        return np.arange(len(self.buckets)) * BUCKET_STEP


@dataclass
class EvalReport:
    error_rate: float
    n_requests: int
    n_errors: int

    def to_dict(self) -> dict:
        return {"error_rate": self.error_rate, "n_requests": self.n_requests, "n_errors": self.n_errors}


def error_rate(predictions: Sequence[int], gold: Sequence[int]) -> float:
    pred, gold = np.asarray(predictions), np.asarray(gold)
    if pred.shape != gold.shape or pred.ndim != 1:
        raise ValidationError(f"{pred.shape} predictions vs {gold.shape} gold labels")
    if len(pred) == 0:
        raise ValidationError("error rate of an empty set is undefined")
    return float(np.count_nonzero(pred != gold) / len(pred))


def report(predictions: Sequence[int], gold: Sequence[int]) -> EvalReport:
    err = error_rate(predictions, gold)
    n = len(gold)
    return EvalReport(err, n, int(np.count_nonzero(np.asarray(predictions) != np.asarray(gold))))


def bucket_index(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if np.any(~np.isfinite(s)) or np.any(s < 0) or np.any(s > 1):
        raise ValidationError("scores must lie in [0, 1]")
    # 1e-9 guards round-half-even on exact .5 multiples produced by float error
    return np.clip(np.floor(s / BUCKET_STEP + 0.5 + 1e-9).astype(int), 0, N_BUCKETS - 1)


def bucketize(scores) -> ScorePDF:
    """21-bucket histogram (centers 0.00..1.00) plus a 201-point interpolated density grid."""
    idx = bucket_index(scores)
    if len(idx) == 0:
        raise ValidationError("cannot bucketize an empty score list")
    counts = np.bincount(idx, minlength=N_BUCKETS).astype(np.float64)
    probs = counts / counts.sum()
    centers = np.arange(N_BUCKETS) * BUCKET_STEP
    xs = np.linspace(0.0, 1.0, GRID_POINTS)
    dens = np.interp(xs, centers, probs / BUCKET_STEP)
    return ScorePDF(probs, int(len(idx)), np.column_stack([xs, dens]))


def rel_entr(p: float, q: float) -> float:
    if p < 0 or q < 0:
        raise ValidationError("rel_entr needs non-negative arguments")
    if p > 0 and q > 0:
        return p * math.log(p / q)
    if p == 0:
        return 0.0
    return math.inf


def kl_divergence(p: Sequence[float], q: Sequence[float]) -> float:
    return float(sum(rel_entr(float(a), float(b)) for a, b in zip(p, q)))


def dampen(buckets: np.ndarray) -> np.ndarray:
    b = np.asarray(buckets, dtype=np.float64) + DAMPENING
    return b / b.sum()


def robustness(p: ScorePDF, q: ScorePDF) -> float:
    """1 - exp(-KL) between dampened bucket distributions; 0 for identical PDFs."""
    if len(p.buckets) != len(q.buckets):
        raise ValidationError(f"bucket counts differ: {len(p.buckets)} vs {len(q.buckets)}")
    kl = kl_divergence(dampen(p.buckets), dampen(q.buckets))
    return float(-math.expm1(-max(kl, 0.0)))


def write_grid(pdf: ScorePDF, path) -> None:
    with open(path, "w") as fh:
        for x, d in pdf.grid:
            fh.write(f"{x:.3f} {d:.9g}\n")


@dataclass
class RunSummary:
    name: str
    values: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def ci95(self) -> float:
        n = len(self.values)
        if n < 2:
            return float("nan")
        return float(stats.t.ppf(0.975, n - 1) * np.std(self.values, ddof=1) / math.sqrt(n))

    def line(self) -> str:
        if len(self.values) < 2:
            return f"{self.name}: {100 * self.mean:.2f}% (n=1, no interval)"
        return f"{self.name}: {100 * self.mean:.2f}% +/- {100 * self.ci95:.2f}% (n={len(self.values)})"

    def to_dict(self) -> dict:
        ci = self.ci95 if len(self.values) > 1 else None
        return {"name": self.name, "values": self.values, "mean": self.mean, "ci95": ci}

    @classmethod
    def from_dict(cls, d) -> "RunSummary":
        return cls(d["name"], [float(v) for v in d["values"]])


def t_test(a: RunSummary, b: RunSummary) -> float:
    """Two-sided Welch t-test p-value between the per-run values of two configurations."""
    if len(a.values) < 2 or len(b.values) < 2:
        raise ValidationError("t-test needs at least two runs per configuration")
    if np.ptp(a.values) == 0 and np.ptp(b.values) == 0:
        return 1.0 if a.mean == b.mean else 0.0
    return float(stats.ttest_ind(a.values, b.values, equal_var=False).pvalue)
