"""Ordinal thresholding, Dice, threshold selection and the Wilcoxon test."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .data import validate_nesting

EXACT_WILCOXON_MAX_N = 12
REPORT_HEADER = ("fold", "method", "class", "dice", "theta2", "violations", "iterations")


def check_thresholds(theta, m=None):
    theta = tuple(float(t) for t in theta)
    if any(b <= a for a, b in zip(theta, theta[1:])):
        raise ValueError(f"thresholds must be strictly increasing, got {theta}")
    if m is not None and len(theta) != m:
        raise ValueError(f"expected {m} thresholds, got {len(theta)}")
    return theta


def threshold_map(a_map, theta):
    """Label = number of thresholds ``<= a`` (so ``a == theta_k`` gives class ``k``)."""
    theta = check_thresholds(theta)
    return np.searchsorted(np.asarray(theta), np.asarray(a_map, dtype=np.float64), side="right").astype(np.uint8)


def baseline_predict(logits):
    """Per-pixel argmax over the class axis (axis 0, or 1 for batched input); ties go to the lower class."""
    logits = np.asarray(logits)
    axis = 1 if logits.ndim == 4 else 0
    return np.argmax(logits, axis=axis).astype(np.uint8)


def dice(pred, gt, c):
    """``2|P∩G| / (|P| + |G|)`` for class ``c``; 1.0 when the class is absent from both."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    p = pred == c
    g = gt == c
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


@dataclass
class DiceReport:
    dice: dict
    pixel_counts: dict
    violations: int
    thresholds: tuple | None = None

    @classmethod
    def evaluate(cls, pred, gt, m, thresholds=None):
        pred = np.asarray(pred)
        return cls(
            dice={c: dice(pred, gt, c) for c in range(m + 1)},
            pixel_counts={c: int((pred == c).sum()) for c in range(m + 1)},
            violations=validate_nesting(pred),
            thresholds=None if thresholds is None else tuple(thresholds),
        )


def sweep_thresholds(a_maps, gts, class_of_interest, grid, m=None, lower=None):
    """Pick the top threshold from ``grid`` maximising mean Dice of the class of interest.

    ``m`` defaults to the class of interest (the innermost class).
    ``lower`` fixes the other thresholds (default: plateau midpoints
    ``0.5, 1.5, ...``).  Ties resolve toward the smaller grid value.
    Returns the full threshold tuple.
    """
    if len(a_maps) == 0:
        raise ValueError("threshold sweep needs a non-empty validation set")
    if len(a_maps) != len(gts):
        raise ValueError("a_maps and gts differ in length")
    m = class_of_interest if m is None else m
    lower = tuple(n - 0.5 for n in range(1, m)) if lower is None else tuple(lower)
    best, best_score = None, -math.inf
    for top in sorted(float(g) for g in grid):
        if lower and top <= lower[-1]:
            continue
        theta = lower + (top,)
        score = float(np.mean([dice(threshold_map(a, theta), g, class_of_interest) for a, g in zip(a_maps, gts)]))
        if score > best_score:
            best, best_score = theta, score
    if best is None:
        raise ValueError(f"no grid value above the fixed lower thresholds {lower}")
    return best


def default_grid(m=2, step=0.01):
    """Candidate top thresholds covering ``(m - 1, m)``."""
    return np.round(np.arange(m - 1 + step, m, step), 10)


def _signed_ranks(x, y):
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    d = d[d != 0]
    absd = np.abs(d)
    order = np.argsort(absd, kind="mergesort")
    ranks = np.empty(len(d))
    sorted_abs = absd[order]
    i = 0
    tie_sizes = []
    while i < len(d):
        j = i
        while j + 1 < len(d) and sorted_abs[j + 1] == sorted_abs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j + 2) / 2.0
        tie_sizes.append(j - i + 1)
        i = j + 1
    return d, ranks, tie_sizes


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    pvalue: float
    n: int
    exact: bool = field(default=True)


def wilcoxon_signed_rank(x, y):
    """Two-sided paired Wilcoxon signed-rank test.

    Zero differences are dropped.  Exact enumeration of all sign
    assignments for ``n <= 12``; beyond that a normal approximation with tie
    and continuity corrections.
    """
    if len(x) != len(y):
        raise ValueError(f"paired samples differ in length: {len(x)} vs {len(y)}")
    d, ranks, ties = _signed_ranks(x, y)
    n = len(d)
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, True)
    if n < 5:
        raise ValueError(f"only {n} non-zero differences; the signed-rank test needs at least 5")
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    if n <= EXACT_WILCOXON_MAX_N:
        # doubled ranks are integers, so the comparison is exact
        r2 = np.rint(2 * ranks).astype(np.int64)
        bits = (np.arange(2**n)[:, None] >> np.arange(n)) & 1
        sums = bits @ r2
        p = 2.0 * np.count_nonzero(sums <= int(round(2 * w))) / 2**n
        return WilcoxonResult(w, min(1.0, p), n, True)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - sum(t**3 - t for t in ties) / 48.0
    z = (w - mean + 0.5) / math.sqrt(var)
    p = math.erfc(-z / math.sqrt(2.0))  # 2 * Phi(z), z <= 0
    return WilcoxonResult(w, min(1.0, p), n, False)


def write_report_csv(path, rows):
    """Rows are dicts keyed by ``REPORT_HEADER``."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_HEADER, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row[k]) for k in REPORT_HEADER})


def read_report_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if not math.isnan(v) else ""
    return "" if v is None else v
