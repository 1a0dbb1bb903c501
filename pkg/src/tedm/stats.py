"""Paired significance testing and summary aggregation.

The signed-rank test drops zero differences, mid-ranks ties, and computes
the exact two-sided p-value for n <= 25 by counting sign assignments (a
rank-sum convolution arithmetically identical to enumerating all 2^n
assignments). Larger n uses the normal approximation with tie-corrected
variance. Summaries report mean +/- sample standard deviation per group
and mark every model statistically indistinguishable from the best as
"bold", with an optional multiple-comparison correction factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import EmptyGroup, RangeError, ShapeError

EXACT_LIMIT = 25


@dataclass(frozen=True)
class PairTest:
    """One paired comparison: signed-rank statistic and its p-value."""

    statistic: float
    p_value: float
    significant: bool
    n_effective: int
    method: str  # "exact" | "normal" | "degenerate"


def _exact_two_sided_p(ranks: np.ndarray, w_plus: float) -> float:
    """P(|W+ - mean| >= |observed - mean|) over all sign assignments.

    Works on doubled ranks so mid-ranks become integers; counts fit
    float64 exactly for n <= 25 (2^25 < 2^53).
    """
    r2 = np.rint(2.0 * ranks).astype(np.int64)
    total = int(r2.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in r2:
        nxt = counts.copy()
        nxt[r:] += counts[: counts.size - r]
        counts = nxt
    mu = total / 2.0
    dev = abs(2.0 * w_plus - mu)
    ks = np.arange(total + 1, dtype=np.float64)
    hits = counts[np.abs(ks - mu) >= dev - 1e-9].sum()
    return float(hits / 2.0 ** len(r2))


def _normal_two_sided_p(
    ranks: np.ndarray, w_plus: float, abs_diffs: np.ndarray
) -> float:
    n = len(ranks)
    mu = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(abs_diffs, return_counts=True)
    var -= float(((tie_counts**3 - tie_counts) / 48.0).sum())
    if var <= 0:
        return 1.0
    z = (w_plus - mu) / math.sqrt(var)
    return min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))


def wilcoxon_paired(a: Sequence[float], b: Sequence[float], alpha: float = 0.05) -> PairTest:
    """Two-sided paired signed-rank test of a vs b.

    Zero differences are dropped; if none remain, p = 1.0 by convention.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 1:
        raise ShapeError(f"need equal-length 1-d sequences, got {a.shape}, {b.shape}")
    d = a - b
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        return PairTest(0.0, 1.0, False, 0, "degenerate")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= EXACT_LIMIT:
        p = _exact_two_sided_p(ranks, w_plus)
        method = "exact"
    else:
        p = _normal_two_sided_p(ranks, w_plus, np.abs(d))
        method = "normal"
    return PairTest(w_plus, p, bool(p < alpha), n, method)


def bonferroni(pvals: Iterable[float], m: int) -> list[float]:
    """min(1, m * p) per value; rejects invalid inputs."""
    if int(m) != m or m < 1:
        raise RangeError(f"m must be a positive integer, got {m}")
    out = []
    for p in pvals:
        if not 0.0 <= p <= 1.0:
            raise RangeError(f"p-value {p} outside [0, 1]")
        out.append(min(1.0, float(m) * float(p)))
    return out


@dataclass(frozen=True)
class SummaryRow:
    model: str
    n_train: str
    domain: str
    metric: str
    mean: float
    std: float
    p_vs_best: float
    bold: bool


def aggregate_results(
    records: Iterable[Mapping],
    alpha: float = 0.05,
    n_comparisons: int = 1,
) -> list[SummaryRow]:
    """Group per-image scores and flag the statistically-best models.

    Each record needs keys model, n_train, domain, metric, image_id and
    value. Within every (n_train, domain, metric) group the best model is
    the one with the highest mean; the bold set is the best model plus
    every model whose paired test against it is not significant at alpha
    after multiplying p by n_comparisons (Bonferroni; 1 = no correction).
    Pairing is by image id, so all models in a group must cover the same
    images.
    """
    groups: dict[tuple, dict[str, dict[str, float]]] = {}
    for rec in records:
        key = (str(rec["n_train"]), str(rec["domain"]), str(rec["metric"]))
        groups.setdefault(key, {}).setdefault(str(rec["model"]), {})[
            str(rec["image_id"])
        ] = float(rec["value"])
    if not groups:
        raise EmptyGroup("no records to aggregate")

    rows: list[SummaryRow] = []
    for key in sorted(groups):
        n_train, domain, metric = key
        by_model = groups[key]
        image_sets = {frozenset(v) for v in by_model.values()}
        if len(image_sets) != 1:
            raise ShapeError(
                f"group {key}: models cover different image sets"
            )
        image_ids = sorted(next(iter(image_sets)))
        if not image_ids:
            raise EmptyGroup(f"group {key} has no images")
        scores = {
            m: np.array([by_model[m][i] for i in image_ids])
            for m in sorted(by_model)
        }
        means = {m: float(s.mean()) for m, s in scores.items()}
        best = max(sorted(means), key=lambda m: means[m])
        for m in sorted(scores):
            s = scores[m]
            std = float(s.std(ddof=1)) if s.size > 1 else 0.0
            if m == best:
                p_adj = 1.0
            else:
                p = wilcoxon_paired(s, scores[best], alpha=alpha).p_value
                p_adj = bonferroni([p], n_comparisons)[0]
            rows.append(
                SummaryRow(
                    model=m,
                    n_train=n_train,
                    domain=domain,
                    metric=metric,
                    mean=means[m],
                    std=std,
                    p_vs_best=p_adj,
                    bold=bool(m == best or p_adj >= alpha),
                )
            )
    return rows
