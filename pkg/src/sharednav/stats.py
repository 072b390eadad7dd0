"""Paired significance tests for the trial metrics.

Statistics are computed from first principles; tail probabilities come
from the standard distribution evaluations (regularized beta for Student's
t, erfc for the normal).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special


@dataclass
class StatsResult:
    test: str
    statistic: float
    p_value: float
    n: int
    group_means: tuple[float, float] | None = None
    group_sds: tuple[float, float] | None = None
    detail: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value out of range: {self.p_value}")


def t_two_tailed_p(t: float, df: int) -> float:
    """Two-tailed tail probability of Student's t."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if math.isinf(t):
        return 0.0
    return float(2.0 * special.stdtr(df, -abs(t)))


def normal_two_tailed_p(z: float) -> float:
    """Two-tailed tail probability of the standard normal."""
    return float(math.erfc(abs(z) / math.sqrt(2.0)))


def paired_t_test(differences) -> StatsResult:
    """Paired-sample t test on a list of per-pair differences.

    t = mean(d) / (sd(d)/sqrt(n)) with the sample standard deviation and
    df = n - 1.  All-zero differences give t = 0, p = 1; identical nonzero
    differences have zero variance, reported as t = inf, p = 0.
    """
    d = np.asarray(list(differences), dtype=float)
    n = len(d)
    if n < 2:
        raise ValueError("paired t test needs at least 2 differences")
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    df = n - 1
    if sd == 0.0:
        if mean == 0.0:
            t, p = 0.0, 1.0
        else:
            t, p = math.copysign(math.inf, mean), 0.0
    else:
        t = mean / (sd / math.sqrt(n))
        p = t_two_tailed_p(t, df)
    return StatsResult(
        test="paired_t",
        statistic=t,
        p_value=p,
        n=n,
        detail={"df": df, "mean_diff": mean, "sd_diff": sd},
    )


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks starting at 1, ties receiving the average of their positions."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=float)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def wilcoxon_signed_rank(differences) -> StatsResult:
    """Wilcoxon signed-rank test on per-pair differences.

    Zero differences are dropped; ties in |d| get average ranks.  The
    statistic is W = min(W+, W-); z uses the normal approximation with a
    0.5 continuity correction toward the mean (no tie correction to the
    variance), two-tailed p from the standard normal.
    """
    d = np.asarray(list(differences), dtype=float)
    d = d[d != 0.0]
    n = len(d)
    if n < 5:
        raise ValueError("wilcoxon needs at least 5 nonzero differences")
    ranks = _average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    mean_w = n * (n + 1) / 4.0
    sd_w = math.sqrt(n * (n + 1) * (2 * n + 1) / 24.0)
    if w < mean_w:
        z = (w - mean_w + 0.5) / sd_w
    elif w > mean_w:
        z = (w - mean_w - 0.5) / sd_w
    else:
        z = 0.0
    p = normal_two_tailed_p(z)
    return StatsResult(
        test="wilcoxon_signed_rank",
        statistic=w,
        p_value=p,
        n=n,
        detail={"w_plus": w_plus, "w_minus": w_minus, "z": z},
    )
