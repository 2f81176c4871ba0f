"""Nonparametric comparison statistics: Friedman, Wilcoxon signed-rank, Holm.

These are hand-rolled rather than taken from scipy because the comparison
pipeline needs a specific combination scipy does not offer: average ranks for
ties together with an exact sign-enumeration p-value in the Wilcoxon test,
and the classical (uncorrected) Friedman chi-square. Only the chi-square and
normal distribution functions come from scipy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2 as _chi2
from scipy.stats import norm as _norm

EXACT_LIMIT = 20  # largest n for which the exact Wilcoxon path runs by default


def rank_with_ties(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with tied values sharing their average rank."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # W+ = sum of ranks of positive differences
    pvalue: float
    n_nonzero: int
    method: str  # "exact" | "approx" | "degenerate"

    @property
    def degenerate(self) -> bool:
        return self.method == "degenerate"


def _exact_wplus_pvalue(ranks: np.ndarray, w_plus: float) -> float:
    """Two-sided exact p over all 2^n sign assignments of the given ranks.

    Works on doubled ranks so tied (half-integer) ranks stay integral, and
    builds the null distribution of W+ by dynamic programming, which is
    equivalent to full enumeration.
    """
    doubled = np.rint(ranks * 2).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    counts /= counts.sum()
    w2 = int(round(w_plus * 2))
    p_le = counts[: w2 + 1].sum()
    p_ge = counts[w2:].sum()
    return float(min(1.0, 2.0 * min(p_le, p_ge)))


def wilcoxon_signed_rank(
    a, b, paired: bool = True, method: str = "auto"
) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped; tied absolute differences get average
    ranks. The p-value is exact (full sign enumeration) for n <= 20 and a
    tie-corrected normal approximation with continuity correction above,
    unless ``method`` forces one path.
    """
    if not paired:
        raise ValueError("this test is defined for paired samples only")
    if method not in ("auto", "exact", "approx"):
        raise ValueError(f"unknown method {method!r}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 1:
        raise ValueError("samples must be equal-length 1-D arrays with n >= 1")
    diffs = a - b
    diffs = diffs[diffs != 0.0]
    n = len(diffs)
    if n == 0:
        return WilcoxonResult(statistic=0.0, pvalue=1.0, n_nonzero=0, method="degenerate")
    ranks = rank_with_ties(np.abs(diffs))
    w_plus = float(ranks[diffs > 0].sum())

    use_exact = method == "exact" or (method == "auto" and n <= EXACT_LIMIT)
    if use_exact:
        return WilcoxonResult(
            statistic=w_plus,
            pvalue=_exact_wplus_pvalue(ranks, w_plus),
            n_nonzero=n,
            method="exact",
        )
    mean = n * (n + 1) / 4.0
    # tie correction: subtract sum(t^3 - t)/48 over tie groups of |d|
    _, tie_counts = np.unique(np.abs(diffs), return_counts=True)
    variance = n * (n + 1) * (2 * n + 1) / 24.0 - float(
        ((tie_counts**3 - tie_counts) / 48.0).sum()
    )
    if variance <= 0:
        return WilcoxonResult(statistic=w_plus, pvalue=1.0, n_nonzero=n, method="degenerate")
    centered = w_plus - mean
    if centered > 0:
        centered -= 0.5
    elif centered < 0:
        centered += 0.5
    z = centered / np.sqrt(variance)
    pvalue = float(min(1.0, 2.0 * _norm.sf(abs(z))))
    return WilcoxonResult(statistic=w_plus, pvalue=pvalue, n_nonzero=n, method="approx")


@dataclass(frozen=True)
class FriedmanResult:
    statistic: float
    pvalue: float
    mean_ranks: tuple[float, ...]  # one per treatment


def friedman_test(matrix) -> FriedmanResult:
    """Friedman rank test over a k x n matrix (treatments x blocks).

    Within every block the k treatments are ranked (average ranks for ties);
    the statistic is ``12n / (k (k+1)) * sum_j (Rbar_j - (k+1)/2)^2`` with a
    chi-square reference on k - 1 degrees of freedom.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError("matrix must be 2-D (treatments x blocks)")
    k, n = matrix.shape
    if k < 2:
        raise ValueError("need at least 2 treatments")
    if n < 2:
        raise ValueError("need at least 2 blocks")
    ranks = np.empty_like(matrix)
    for j in range(n):
        ranks[:, j] = rank_with_ties(matrix[:, j])
    mean_ranks = ranks.mean(axis=1)
    statistic = 12.0 * n / (k * (k + 1)) * float(((mean_ranks - (k + 1) / 2.0) ** 2).sum())
    pvalue = float(_chi2.sf(statistic, k - 1))
    return FriedmanResult(
        statistic=statistic, pvalue=pvalue, mean_ranks=tuple(mean_ranks.tolist())
    )


def holm_adjust(pvals, alpha: float = 0.05) -> tuple[list[float], list[bool]]:
    """Holm step-down correction; returns adjusted p-values and reject flags.

    Sorted ascending, the i-th smallest p is scaled by (m - i) (0-based) and
    a running maximum enforces monotonicity; a hypothesis is rejected when
    its adjusted p is at most alpha. Results come back in the input order.
    """
    pvals = list(pvals)
    m = len(pvals)
    if m == 0:
        return [], []
    if any(not 0.0 <= p <= 1.0 for p in pvals):
        raise ValueError("p-values must lie in [0, 1]")
    order = sorted(range(m), key=lambda i: pvals[i])
    adjusted = [0.0] * m
    running = 0.0
    for position, index in enumerate(order):
        scaled = min(1.0, (m - position) * pvals[index])
        running = max(running, scaled)
        adjusted[index] = running
    rejected = [p <= alpha for p in adjusted]
    return adjusted, rejected
