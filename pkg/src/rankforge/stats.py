"""Cross-method significance machinery: Friedman test, Nemenyi post-hoc
with critical differences, and average-rank tier extraction.

Methods are compared through their per-instance ranks rather than raw
scores, per Demsar (2006), "Statistical Comparisons of Classifiers over
Multiple Data Sets". The Nemenyi critical values are embedded below
(studentized range at infinite df divided by sqrt(2)) so no statistics
library is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import InvalidInputError, RankMatrix

# q_alpha(k) for k = 2..20, Demsar (2006) Table 5(a) and its standard extension.
_Q_ALPHA = {
    0.05: (
        1.959964, 2.343701, 2.569032, 2.727774, 2.849705, 2.948320,
        3.030879, 3.101730, 3.163684, 3.218654, 3.268004, 3.312739,
        3.353618, 3.391230, 3.426041, 3.458425, 3.488685, 3.517073,
        3.543799,
    ),
    0.10: (
        1.644854, 2.051965, 2.291341, 2.459516, 2.588521, 2.692732,
        2.779884, 2.854606, 2.919889, 2.977768, 3.029694, 3.076733,
        3.119693, 3.159199, 3.195743, 3.229723, 3.261461, 3.291224,
        3.319233,
    ),
}


@dataclass(frozen=True)
class SignificanceReport:
    """Everything the comparison pipeline produces for one matrix."""

    avg_ranks: dict[str, float]
    chi_square: float
    df: int
    p_value_bound: float
    critical_difference: float
    alpha: float
    tiers: tuple[tuple[str, ...], ...]


def aggregate_seeds(values) -> tuple[float, float]:
    """Mean and sample standard deviation (n-1 denominator; 0 when n=1)."""
    vals = [float(v) for v in values]
    if not vals:
        raise InvalidInputError("aggregate_seeds needs at least one value")
    mean = sum(vals) / len(vals)
    if len(vals) == 1:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in vals) / (len(vals) - 1)
    return mean, math.sqrt(var)


def format_mean_std(mean: float, std: float, mean_decimals: int = 1, std_decimals: int = 2) -> str:
    """Render "mean ± std" in the table style used for seed aggregates."""
    return f"{mean:.{mean_decimals}f} ± {std:.{std_decimals}f}"


def parse_mean_std(text: str) -> tuple[float, float]:
    """Inverse of format_mean_std."""
    parts = text.split("±")
    if len(parts) != 2:
        raise InvalidInputError(f"expected 'mean ± std', got {text!r}")
    return float(parts[0].strip()), float(parts[1].strip())


def _midranks(row: np.ndarray) -> np.ndarray:
    """Ranks 1..k with tied values sharing the average of their positions."""
    order = np.argsort(row, kind="stable")
    ranks = np.empty(row.size)
    i = 0
    while i < row.size:
        j = i
        while j + 1 < row.size and row[order[j + 1]] == row[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def rank_rows(matrix: RankMatrix, higher_is_better: bool = True) -> np.ndarray:
    """Per-instance method ranks (1 = best), ties receiving midranks."""
    values = matrix.values if not higher_is_better else -matrix.values
    return np.vstack([_midranks(row) for row in values])


def friedman_chi_square(avg_ranks, n_instances: int) -> tuple[float, int]:
    """Friedman statistic from column-average ranks.

    chi2 = 12N / (k(k+1)) * (sum_j Rbar_j^2 - k(k+1)^2 / 4), df = k - 1.
    """
    r = np.asarray(avg_ranks, dtype=float)
    k = r.size
    if k < 2:
        raise InvalidInputError(f"Friedman test needs k >= 2 methods, got {k}")
    if n_instances < 2:
        raise InvalidInputError(f"Friedman test needs N >= 2 instances, got {n_instances}")
    chi2 = 12.0 * n_instances / (k * (k + 1)) * (float((r * r).sum()) - k * (k + 1) ** 2 / 4.0)
    return chi2, k - 1


def friedman(matrix: RankMatrix, higher_is_better: bool = True) -> tuple[float, int]:
    """Friedman test over a methods-by-instances score grid."""
    ranks = rank_rows(matrix, higher_is_better)
    return friedman_chi_square(ranks.mean(axis=0), matrix.num_instances)


def chi_square_tail_bound(x: float, df: int) -> float:
    """Chernoff upper bound on P(chi2_df >= x); 1.0 when x <= df.

    An upper bound is all the pipeline reports (p-values appear as
    "p <= bound"); the exact regularized-gamma tail is deliberately not
    a dependency.
    """
    if df < 1:
        raise InvalidInputError(f"df must be >= 1, got {df}")
    if x <= df:
        return 1.0
    log_bound = 0.5 * df * math.log(x / df) + 0.5 * (df - x)
    return math.exp(log_bound)


def nemenyi_cd(k: int, n_instances: int, alpha: float = 0.05) -> float:
    """Nemenyi critical difference: q_alpha(k) * sqrt(k(k+1) / (6N))."""
    if alpha not in _Q_ALPHA:
        raise InvalidInputError(f"alpha must be one of {sorted(_Q_ALPHA)}, got {alpha}")
    if not 2 <= k <= 20:
        raise InvalidInputError(f"Nemenyi table covers k in [2, 20], got {k}")
    if n_instances < 1:
        raise InvalidInputError(f"N must be >= 1, got {n_instances}")
    q = _Q_ALPHA[alpha][k - 2]
    return q * math.sqrt(k * (k + 1) / (6.0 * n_instances))


def _tiers_by_gap(names_sorted: list[str], ranks_sorted: list[float], cd: float) -> tuple[tuple[str, ...], ...]:
    # single-linkage on the rank line: a gap >= CD starts a new tier
    tiers: list[tuple[str, ...]] = []
    current = [names_sorted[0]]
    for prev, name, rank in zip(ranks_sorted, names_sorted[1:], ranks_sorted[1:]):
        if rank - prev < cd:
            current.append(name)
        else:
            tiers.append(tuple(current))
            current = [name]
    tiers.append(tuple(current))
    return tuple(tiers)


def build_report(matrix: RankMatrix, alpha: float = 0.05, higher_is_better: bool = True) -> SignificanceReport:
    """Full pipeline: midranks, Friedman, Nemenyi CD, and tier grouping.

    Two methods share a tier when they are connected by a chain of
    average-rank gaps strictly smaller than the critical difference.
    """
    ranks = rank_rows(matrix, higher_is_better)
    avg = ranks.mean(axis=0)
    chi2, df = friedman_chi_square(avg, matrix.num_instances)
    cd = nemenyi_cd(matrix.num_methods, matrix.num_instances, alpha)
    order = np.argsort(avg, kind="stable")
    names_sorted = [matrix.method_names[i] for i in order]
    ranks_sorted = [float(avg[i]) for i in order]
    return SignificanceReport(
        avg_ranks={name: float(avg[i]) for i, name in enumerate(matrix.method_names)},
        chi_square=chi2,
        df=df,
        p_value_bound=chi_square_tail_bound(chi2, df),
        critical_difference=cd,
        alpha=alpha,
        tiers=_tiers_by_gap(names_sorted, ranks_sorted, cd),
    )


def render_report(report: SignificanceReport) -> str:
    """Plain-text critical-difference summary, one finding per line."""
    lines = [
        "method\tavg_rank\ttier",
    ]
    tier_of = {name: t for t, tier in enumerate(report.tiers, start=1) for name in tier}
    for name, rank in sorted(report.avg_ranks.items(), key=lambda t: t[1]):
        lines.append(f"{name}\t{rank:.4f}\t{tier_of[name]}")
    lines.append(f"chi_square\t{report.chi_square:.4f}\tdf={report.df}")
    lines.append(f"p_value\t<= {report.p_value_bound:.3e}")
    lines.append(f"critical_difference\t{report.critical_difference:.4f}\talpha={report.alpha}")
    return "\n".join(lines)
