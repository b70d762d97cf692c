from typing import Sequence

import numpy as np
from scipy import stats

from app.schemas import DescriptiveStats, GroupComparison, HistogramBin


HISTOGRAM_WIDTH_S = 0.25
HISTOGRAM_RANGE_S = 6.0
LEVENE_ALPHA = 0.05


def describe(values: Sequence[float]) -> DescriptiveStats:
    """Population statistics (ddof=0) of a non-empty sample."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("Cannot describe an empty sample")
    return DescriptiveStats(
        count=int(values.size),
        mean=float(np.mean(values)),
        median=float(np.median(values)),
        stddev=float(np.std(values)),
    )


def histogram(
        values: Sequence[float],
        width: float = HISTOGRAM_WIDTH_S,
        upper: float = HISTOGRAM_RANGE_S,
) -> list[HistogramBin]:
    """Fixed-width bins over [0, upper); values at or past ``upper`` land in the last bin."""
    n_bins = int(round(upper / width))
    counts = np.zeros(n_bins, dtype=int)
    if len(values):
        index = np.clip(np.floor(np.asarray(values, dtype=float) / width + 1e-9).astype(int), 0, n_bins - 1)
        np.add.at(counts, index, 1)
    return [HistogramBin(bin_start=round(i * width, 6), count=int(c)) for i, c in enumerate(counts)]


def rank_sum(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sided Mann-Whitney U statistic of ``a`` and its p-value."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("rank_sum needs two non-empty samples")
    result = stats.mannwhitneyu(a, b, alternative="two-sided")
    return float(result.statistic), float(result.pvalue)


def compare_groups(a: Sequence[float], b: Sequence[float]) -> GroupComparison:
    """Rank-sum, Levene, then Student or Welch t depending on the Levene outcome."""
    u, p = rank_sum(a, b)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("compare_groups needs at least two values per group")
    levene_p = float(stats.levene(a, b).pvalue)
    # Levene is nan for two constant samples; treat that as equal variances
    equal_var = bool(np.isnan(levene_p) or levene_p >= LEVENE_ALPHA)
    t = stats.ttest_ind(a, b, equal_var=equal_var)
    return GroupComparison(
        u_statistic=u,
        rank_sum_p=p,
        levene_p=1.0 if np.isnan(levene_p) else levene_p,
        t_test="student" if equal_var else "welch",
        t_statistic=float(t.statistic),
        t_p=float(t.pvalue),
    )
