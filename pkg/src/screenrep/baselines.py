"""Comparator methods: Fisher meta-analysis, per-study BH counting, Exp-count.

None of these estimate fdr_k; they are the reference points the
replicability engines are benchmarked against. Fisher combines p-values per
gene and BH-adjusts across genes (selection at q <= 0.1); BH-count counts
per-study discoveries at q <= 0.1; Exp-count sums the marginal local true
discovery rates, a biased estimator of the expected number of non-null
realizations (selection at value >= k).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaincc

from .data_io import P_MIN, StatsMatrix
from .two_groups import TwoGroupsModel

FISHER_Q = 0.1
BH_COUNT_Q = 0.1


@dataclass
class BaselineResult:
    """Per-gene statistic plus the method's selection rule."""

    method: str
    statistic: np.ndarray
    qvalues: np.ndarray | None = None
    q_threshold: float | None = None

    def select(self, k: int | None = None) -> np.ndarray:
        """Selected gene indices; counting methods threshold at k."""
        if self.method == "fisher":
            return np.flatnonzero(self.qvalues <= self.q_threshold)
        if k is None:
            raise ValueError(f"{self.method} selection requires k")
        return np.flatnonzero(self.statistic >= k)


def bh_procedure(pvals) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted q-values."""
    p = np.asarray(pvals, dtype=np.float64).ravel()
    if p.size == 0:
        return p.copy()
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("p-values must lie in [0, 1]")
    n = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order] * n / np.arange(1, n + 1)
    q_sorted = np.minimum.accumulate(ranked[::-1])[::-1]
    q_sorted = np.minimum(q_sorted, 1.0)
    q = np.empty_like(q_sorted)
    q[order] = q_sorted
    return q


def fisher_meta(P: StatsMatrix) -> BaselineResult:
    """Fisher's combined p-value per gene, BH-adjusted across genes.

    The statistic is -2 sum log p; its null survival probability is the
    regularized upper incomplete gamma Q(m, T/2) (chi-square with 2m
    degrees of freedom).
    """
    if P.scale != "pvalue":
        raise ValueError("Fisher's method combines p-values")
    p = np.clip(P.values, P_MIN, 1.0 - P_MIN)
    stat = -2.0 * np.log(p).sum(axis=1)
    combined = gammaincc(P.n_studies, stat / 2.0)
    q = bh_procedure(combined)
    return BaselineResult(method="fisher", statistic=combined, qvalues=q, q_threshold=FISHER_Q)


def bh_count(P: StatsMatrix, q_threshold: float = BH_COUNT_Q) -> BaselineResult:
    """Per-gene count of studies where the within-study BH q-value passes."""
    if P.scale != "pvalue":
        raise ValueError("BH counting runs on p-values")
    counts = np.zeros(P.n_genes)
    for j in range(P.n_studies):
        counts += bh_procedure(P.values[:, j]) <= q_threshold
    return BaselineResult(method="bh_count", statistic=counts, q_threshold=q_threshold)


def exp_count(models: list[TwoGroupsModel], Z: StatsMatrix) -> BaselineResult:
    """Sum of marginal local tdr values across studies, per gene."""
    if Z.scale != "zscore":
        raise ValueError("Exp-count evaluates fitted models on z-scores")
    if len(models) != Z.n_studies:
        raise ValueError(f"{len(models)} models provided for {Z.n_studies} studies")
    total = np.zeros(Z.n_genes)
    for j, model in enumerate(models):
        total += model.marginal_tdr(Z.values[:, j])
    return BaselineResult(method="exp_count", statistic=total)
