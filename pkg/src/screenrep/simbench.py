"""Simulation scenarios with ground truth, and the method benchmark.

Scenario 1: sparse effects, independent studies. Scenario 2: sparse
effects with block-correlated non-null indicators (equicorrelated Gaussian
thresholding). Dense scenario: ten pure-null studies plus twenty studies
where 60% of genes are non-null, half of those studies forming one
correlated block; z-scores are emitted directly. Every generator is
bit-reproducible given its seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .baselines import bh_count, exp_count, fisher_meta
from .data_io import P_MIN, StatsMatrix, pvalues_to_zscores
from .config_em import repfdr_upper_bound
from .indep_dp import fdr_k_table, select_at_cutoff
from .screen_pipeline import ScreenOptions, screen
from .two_groups import fit_study_models

FDR_CUTOFF = 0.2
ALL_METHODS = ("fisher", "exp_count", "bh_count", "screen_ind", "repfdr_ub", "screen")


@dataclass
class SimInstance:
    """Generated statistics plus the ground-truth non-null indicators."""

    stats: StatsMatrix
    truth: np.ndarray
    scenario: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EvalScore:
    k: int
    jaccard: float
    fdp: float
    n_selected: int


def _beta_gamma(rng: np.random.Generator, a: float, b: float, size) -> np.ndarray:
    # beta variates from two gamma draws
    g1 = rng.standard_gamma(a, size=size)
    g2 = rng.standard_gamma(b, size=size)
    return g1 / (g1 + g2)


def _ids(n: int, m: int) -> tuple[tuple[str, ...], tuple[str, ...]]:
    return (
        tuple(f"g{i:05d}" for i in range(n)),
        tuple(f"study{j:02d}" for j in range(m)),
    )


def _fill_pvalues(rng: np.random.Generator, truth: np.ndarray, x: float, low_only: np.ndarray | None = None):
    """Nulls uniform; non-nulls beta(1,x) or beta(x,1) with a fair coin,
    except cells flagged in ``low_only`` which always draw the low tail."""
    n, m = truth.shape
    p = rng.random((n, m))
    nn = truth == 1
    count = int(nn.sum())
    if count:
        low = rng.random(count) < 0.5
        if low_only is not None:
            low |= low_only[nn]
        draws = np.where(
            low,
            _beta_gamma(rng, 1.0, x, count),
            _beta_gamma(rng, x, 1.0, count),
        )
        p[nn] = draws
    return np.clip(p, P_MIN, 1.0 - P_MIN)


def simulate_scenario1(
    n: int = 5000,
    m: int = 20,
    x: float = 1000.0,
    seed: int = 0,
    n_nonnull: int = 300,
    n_boost_genes: int = 50,
    n_boost_studies: int = 5,
) -> SimInstance:
    """Independent studies: 300 random non-nulls per study, plus 50 genes
    boosted with low-tail non-null p-values in 5 additional studies."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    truth = np.zeros((n, m), dtype=np.uint8)
    for j in range(m):
        truth[rng.choice(n, size=n_nonnull, replace=False), j] = 1
    low_only = np.zeros((n, m), dtype=bool)
    boosted = rng.choice(n, size=n_boost_genes, replace=False)
    for g in boosted:
        zeros = np.flatnonzero(truth[g] == 0)
        extra = rng.choice(zeros, size=min(n_boost_studies, zeros.size), replace=False)
        truth[g, extra] = 1
        low_only[g, extra] = True
    p = _fill_pvalues(rng, truth, x, low_only)
    gene_ids, study_ids = _ids(n, m)
    stats = StatsMatrix(gene_ids, study_ids, p, "pvalue")
    return SimInstance(
        stats=stats,
        truth=truth,
        scenario={"name": "s1", "n": n, "m": m, "x": x, "seed": seed},
    )


def _block_gaussian(rng: np.random.Generator, n: int, sizes: list[int], r: float) -> np.ndarray:
    """Rows iid N(0, Sigma) with equicorrelation r inside each block.

    Equicorrelation factorizes as sqrt(r) * shared + sqrt(1-r) * noise,
    which keeps the sampling O(nm).
    """
    cols = []
    for size in sizes:
        eps = rng.standard_normal((n, size))
        if r > 0.0:
            shared = rng.standard_normal((n, 1))
            cols.append(math.sqrt(r) * shared + math.sqrt(1.0 - r) * eps)
        else:
            cols.append(eps)
    return np.hstack(cols)


def simulate_scenario2(
    n: int = 5000,
    m: int = 20,
    M: int = 4,
    r: float = 0.8,
    x: float = 100.0,
    seed: int = 0,
    nonnull_rate: float = 0.06,
) -> SimInstance:
    """Correlated non-null indicators in M equal study blocks.

    An auxiliary Gaussian matrix with block-equicorrelation r is thresholded
    at the normal quantile leaving ``nonnull_rate`` mass above it.
    """
    if m % M != 0:
        raise ValueError("M must divide the number of studies")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    block = m // M
    a = _block_gaussian(rng, n, [block] * M, r)
    tau = float(norm.isf(nonnull_rate))
    truth = (a >= tau).astype(np.uint8)
    p = _fill_pvalues(rng, truth, x)
    gene_ids, study_ids = _ids(n, m)
    stats = StatsMatrix(gene_ids, study_ids, p, "pvalue")
    return SimInstance(
        stats=stats,
        truth=truth,
        scenario={"name": "s2", "n": n, "m": m, "M": M, "r": r, "x": x, "seed": seed},
    )


def simulate_dense(n: int = 5000, m: int = 30, seed: int = 0) -> SimInstance:
    """Dense effects, emitted directly as z-scores.

    Studies 0-9 are pure null; studies 10-29 have 60% non-null genes, with
    studies 10-19 independent and 20-29 one equicorrelated block (r = 0.8).
    Non-null z-scores mix N(3, sd=3) and N(-3, sd=3) evenly.
    """
    if m != 30:
        raise ValueError("the dense scenario is defined for exactly 30 studies")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    truth = np.zeros((n, m), dtype=np.uint8)
    # studies 10..19 independent, 20..29 one r=0.8 block
    a = np.hstack(
        [
            _block_gaussian(rng, n, [1] * 10, 0.0),
            _block_gaussian(rng, n, [10], 0.8),
        ]
    )
    tau = float(norm.isf(0.6))
    truth[:, 10:] = (a >= tau).astype(np.uint8)

    z = rng.standard_normal((n, m))
    nn = truth == 1
    count = int(nn.sum())
    sign = np.where(rng.random(count) < 0.5, 1.0, -1.0)
    z[nn] = rng.normal(3.0 * sign, 3.0)
    gene_ids, study_ids = _ids(n, m)
    stats = StatsMatrix(gene_ids, study_ids, z, "zscore")
    return SimInstance(
        stats=stats,
        truth=truth,
        scenario={"name": "dense", "n": n, "m": m, "seed": seed},
    )


def evaluate(selected, truth: np.ndarray, k: int) -> EvalScore:
    """Jaccard and false discovery proportion of a selection against the
    genes with at least k true non-null realizations.

    FDP of an empty selection is 0; Jaccard 0/0 counts as 1.
    """
    sel = set(int(i) for i in np.atleast_1d(np.asarray(selected, dtype=int)))
    truth_k = set(np.flatnonzero(truth.sum(axis=1) >= k).tolist())
    union = sel | truth_k
    inter = sel & truth_k
    jaccard = 1.0 if not union else len(inter) / len(union)
    fdp = len(sel - truth_k) / max(1, len(sel))
    return EvalScore(k=int(k), jaccard=jaccard, fdp=fdp, n_selected=len(sel))


def run_benchmark(
    scenario: str,
    ks,
    seeds,
    methods=ALL_METHODS,
    x: float = 1000.0,
    M: int = 4,
    r: float = 0.8,
    n: int = 5000,
    m: int = 20,
    null_mode: str = "theoretical",
    n_h: int = 512,
    cutoff: float = FDR_CUTOFF,
    threads: int | None = None,
) -> list[dict]:
    """Run the requested methods over seeds and score them per k.

    Returns one row per (seed, method, k):
    scenario, k, method, seed, jaccard, fdp, n_selected.
    """
    ks = [int(k) for k in np.atleast_1d(np.asarray(ks, dtype=int))]
    rows: list[dict] = []
    for seed in seeds:
        if scenario == "s1":
            inst = simulate_scenario1(n=n, m=m, x=x, seed=seed)
        elif scenario == "s2":
            inst = simulate_scenario2(n=n, m=m, M=M, r=r, x=x, seed=seed)
        elif scenario == "dense":
            inst = simulate_dense(n=n, m=30, seed=seed)
        else:
            raise ValueError(f"unknown scenario {scenario!r}")

        if inst.stats.scale == "pvalue":
            Z = pvalues_to_zscores(inst.stats, "one_sided")
            P = inst.stats
        else:
            Z = inst.stats
            P = None

        models = fit_study_models(Z, null_mode=null_mode, threads=threads)
        selections: dict[str, dict[int, np.ndarray]] = {}

        if "fisher" in methods and P is not None:
            res = fisher_meta(P)
            sel = res.select()
            selections["fisher"] = {k: sel for k in ks}
        if "bh_count" in methods and P is not None:
            res = bh_count(P)
            selections["bh_count"] = {k: res.select(k) for k in ks}
        if "exp_count" in methods:
            res = exp_count(models, Z)
            selections["exp_count"] = {k: res.select(k) for k in ks}
        if "screen_ind" in methods:
            table = fdr_k_table(models, Z, ks)
            selections["screen_ind"] = {
                k: select_at_cutoff(table[:, i], cutoff) for i, k in enumerate(ks)
            }
        if "repfdr_ub" in methods:
            table, _ = repfdr_upper_bound(models, Z, ks, n_h=n_h)
            selections["repfdr_ub"] = {
                k: select_at_cutoff(table[:, i], cutoff) for i, k in enumerate(ks)
            }
        if "screen" in methods:
            opts = ScreenOptions(null_mode=null_mode, n_h=n_h, seed=seed, cutoff=cutoff, threads=threads)
            result = screen(Z, ks, opts=opts, models=models)
            selections["screen"] = {
                k: select_at_cutoff(result.table.column(k), cutoff) for k in ks
            }

        for method in methods:
            if method not in selections:
                continue
            for k in ks:
                score = evaluate(selections[method][k], inst.truth, k)
                rows.append(
                    {
                        "scenario": scenario,
                        "k": k,
                        "method": method,
                        "seed": seed,
                        "jaccard": score.jaccard,
                        "fdp": score.fdp,
                        "n_selected": score.n_selected,
                    }
                )
    return rows


def write_scores_csv(rows: list[dict], path) -> None:
    fields = ["scenario", "k", "method", "seed", "jaccard", "fdp", "n_selected"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({f: row[f] for f in fields})


def median_scores(rows: list[dict]) -> dict[tuple[str, int], dict[str, float]]:
    """Median jaccard/fdp per (method, k) across seeds."""
    grouped: dict[tuple[str, int], dict[str, list[float]]] = {}
    for row in rows:
        key = (row["method"], row["k"])
        g = grouped.setdefault(key, {"jaccard": [], "fdp": []})
        g["jaccard"].append(row["jaccard"])
        g["fdp"].append(row["fdp"])
    return {
        key: {
            "jaccard": float(np.median(g["jaccard"])),
            "fdp": float(np.median(g["fdp"])),
        }
        for key, g in grouped.items()
    }
