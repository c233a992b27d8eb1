"""SCREEN: per-cluster configuration EM merged across clusters by DP.

Stage one clusters the studies on the bootstrapped correlation network;
stage two estimates, within each cluster, the posterior distribution of a
gene's non-null count (exactly when the full configuration space fits the
memory cap, otherwise with the pruned EM, whose excluded mass is folded in
through the exclusion bound so the merged result stays an upper bound);
stage three convolves the per-cluster count distributions and reads off
fdr_k as the probability of fewer than k non-null realizations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ._kernels import convolve_counts
from .config_em import (
    ConfigState,
    EMOptions,
    posterior_count_parts,
    run_restricted,
)
from .data_io import StatsMatrix
from .study_cluster import StudyClustering, correlation_matrix, detect_communities
from .two_groups import FitOptions, TwoGroupsModel, fit_study_models, study_log_densities


@dataclass
class ClusterCountDistribution:
    """Posterior distribution of a gene's non-null count within one cluster.

    ``values[i, c]`` is P(exactly c non-null realizations | Z over the
    cluster). Rows sum to one when the cluster prior is exact; for pruned
    states the excluded configurations are charged at the exclusion bound,
    which inflates the rows (never deflates), preserving the upper-bound
    direction after merging.
    """

    values: np.ndarray
    studies: list[int]

    @property
    def size(self) -> int:
        return len(self.studies)

    def __post_init__(self):
        if self.values.shape[1] != len(self.studies) + 1:
            raise ValueError("count distribution must have cluster-size + 1 columns")


@dataclass
class FdrTable:
    """Per-gene fdr_k values for a range of k."""

    gene_ids: tuple[str, ...]
    ks: list[int]
    values: np.ndarray
    method: str
    cutoff: float = 0.2

    def column(self, k: int) -> np.ndarray:
        return self.values[:, self.ks.index(k)]

    def select(self, k: int, cutoff: float | None = None) -> list[str]:
        cut = self.cutoff if cutoff is None else cutoff
        col = self.column(k)
        return [g for g, v in zip(self.gene_ids, col) if v <= cut]

    def to_tsv(self, path, comment: str | None = None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            fh.write("gene\t" + "\t".join(f"fdr_k{k}" for k in self.ks) + "\n")
            for gid, row in zip(self.gene_ids, self.values):
                fh.write(gid + "\t" + "\t".join(format(v, ".12g") for v in row) + "\n")


def exact_singleton_state(logf0_col: np.ndarray, logf1_col: np.ndarray, pi0: float) -> ConfigState:
    """Two-configuration state for a single-study cluster.

    The study's own two-groups model already is the fitted prior for that
    study, so no EM re-estimation happens here; the resulting count
    distribution is exactly (marginal fdr, marginal tdr).
    """
    configs = np.array([[0], [1]], dtype=np.uint8)
    log_lik = np.stack([logf0_col, logf1_col], axis=1)
    return ConfigState(
        configs=configs,
        probs=np.array([pi0, 1.0 - pi0]),
        coverage=1.0,
        exclusion_bound=0.0,
        l=1,
        n_h=2,
        log_lik=log_lik,
    )


def cluster_count_distribution(
    state: ConfigState,
    logF0: np.ndarray,
    logF1: np.ndarray,
    studies: list[int] | None = None,
) -> ClusterCountDistribution:
    """Count posterior per gene from a cluster's configuration state.

    For count c: (retained mass at c + eps * (all-config mass at c -
    retained unweighted mass at c)) / total retained mass. With eps = 0 and
    full coverage this is the exact posterior.
    """
    sc, bc, a, d = posterior_count_parts(state, logF0, logF1)
    if state.exclusion_bound > 0.0:
        v = sc + state.exclusion_bound * (a - bc)
    else:
        v = sc
    v = v / np.maximum(d, 1e-300)[:, None]
    return ClusterCountDistribution(
        values=np.maximum(v, 0.0),
        studies=list(range(state.l)) if studies is None else list(studies),
    )


def merge_clusters(parts: list[ClusterCountDistribution], ks) -> np.ndarray:
    """fdr_k per gene from independent per-cluster count distributions.

    Truncated convolution over clusters, then the below-k tail sum; O(k^2 M)
    per gene plus the per-cluster table sizes.
    """
    ks = np.atleast_1d(np.asarray(ks, dtype=int))
    if not parts:
        raise ValueError("no cluster distributions to merge")
    m = sum(p.size for p in parts)
    seen = sorted(s for p in parts for s in p.studies)
    if len(set(seen)) != len(seen):
        raise ValueError("cluster study sets overlap")
    if np.any(ks < 1) or np.any(ks > m):
        raise ValueError(f"k must lie in [1, {m}]")
    n = parts[0].values.shape[0]
    if any(p.values.shape[0] != n for p in parts):
        raise ValueError("cluster distributions disagree on the number of genes")
    kmax = int(ks.max())
    acc = np.zeros((n, kmax))
    acc[:, 0] = 1.0
    for part in parts:
        acc = convolve_counts(acc, part.values, kmax)
    cum = np.cumsum(acc, axis=1)
    return np.maximum(cum[:, ks - 1], 0.0)


def fdr_delta_d(parts: list[ClusterCountDistribution], delta: float, d: int) -> np.ndarray:
    """Probability that fewer than d clusters are "interesting".

    A cluster is interesting for a gene when at least ceil(delta * size) of
    its studies are non-null; cluster independence turns the outer
    computation into a Bernoulli-count DP.
    """
    if not (0.0 < delta <= 1.0):
        raise ValueError("delta must lie in (0, 1]")
    if d < 1:
        raise ValueError("d must be a positive integer")
    if not parts:
        raise ValueError("no cluster distributions supplied")
    n = parts[0].values.shape[0]
    n_clusters = len(parts)
    if d > n_clusters:
        return np.ones(n)
    acc = np.zeros((n, d))
    acc[:, 0] = 1.0
    for part in parts:
        thresh = int(np.ceil(delta * part.size))
        q = part.values[:, thresh:].sum(axis=1)  # interesting
        w = part.values[:, :thresh].sum(axis=1)  # not interesting
        pair = np.stack([w, q], axis=1)
        acc = convolve_counts(acc, pair, d)
    return acc.sum(axis=1)


@dataclass
class ScreenOptions:
    """Knobs for the end-to-end SCREEN run."""

    null_mode: str = "theoretical"
    n_h: int = 512
    bootstrap: int = 100
    edge_threshold: float = 0.1
    seed: int = 0
    cutoff: float = 0.2
    threads: int | None = None
    fit: FitOptions = field(default_factory=FitOptions)
    em: EMOptions = field(default_factory=EMOptions)


@dataclass
class ScreenResult:
    table: FdrTable
    models: list[TwoGroupsModel]
    clustering: StudyClustering
    states: list[ConfigState]
    report: dict


def cluster_states(
    clustering: StudyClustering,
    logF0: np.ndarray,
    logF1: np.ndarray,
    pi0s: np.ndarray,
    n_h: int,
    em_opts: EMOptions | None = None,
) -> list[ConfigState]:
    """Configuration state per cluster: exact when 2^size fits n_h."""
    states = []
    for cluster in clustering.clusters:
        cols = list(cluster)
        if len(cols) == 1:
            j = cols[0]
            states.append(exact_singleton_state(logF0[:, j], logF1[:, j], float(pi0s[j])))
            continue
        nh_c = min(n_h, 2 ** len(cols))
        states.append(
            run_restricted(logF0[:, cols], logF1[:, cols], pi0s[cols], nh_c, em_opts)
        )
    return states


def screen(
    Z: StatsMatrix,
    ks,
    opts: ScreenOptions | None = None,
    models: list[TwoGroupsModel] | None = None,
    clustering: StudyClustering | None = None,
) -> ScreenResult:
    """Full SCREEN pipeline on a z-score matrix.

    Fits the per-study models (unless given), clusters the studies on the
    bootstrapped correlation network (unless given), runs the configuration
    EM per cluster, and merges the clusters. The report captures models,
    clustering, per-cluster EM diagnostics and wall times.
    """
    opts = opts or ScreenOptions()
    ks = [int(k) for k in np.atleast_1d(np.asarray(ks, dtype=int))]
    t0 = time.perf_counter()

    if models is None:
        models = fit_study_models(Z, null_mode=opts.null_mode, opts=opts.fit, threads=opts.threads)
    t_fit = time.perf_counter()

    if clustering is None:
        corr = correlation_matrix(
            models, Z, B=opts.bootstrap, seed=opts.seed, opts=opts.em, threads=opts.threads
        )
        clustering = detect_communities(
            corr, edge_threshold=opts.edge_threshold, seed=opts.seed, study_ids=Z.study_ids
        )
    t_cluster = time.perf_counter()

    logF0, logF1 = study_log_densities(models, Z)
    pi0s = np.array([m.pi0 for m in models])
    states = cluster_states(clustering, logF0, logF1, pi0s, opts.n_h, opts.em)
    parts = [
        cluster_count_distribution(
            state, logF0[:, list(cluster)], logF1[:, list(cluster)], studies=list(cluster)
        )
        for state, cluster in zip(states, clustering.clusters)
    ]
    values = merge_clusters(parts, ks)
    t_end = time.perf_counter()

    table = FdrTable(
        gene_ids=Z.gene_ids, ks=ks, values=values, method="screen", cutoff=opts.cutoff
    )
    report = {
        "method": "screen",
        "ks": ks,
        "n_genes": Z.n_genes,
        "n_studies": Z.n_studies,
        "options": {
            "null_mode": opts.null_mode,
            "n_h": opts.n_h,
            "bootstrap": opts.bootstrap,
            "edge_threshold": opts.edge_threshold,
            "seed": opts.seed,
            "cutoff": opts.cutoff,
        },
        "models": [m.to_json_dict() for m in models],
        "clustering": clustering.to_json_dict(),
        "cluster_em": [
            {
                "studies": list(cluster),
                "n_configs": int(state.n_configs),
                "coverage": state.coverage,
                "exclusion_bound": state.exclusion_bound,
                "em_stages": [
                    {key: stage[key] for key in ("stage", "n_configs", "n_iter", "converged", "loglik")}
                    for stage in state.em_log
                ],
            }
            for state, cluster in zip(states, clustering.clusters)
        ],
        "runtime_sec": {
            "fit": t_fit - t0,
            "cluster": t_cluster - t_fit,
            "em_and_merge": t_end - t_cluster,
            "total": t_end - t0,
        },
    }
    return ScreenResult(table=table, models=models, clustering=clustering, states=states, report=report)
