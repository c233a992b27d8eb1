"""Between-study correlation network and study clustering.

For each study pair the shared non-null probability a_ij is estimated by a
four-configuration EM on the two columns; combined with the per-study
non-null probabilities a_i = 1 - pi0_i it yields a phi coefficient. The
estimate is stabilized as the mean over bootstrap subsamples of the genes.
Studies are then clustered by thresholding |r| into an unweighted graph and
minimizing the two-level map equation with greedy node moves.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config_em import EMOptions, EMResult, em_restricted
from .data_io import StatsMatrix
from .two_groups import TwoGroupsModel

PAIR_CONFIGS = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=np.uint8)


@dataclass
class StudyClustering:
    """Correlation matrix, edge threshold, and the resulting partition."""

    correlations: np.ndarray
    edge_threshold: float
    clusters: list[list[int]]
    study_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        r = np.asarray(self.correlations, dtype=np.float64)
        m = r.shape[0]
        if r.shape != (m, m) or not np.allclose(r, r.T, atol=1e-9):
            raise ValueError("correlation matrix must be square and symmetric")
        if np.any(np.abs(r) > 1.0 + 1e-9):
            raise ValueError("correlations must lie in [-1, 1]")
        seen = sorted(i for c in self.clusters for i in c)
        if seen != list(range(m)) or any(len(c) == 0 for c in self.clusters):
            raise ValueError("clusters must partition the studies")

    @property
    def n_studies(self) -> int:
        return self.correlations.shape[0]

    def to_json_dict(self) -> dict:
        ids = self.study_ids or tuple(str(i) for i in range(self.n_studies))
        return {
            "correlations": [[float(v) for v in row] for row in self.correlations],
            "threshold": self.edge_threshold,
            "clusters": [[ids[i] for i in c] for c in self.clusters],
            "cluster_indices": [list(map(int, c)) for c in self.clusters],
        }

    def to_json(self, path=None) -> str:
        payload = json.dumps(self.to_json_dict(), indent=2)
        if path is not None:
            Path(path).write_text(payload + "\n", encoding="utf-8")
        return payload


def _pair_log_lik(model_i, z_i, model_j, z_j) -> np.ndarray:
    """(n, 4) log-likelihood for the pair configs (00, 01, 10, 11)."""
    l0i = model_i.log_density_null(z_i)
    l0j = model_j.log_density_null(z_j)
    with np.errstate(divide="ignore"):
        l1i = model_i.log_density_nonnull_shrunk(z_i)
        l1j = model_j.log_density_nonnull_shrunk(z_j)
    return np.stack([l0i + l0j, l0i + l1j, l1i + l0j, l1i + l1j], axis=1)


def _pair_init(model_i, model_j) -> np.ndarray:
    pi = np.array(
        [
            model_i.pi0 * model_j.pi0,
            model_i.pi0 * (1.0 - model_j.pi0),
            (1.0 - model_i.pi0) * model_j.pi0,
            (1.0 - model_i.pi0) * (1.0 - model_j.pi0),
        ]
    )
    return pi / pi.sum()


def pairwise_joint_nonnull(
    model_i: TwoGroupsModel,
    z_i,
    model_j: TwoGroupsModel,
    z_j,
    opts: EMOptions | None = None,
) -> tuple[float, EMResult]:
    """Shared non-null probability a_ij = pi-hat(1,1) from a pair EM."""
    log_lik = _pair_log_lik(model_i, np.asarray(z_i), model_j, np.asarray(z_j))
    shift = np.where(np.isfinite(log_lik.max(axis=1)), log_lik.max(axis=1), 0.0)
    lik = np.exp(log_lik - shift[:, None])
    res = em_restricted(lik, _pair_init(model_i, model_j), opts, loglik_offset=float(shift.sum()))
    return float(res.pi[3]), res


def study_correlation(a_i: float, a_j: float, a_ij: float) -> float:
    """Phi coefficient of the two studies' non-null indicators.

    Zero when either marginal is degenerate (the coefficient is undefined
    and a degenerate study carries no dependence signal).
    """
    eps = 1e-12
    if a_i <= eps or a_i >= 1.0 - eps or a_j <= eps or a_j >= 1.0 - eps:
        return 0.0
    r = (a_ij - a_i * a_j) / math.sqrt(a_i * (1.0 - a_i) * a_j * (1.0 - a_j))
    return float(np.clip(r, -1.0, 1.0))


def _batched_pair_em(
    lik: np.ndarray,
    init: np.ndarray,
    weights: np.ndarray,
    opts: EMOptions,
) -> np.ndarray:
    """Weighted 4-config EM run simultaneously for B gene reweightings.

    ``weights`` is (n, B) of bootstrap multiplicities; returns (4, B)
    probability vectors. Iterations continue until every column meets the
    relative log-likelihood tolerance (columns already converged keep
    iterating at their fixed point, which keeps the result independent of
    the other columns' progress).
    """
    n_sub = weights.sum(axis=0)
    pi = np.tile(init[:, None], (1, weights.shape[1]))
    ll_prev = np.full(weights.shape[1], -np.inf)
    for _ in range(opts.max_iter):
        denom = np.maximum(lik @ pi, 1e-300)  # (n, B)
        ll = np.einsum("ib,ib->b", weights, np.log(denom))
        done = np.isfinite(ll_prev) & (np.abs(ll - ll_prev) <= opts.rel_tol * np.maximum(1.0, np.abs(ll_prev)))
        if bool(done.all()):
            break
        ll_prev = ll
        pi = pi * (lik.T @ (weights / denom)) / n_sub
    return pi


def bootstrap_correlation(
    model_i: TwoGroupsModel,
    z_i,
    model_j: TwoGroupsModel,
    z_j,
    B: int = 100,
    seed: int | np.random.SeedSequence = 0,
    opts: EMOptions | None = None,
) -> float:
    """Mean phi coefficient over B bootstrap re-estimates of a_ij.

    Each run reweights the genes by a with-replacement subsample of
    ceil(n/2) of them; a_i and a_j stay fixed at 1 - pi0 of the fitted
    models. Deterministic given the seed.
    """
    opts = opts or EMOptions()
    z_i = np.asarray(z_i, dtype=np.float64)
    z_j = np.asarray(z_j, dtype=np.float64)
    n = z_i.size
    rng = np.random.default_rng(seed)
    n_sub = (n + 1) // 2
    weights = np.empty((n, B))
    for b in range(B):
        idx = rng.integers(0, n, size=n_sub)
        weights[:, b] = np.bincount(idx, minlength=n)

    log_lik = _pair_log_lik(model_i, z_i, model_j, z_j)
    shift = np.where(np.isfinite(log_lik.max(axis=1)), log_lik.max(axis=1), 0.0)
    lik = np.exp(log_lik - shift[:, None])
    pis = _batched_pair_em(lik, _pair_init(model_i, model_j), weights, opts)

    a_i = 1.0 - model_i.pi0
    a_j = 1.0 - model_j.pi0
    rs = [study_correlation(a_i, a_j, float(pis[3, b])) for b in range(B)]
    return float(np.mean(rs))


def correlation_matrix(
    models: list[TwoGroupsModel],
    Z: StatsMatrix,
    B: int = 100,
    seed: int = 0,
    opts: EMOptions | None = None,
    threads: int | None = None,
) -> np.ndarray:
    """Bootstrapped study-correlation matrix (unit diagonal).

    Pair (i, j) draws its bootstrap stream from a seed derived only from
    (seed, i, j), so the result is independent of scheduling order.
    """
    m = Z.n_studies
    if len(models) != m:
        raise ValueError(f"{len(models)} models provided for {m} studies")
    r = np.eye(m)
    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]

    def job(pair):
        i, j = pair
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(i, j))
        return bootstrap_correlation(
            models[i], Z.values[:, i], models[j], Z.values[:, j], B=B, seed=ss, opts=opts
        )

    if threads is not None and threads <= 1:
        results = [job(p) for p in pairs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, pairs))
    for (i, j), val in zip(pairs, results):
        r[i, j] = r[j, i] = val
    return r


# -- community detection ---------------------------------------------------


def _connected_components(adj: np.ndarray) -> list[list[int]]:
    m = adj.shape[0]
    seen = [False] * m
    comps = []
    for s in range(m):
        if seen[s]:
            continue
        stack, comp = [s], []
        seen[s] = True
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in np.flatnonzero(adj[u]):
                if not seen[v]:
                    seen[v] = True
                    stack.append(int(v))
        comps.append(sorted(comp))
    return comps


def _map_equation(partition: np.ndarray, adj: np.ndarray, deg: np.ndarray, two_e: float) -> float:
    """Two-level map equation (natural log) for an unweighted graph.

    Nodes with degree zero carry no stationary flow and contribute nothing.
    """

    def plogp(x: np.ndarray | float) -> np.ndarray | float:
        return np.where(x > 0.0, x * np.log(np.maximum(x, 1e-300)), 0.0)

    labels = np.unique(partition)
    p = deg / two_e
    q = np.empty(labels.size)
    p_mod = np.empty(labels.size)
    inner = 0.0
    for t, lab in enumerate(labels):
        members = partition == lab
        cut = adj[members][:, ~members].sum()
        q[t] = cut / two_e
        p_mod[t] = p[members].sum() + q[t]
        inner += float(np.sum(plogp(p[members])))
    q_total = q.sum()
    code = plogp(q_total) - 2.0 * float(np.sum(plogp(q))) - inner + float(np.sum(plogp(p_mod)))
    return float(code)


def _greedy_map_partition(adj: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    m = adj.shape[0]
    deg = adj.sum(axis=1).astype(np.float64)
    two_e = float(deg.sum())
    part = np.arange(m)
    if two_e == 0.0:
        return part
    best = _map_equation(part, adj, deg, two_e)
    improved = True
    while improved:
        improved = False
        order = rng.permutation(m)
        for u in order:
            if deg[u] == 0.0:
                continue
            current = part[u]
            candidates = {int(part[v]) for v in np.flatnonzero(adj[u])}
            candidates.discard(int(current))
            for lab in sorted(candidates):
                trial = part.copy()
                trial[u] = lab
                val = _map_equation(trial, adj, deg, two_e)
                if val < best - 1e-12:
                    part, best = trial, val
                    improved = True
        # merge pass: joining two linked modules can lower the code length
        # when single-node moves are stuck
        labels = sorted(set(int(x) for x in part))
        for a_idx in range(len(labels)):
            for b_idx in range(a_idx + 1, len(labels)):
                a_lab, b_lab = labels[a_idx], labels[b_idx]
                ma, mb = part == a_lab, part == b_lab
                if not adj[ma][:, mb].any():
                    continue
                trial = part.copy()
                trial[mb] = a_lab
                val = _map_equation(trial, adj, deg, two_e)
                if val < best - 1e-12:
                    part, best = trial, val
                    improved = True
    return part


def detect_communities(
    correlations: np.ndarray,
    edge_threshold: float = 0.1,
    seed: int = 0,
    restarts: int = 10,
    study_ids=None,
) -> StudyClustering:
    """Cluster studies on the thresholded |correlation| graph.

    Communities minimize the two-level map equation via greedy node moves
    over ``restarts`` shuffled sweeps; graphs with at most two edges fall
    back to connected components (exact there). Isolated studies come out
    as singletons.
    """
    r = np.asarray(correlations, dtype=np.float64)
    if not (0.0 < edge_threshold < 1.0):
        raise ValueError("edge_threshold must lie in (0, 1)")
    m = r.shape[0]
    adj = (np.abs(r) >= edge_threshold).astype(np.float64)
    np.fill_diagonal(adj, 0.0)
    n_edges = int(adj.sum()) // 2

    if n_edges <= 2:
        comps = _connected_components(adj)
    else:
        best_part = None
        best_val = np.inf
        deg = adj.sum(axis=1).astype(np.float64)
        two_e = float(deg.sum())
        for rep in range(restarts):
            rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(rep,)))
            part = _greedy_map_partition(adj, rng)
            val = _map_equation(part, adj, deg, two_e)
            if val < best_val - 1e-12:
                best_val, best_part = val, part
        groups: dict[int, list[int]] = {}
        for node, lab in enumerate(best_part):
            groups.setdefault(int(lab), []).append(node)
        comps = [sorted(g) for g in groups.values()]

    comps = sorted(comps, key=lambda c: c[0])
    ids = tuple(study_ids) if study_ids is not None else None
    return StudyClustering(
        correlations=r, edge_threshold=edge_threshold, clusters=comps, study_ids=ids
    )
