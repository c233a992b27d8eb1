"""Independent reference implementations used as test oracles.

Everything here enumerates or brute-forces; nothing imports the package's
dynamic-programming or EM code paths beyond the density definitions of the
fitted models (which are the shared contract between engines).
"""

from __future__ import annotations

import itertools

import numpy as np


def enumerate_configs(m: int) -> list[tuple[int, ...]]:
    return list(itertools.product((0, 1), repeat=m))


def fdr_k_brute(pi0s: np.ndarray, F0: np.ndarray, F1: np.ndarray, k: int) -> np.ndarray:
    """Exact fdr_k by summing over all 2^m configurations.

    F0, F1 are (n, m) per-cell null / (shrunk) non-null densities; the prior
    is the product of per-study Bernoulli(1 - pi0) factors.
    """
    n, m = F0.shape
    num = np.zeros(n)
    den = np.zeros(n)
    for h in enumerate_configs(m):
        h = np.asarray(h)
        prior = np.prod(np.where(h == 1, 1.0 - pi0s, pi0s))
        lik = np.prod(np.where(h == 1, F1, F0), axis=1)
        den += prior * lik
        if h.sum() < k:
            num += prior * lik
    return num / den


def fdr_k_brute_prior(
    configs: np.ndarray, prior: np.ndarray, F0: np.ndarray, F1: np.ndarray, k: int
) -> np.ndarray:
    """Exact fdr_k for an arbitrary prior over an explicit configuration set."""
    n = F0.shape[0]
    num = np.zeros(n)
    den = np.zeros(n)
    for h, pr in zip(configs, prior):
        h = np.asarray(h)
        lik = np.prod(np.where(h == 1, F1, F0), axis=1)
        den += pr * lik
        if h.sum() < k:
            num += pr * lik
    return num / den


def cluster_product_fdr_brute(
    cluster_cols: list[list[int]],
    cluster_priors: list[dict[tuple[int, ...], float]],
    F0: np.ndarray,
    F1: np.ndarray,
    k: int,
) -> np.ndarray:
    """fdr_k under a product-of-clusters prior, by full enumeration."""
    m = F0.shape[1]
    n = F0.shape[0]
    num = np.zeros(n)
    den = np.zeros(n)
    for h in enumerate_configs(m):
        h = np.asarray(h)
        prior = 1.0
        for cols, cp in zip(cluster_cols, cluster_priors):
            prior *= cp[tuple(int(h[c]) for c in cols)]
        lik = np.prod(np.where(h == 1, F1, F0), axis=1)
        den += prior * lik
        if h.sum() < k:
            num += prior * lik
    return num / den


def fdr_delta_d_brute(
    cluster_cols: list[list[int]],
    cluster_priors: list[dict[tuple[int, ...], float]],
    F0: np.ndarray,
    F1: np.ndarray,
    delta: float,
    d: int,
) -> np.ndarray:
    """P(fewer than d clusters have >= ceil(delta*|C|) non-nulls | Z)."""
    m = F0.shape[1]
    n = F0.shape[0]
    num = np.zeros(n)
    den = np.zeros(n)
    for h in enumerate_configs(m):
        h = np.asarray(h)
        prior = 1.0
        interesting = 0
        for cols, cp in zip(cluster_cols, cluster_priors):
            sub = tuple(int(h[c]) for c in cols)
            prior *= cp[sub]
            if sum(sub) >= int(np.ceil(delta * len(cols))):
                interesting += 1
        lik = np.prod(np.where(h == 1, F1, F0), axis=1)
        den += prior * lik
        if interesting < d:
            num += prior * lik
    return num / den


def posterior_expected_count_brute(pi0s: np.ndarray, F0: np.ndarray, F1: np.ndarray) -> np.ndarray:
    """E[number of non-null studies | Z] under the independent product prior."""
    n, m = F0.shape
    num = np.zeros(n)
    den = np.zeros(n)
    for h in enumerate_configs(m):
        h = np.asarray(h)
        prior = np.prod(np.where(h == 1, 1.0 - pi0s, pi0s))
        lik = np.prod(np.where(h == 1, F1, F0), axis=1)
        den += prior * lik
        num += h.sum() * prior * lik
    return num / den


def bh_quadratic(p: np.ndarray) -> np.ndarray:
    """Step-up adjusted q-values via the O(n^2) definition."""
    p = np.asarray(p, dtype=np.float64)
    n = p.size
    q = np.empty(n)
    for i in range(n):
        cands = []
        for j in range(n):
            if p[j] >= p[i]:
                rank = int(np.sum(p <= p[j]))
                cands.append(n * p[j] / rank)
        q[i] = min(min(cands), 1.0)
    return q


def count_distribution_brute(
    configs: np.ndarray, prior: np.ndarray, F0: np.ndarray, F1: np.ndarray
) -> np.ndarray:
    """Posterior P(count = c | Z) over an explicit config set; (n, m+1)."""
    n, m = F0.shape
    out = np.zeros((n, m + 1))
    den = np.zeros(n)
    for h, pr in zip(configs, prior):
        h = np.asarray(h)
        lik = np.prod(np.where(h == 1, F1, F0), axis=1)
        out[:, int(h.sum())] += pr * lik
        den += pr * lik
    return out / den[:, None]


def random_models(rng: np.random.Generator, m: int):
    """Plausible random TwoGroupsModel parameter sets for oracle tests."""
    from screenrep.two_groups import TwoGroupsModel

    models = []
    for _ in range(m):
        models.append(
            TwoGroupsModel(
                pi0=float(rng.uniform(0.5, 0.98)),
                null_sigma=1.0,
                nonnull_mu=float(rng.uniform(1.5, 4.0)),
                nonnull_sigma=float(rng.uniform(0.5, 1.5)),
                power=float(rng.uniform(0.3, 1.0)),
                null_mode="theoretical",
            )
        )
    return models


def sample_from_models(rng: np.random.Generator, models, n: int) -> np.ndarray:
    """Signed z-scores drawn from each study's fitted mixture."""
    m = len(models)
    z = np.empty((n, m))
    for j, model in enumerate(models):
        nonnull = rng.random(n) < (1.0 - model.pi0)
        z0 = np.abs(rng.normal(0.0, model.null_sigma, size=n))
        # truncated normal by rejection; mu/sigma here keep acceptance high
        z1 = rng.normal(model.nonnull_mu, model.nonnull_sigma, size=n)
        while np.any(z1 < 0.0):
            bad = z1 < 0.0
            z1[bad] = rng.normal(model.nonnull_mu, model.nonnull_sigma, size=int(bad.sum()))
        z[:, j] = np.where(nonnull, z1, z0)
    return z


def model_density_pairs(models, Z: np.ndarray):
    """(F0, F1_shrunk) per cell for a plain ndarray of z-scores."""
    F0 = np.empty_like(Z)
    F1 = np.empty_like(Z)
    for j, model in enumerate(models):
        F0[:, j] = model.density_null(Z[:, j])
        F1[:, j] = model.density_nonnull_shrunk(Z[:, j])
    return F0, F1
