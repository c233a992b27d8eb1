"""Memory-restricted EM over binary study-configurations (the repfdr-UB engine).

The prior over the 2^m configuration vectors is estimated by absorbing one
study at a time while keeping at most ``n_h`` configurations alive. The
state tracks which prefixes survive, their estimated probabilities, the
retained coverage xi, and an upper bound eps on the probability of any
pruned configuration. From the final state a provable upper bound on fdr_k
follows in O(m (n_h + k)) per gene; with n_h = 2^m nothing is pruned and
the bound collapses to the exact value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._kernels import count_tail_dp
from .data_io import StatsMatrix
from .two_groups import TwoGroupsModel, study_log_densities


@dataclass(frozen=True)
class EMOptions:
    max_iter: int = 500
    rel_tol: float = 1e-8


@dataclass
class EMResult:
    """Outcome of one restricted EM run."""

    pi: np.ndarray
    loglik_trace: list[float]
    converged: bool
    n_iter: int

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1] if self.loglik_trace else float("nan")


def em_restricted(lik, init, opts: EMOptions | None = None, loglik_offset: float = 0.0) -> EMResult:
    """EM for configuration probabilities with the support fixed by ``init``.

    ``lik`` is an (n_genes, n_configs) matrix of P(Z_i | h) (any common
    per-gene scaling is allowed; it shifts the log-likelihood by a constant).
    Entries of ``init`` that are exactly zero stay exactly zero, so the run
    optimizes over the sub-simplex spanned by the initially supported
    configurations.
    """
    opts = opts or EMOptions()
    lik = np.asarray(lik, dtype=np.float64)
    pi = np.array(init, dtype=np.float64, copy=True)
    if lik.ndim != 2 or pi.ndim != 1 or lik.shape[1] != pi.size:
        raise ValueError("lik must be (n_genes, n_configs) and init a matching vector")
    if np.any(pi < 0.0) or abs(pi.sum() - 1.0) > 1e-8:
        raise ValueError("init must be a probability vector")
    n = lik.shape[0]

    trace: list[float] = []
    converged = False
    ll_prev = -np.inf
    it = 0
    for it in range(1, opts.max_iter + 1):
        denom = lik @ pi
        denom = np.maximum(denom, 1e-300)
        ll = float(np.log(denom).sum()) + loglik_offset
        trace.append(ll)
        if np.isfinite(ll_prev) and abs(ll - ll_prev) <= opts.rel_tol * max(1.0, abs(ll_prev)):
            converged = True
            break
        ll_prev = ll
        # posterior column means; multiplying by pi keeps exact zeros at zero
        pi = pi * (lik.T @ (1.0 / denom)) / n
    return EMResult(pi=pi, loglik_trace=trace, converged=converged, n_iter=it)


@dataclass
class ConfigState:
    """Pruned configuration set over the first ``l`` absorbed studies.

    ``configs`` rows are kept in lexicographic order; ``probs`` align with
    them and sum to ``coverage``. ``exclusion_bound`` dominates the
    estimated probability of every configuration pruned so far. ``log_lik``
    caches per-gene log P(Z over absorbed studies | config).
    """

    configs: np.ndarray
    probs: np.ndarray
    coverage: float
    exclusion_bound: float
    l: int
    n_h: int
    log_lik: np.ndarray | None = None
    study_indices: list[int] = field(default_factory=list)
    em_log: list[dict] = field(default_factory=list)

    @property
    def n_configs(self) -> int:
        return self.configs.shape[0]

    def counts(self) -> np.ndarray:
        return self.configs.sum(axis=1).astype(np.int64)

    def to_json_dict(self) -> dict:
        return {
            "configs": ["".join(str(int(b)) for b in row) for row in self.configs],
            "probs": [float(p) for p in self.probs],
            "coverage": self.coverage,
            "exclusion_bound": self.exclusion_bound,
            "l": self.l,
            "n_h": self.n_h,
            "study_indices": list(self.study_indices),
        }

    def to_json(self, path=None) -> str:
        payload = json.dumps(self.to_json_dict(), indent=2)
        if path is not None:
            Path(path).write_text(payload + "\n", encoding="utf-8")
        return payload

    @classmethod
    def from_json(cls, source) -> "ConfigState":
        text = source
        p = Path(str(source))
        if p.exists():
            text = p.read_text(encoding="utf-8")
        d = json.loads(text)
        configs = np.array([[int(ch) for ch in s] for s in d["configs"]], dtype=np.uint8)
        if configs.size == 0:
            configs = configs.reshape(0, d["l"])
        return cls(
            configs=configs,
            probs=np.asarray(d["probs"], dtype=np.float64),
            coverage=float(d["coverage"]),
            exclusion_bound=float(d["exclusion_bound"]),
            l=int(d["l"]),
            n_h=int(d["n_h"]),
            study_indices=[int(i) for i in d.get("study_indices", [])],
        )


def _is_power_of_two(v: int) -> bool:
    return v >= 1 and (v & (v - 1)) == 0


def _all_configs(l: int) -> np.ndarray:
    """All binary vectors of length l, lexicographically ordered."""
    if l == 0:
        return np.zeros((1, 0), dtype=np.uint8)
    grid = np.indices((2,) * l).reshape(l, -1).T
    return np.ascontiguousarray(grid, dtype=np.uint8)


def _product_prior(configs: np.ndarray, pi0s: np.ndarray) -> np.ndarray:
    h = configs.astype(np.float64)
    w = h * (1.0 - pi0s) + (1.0 - h) * pi0s
    return w.prod(axis=1) if configs.shape[1] else np.ones(configs.shape[0])


def _config_log_lik(configs: np.ndarray, logF0: np.ndarray, logF1: np.ndarray) -> np.ndarray:
    """log P(Z_i | h) for each retained config; (n_genes, n_configs)."""
    base = logF0.sum(axis=1)
    delta = logF1 - logF0
    # -inf (zero-power studies) would turn 0 * -inf into nan inside the
    # matmul; a huge finite penalty exponentiates to the same 0.0
    delta = np.where(np.isfinite(delta), delta, -1e30)
    out = base[:, None] + delta @ configs.T.astype(np.float64)
    return out


def _normalized_lik(log_lik: np.ndarray) -> tuple[np.ndarray, float]:
    """Shift each gene's log-likelihood row and exponentiate.

    Returns the normalized likelihood matrix and the summed shift, which is
    the constant to add back to get true log-likelihoods.
    """
    shift = log_lik.max(axis=1)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    lik = np.exp(log_lik - shift[:, None])
    return lik, float(shift.sum())


def initial_state(
    logF0: np.ndarray,
    logF1: np.ndarray,
    pi0s,
    n_h: int,
    opts: EMOptions | None = None,
) -> ConfigState:
    """Unrestricted EM over all configurations of the first few studies.

    The initial prefix length is min(m, log2(n_h) - 1) so that the first
    absorption step extends to exactly n_h candidates.
    """
    if not _is_power_of_two(n_h) or n_h < 2:
        raise ValueError("n_h must be a power of two, at least 2")
    m = logF0.shape[1]
    pi0s = np.asarray(pi0s, dtype=np.float64)
    l0 = min(m, n_h.bit_length() - 2)
    configs = _all_configs(l0)
    state = ConfigState(
        configs=configs,
        probs=np.ones(configs.shape[0]) / configs.shape[0],
        coverage=1.0,
        exclusion_bound=0.0,
        l=l0,
        n_h=n_h,
        study_indices=list(range(l0)),
    )
    state.log_lik = _config_log_lik(configs, logF0[:, :l0], logF1[:, :l0])
    if l0 > 0:
        lik, offset = _normalized_lik(state.log_lik)
        init = _product_prior(configs, pi0s[:l0])
        init = init / init.sum()
        res = em_restricted(lik, init, opts, loglik_offset=offset)
        state.probs = res.pi
        state.em_log.append(
            {
                "stage": l0,
                "n_configs": configs.shape[0],
                "n_iter": res.n_iter,
                "converged": res.converged,
                "loglik": res.loglik,
                "loglik_trace": res.loglik_trace,
            }
        )
    return state


def absorb_study(
    state: ConfigState,
    logf0_new,
    logf1_new,
    opts: EMOptions | None = None,
    final: bool = False,
    study_index: int | None = None,
) -> ConfigState:
    """Extend the state by one study, re-run the EM, and prune.

    Every retained prefix spawns a 0- and a 1-extension, each warm-started
    with half its parent's probability. After the EM the four bookkeeping
    updates run in order: rescale by the previous coverage, prune to the
    capacity (half of n_h, or n_h itself on the final study, where no
    further extension happens), recompute the coverage, and fold the largest
    pruned probability into the exclusion bound.
    """
    if state.log_lik is None:
        raise ValueError("state has no likelihood cache; rebuild it from densities")
    logf0_new = np.asarray(logf0_new, dtype=np.float64)
    logf1_new = np.asarray(logf1_new, dtype=np.float64)

    c_prev = state.n_configs
    configs = np.repeat(state.configs, 2, axis=0)
    configs = np.hstack([configs, np.tile([[0], [1]], (c_prev, 1)).astype(np.uint8)])

    log_lik = np.empty((state.log_lik.shape[0], 2 * c_prev))
    log_lik[:, 0::2] = state.log_lik + logf0_new[:, None]
    log_lik[:, 1::2] = state.log_lik + logf1_new[:, None]

    init = np.repeat(state.probs, 2) / 2.0
    total = init.sum()
    if total <= 0.0:
        raise ValueError("state probabilities sum to zero")
    init = init / total

    lik, offset = _normalized_lik(log_lik)
    res = em_restricted(lik, init, opts, loglik_offset=offset)

    probs = state.coverage * res.pi  # update 1
    cap = state.n_h if final else state.n_h // 2
    if probs.size > cap:  # update 2: keep the top `cap`, ties to lex-smallest
        order = np.argsort(-probs, kind="stable")
        keep = np.sort(order[:cap])
        dropped = np.sort(order[cap:])
        eps_new = max(state.exclusion_bound, float(probs[dropped].max()))  # update 4
        configs = configs[keep]
        probs = probs[keep]
        log_lik = log_lik[:, keep]
    else:
        eps_new = state.exclusion_bound
    coverage = float(probs.sum())  # update 3

    new = ConfigState(
        configs=np.ascontiguousarray(configs),
        probs=probs,
        coverage=coverage,
        exclusion_bound=eps_new,
        l=state.l + 1,
        n_h=state.n_h,
        log_lik=log_lik,
        study_indices=state.study_indices + [state.l if study_index is None else study_index],
        em_log=state.em_log
        + [
            {
                "stage": state.l + 1,
                "n_configs": 2 * c_prev,
                "n_iter": res.n_iter,
                "converged": res.converged,
                "loglik": res.loglik,
                "loglik_trace": res.loglik_trace,
            }
        ],
    )
    return new


def run_restricted(
    logF0: np.ndarray,
    logF1: np.ndarray,
    pi0s,
    n_h: int,
    opts: EMOptions | None = None,
) -> ConfigState:
    """Full restricted-EM sweep over all study columns, in the given order."""
    m = logF0.shape[1]
    state = initial_state(logF0, logF1, pi0s, n_h, opts)
    for j in range(state.l, m):
        state = absorb_study(
            state, logF0[:, j], logF1[:, j], opts, final=(j == m - 1), study_index=j
        )
    return state


def posterior_count_parts(
    state: ConfigState,
    logF0: np.ndarray,
    logF1: np.ndarray,
    kmax: int | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-gene pieces of the pruned-prior posterior, grouped by config count.

    Returns (SC, BC, A, D) where, with likelihoods rescaled per gene by the
    per-study max density (the common factor cancels in every ratio):
    SC[i,c] sums P(Z_i|h) pi(h) over retained configs with c ones, BC[i,c]
    the same without the prior, A[i,c] sums P(Z_i|h) over ALL 2^l configs
    with c ones (count recursion), and D[i] = sum_c SC[i,c].
    """
    if state.log_lik is None:
        raise ValueError("state has no likelihood cache; rebuild it from densities")
    l = state.l
    if logF0.shape[1] != l or logF1.shape[1] != l:
        raise ValueError(f"density matrices must cover the state's {l} studies")
    kmax = l + 1 if kmax is None else min(kmax, l + 1)

    mx = np.maximum(logF0, logF1)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    shift = mx.sum(axis=1)
    ptil = np.exp(state.log_lik - shift[:, None])

    counts = state.counts()
    ind = np.zeros((state.n_configs, l + 1))
    ind[np.arange(state.n_configs), counts] = 1.0
    sc = (ptil * state.probs) @ ind
    bc = ptil @ ind

    g0 = np.exp(logF0 - mx)
    g1 = np.exp(logF1 - mx)
    a = count_tail_dp(g0, g1, kmax)

    d = sc.sum(axis=1)
    return sc[:, :kmax], bc[:, :kmax], a, d


def fdr_k_upper_bound(state: ConfigState, logF0: np.ndarray, logF1: np.ndarray, ks) -> np.ndarray:
    """Upper bound on fdr_k from a pruned configuration state.

    numerator = sum over retained low-count configs of P(Z|h)(pi(h) - eps)
    plus eps times the count recursion over all low-count configs;
    denominator = total retained posterior mass. Exact (equal to fdr_k from
    the state's prior) when nothing was pruned. The bound may exceed one;
    it is reported as-is, clipped below at zero.
    """
    ks = np.atleast_1d(np.asarray(ks, dtype=int))
    if np.any(ks < 1) or np.any(ks > state.l):
        raise ValueError(f"k must lie in [1, {state.l}]")
    kmax = int(ks.max())
    sc, bc, a, d = posterior_count_parts(state, logF0, logF1, kmax)
    eps = state.exclusion_bound
    num = np.cumsum(sc + eps * (a - bc), axis=1)
    ub = np.maximum(num[:, ks - 1], 0.0) / np.maximum(d, 1e-300)[:, None]
    return ub


def repfdr_upper_bound(
    models: list[TwoGroupsModel],
    Z: StatsMatrix,
    ks,
    n_h: int = 512,
    opts: EMOptions | None = None,
    order: str = "input",
) -> tuple[np.ndarray, ConfigState]:
    """End-to-end repfdr-UB: restricted EM over all studies, then the bound.

    ``order`` chooses the absorption order: ``input`` keeps the matrix
    order, ``power`` absorbs higher-powered studies first (fdr_k itself is
    order-invariant, but the pruning path is not).
    """
    if order not in ("input", "power"):
        raise ValueError("order must be 'input' or 'power'")
    perm = np.arange(Z.n_studies)
    if order == "power":
        perm = np.argsort([-m.power for m in models], kind="stable")
    logF0, logF1 = study_log_densities(models, Z)
    logF0 = logF0[:, perm]
    logF1 = logF1[:, perm]
    pi0s = np.array([models[j].pi0 for j in perm])
    state = run_restricted(logF0, logF1, pi0s, n_h, opts)
    state.study_indices = [int(perm[i]) for i in state.study_indices]
    table = fdr_k_upper_bound(state, logF0, logF1, ks)
    return table, state
