"""Per-study two-groups mixture on folded z-scores.

Each study is modelled as a mixture of a half-normal null (scale fixed at 1
for the theoretical null, free but >= 1 for the empirical null) and a
non-null normal with positive mean, evaluated on the folded values. The
non-null normal deliberately keeps its mass below zero un-renormalized: a
component that cannot imitate the half-normal null keeps the mixture
identifiable on null-dominated columns. Fitting is plain EM on |z|;
afterwards the non-null density is shrunk by the estimated study power, and
that shrunk density is what every downstream replicability computation uses
as P(Z | non-null).
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import quad

from .data_io import StatsMatrix

_LOG_HALF_NORMAL = 0.5 * math.log(2.0 / math.pi)
_LOG_NORMAL = -0.5 * math.log(2.0 * math.pi)

NULL_MODES = ("theoretical", "empirical")


@dataclass(frozen=True)
class FitOptions:
    """EM controls for :func:`fit_normix`."""

    max_iter: int = 1000
    rel_tol: float = 1e-8
    pi0_init: float = 0.9
    pi0_min: float = 1e-4
    mu_min: float = 1e-3
    sigma_min: float = 1e-3
    min_genes: int = 50


@dataclass
class TwoGroupsModel:
    """Fitted mixture for one study, on the folded |z| scale."""

    pi0: float
    null_sigma: float
    nonnull_mu: float
    nonnull_sigma: float
    power: float
    null_mode: str
    converged: bool = True
    degenerate: bool = False
    loglik: float = float("nan")
    study_id: str | None = None
    loglik_trace: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.null_mode not in NULL_MODES:
            raise ValueError(f"null_mode must be one of {NULL_MODES}")
        if not (0.0 <= self.pi0 <= 1.0):
            raise ValueError("pi0 must lie in [0, 1]")
        if self.null_sigma < 1.0:
            raise ValueError("null_sigma must be >= 1")
        if self.nonnull_mu <= 0.0 or self.nonnull_sigma <= 0.0:
            raise ValueError("non-null mean and scale must be positive")
        if not (0.0 <= self.power <= 1.0):
            raise ValueError("power must lie in [0, 1]")

    # -- densities on the folded scale (inputs are folded internally) ----

    def density_null(self, z) -> np.ndarray:
        x = np.abs(np.asarray(z, dtype=np.float64))
        s = self.null_sigma
        return np.sqrt(2.0 / np.pi) / s * np.exp(-0.5 * (x / s) ** 2)

    def log_density_null(self, z) -> np.ndarray:
        x = np.abs(np.asarray(z, dtype=np.float64))
        s = self.null_sigma
        return _LOG_HALF_NORMAL - math.log(s) - 0.5 * (x / s) ** 2

    def density_nonnull_raw(self, z) -> np.ndarray:
        return np.exp(self.log_density_nonnull_raw(z))

    def log_density_nonnull_raw(self, z) -> np.ndarray:
        x = np.abs(np.asarray(z, dtype=np.float64))
        mu, s = self.nonnull_mu, self.nonnull_sigma
        return _LOG_NORMAL - math.log(s) - 0.5 * ((x - mu) / s) ** 2

    def density_nonnull_shrunk(self, z) -> np.ndarray:
        return self.power * self.density_nonnull_raw(z)

    def log_density_nonnull_shrunk(self, z) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.power) + self.log_density_nonnull_raw(z)

    def density_marginal(self, z) -> np.ndarray:
        return self.pi0 * self.density_null(z) + (1.0 - self.pi0) * self.density_nonnull_raw(z)

    def marginal_tdr(self, z) -> np.ndarray:
        """P(non-null | z) under the power-shrunk non-null density."""
        f1s = (1.0 - self.pi0) * self.density_nonnull_shrunk(z)
        denom = self.pi0 * self.density_null(z) + f1s
        with np.errstate(invalid="ignore"):
            tdr = np.where(denom > 0.0, f1s / np.maximum(denom, 1e-300), 0.0)
        return np.clip(tdr, 0.0, 1.0)

    def marginal_fdr(self, z) -> np.ndarray:
        return 1.0 - self.marginal_tdr(z)

    # -- serialization ----------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "study_id": self.study_id,
            "pi0": self.pi0,
            "null_sigma": self.null_sigma,
            "nonnull_mu": self.nonnull_mu,
            "nonnull_sigma": self.nonnull_sigma,
            "power": self.power,
            "null_mode": self.null_mode,
            "converged": self.converged,
            "loglik": self.loglik,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "TwoGroupsModel":
        return cls(
            pi0=float(d["pi0"]),
            null_sigma=float(d["null_sigma"]),
            nonnull_mu=float(d["nonnull_mu"]),
            nonnull_sigma=float(d["nonnull_sigma"]),
            power=float(d["power"]),
            null_mode=d["null_mode"],
            converged=bool(d.get("converged", True)),
            loglik=float(d.get("loglik", float("nan"))),
            study_id=d.get("study_id"),
        )


def _halfnormal_pdf(x: np.ndarray, s: float) -> np.ndarray:
    return np.sqrt(2.0 / np.pi) / s * np.exp(-0.5 * (x / s) ** 2)


def _normal_pdf(x: np.ndarray, mu: float, s: float) -> np.ndarray:
    return np.exp(_LOG_NORMAL - math.log(s) - 0.5 * ((x - mu) / s) ** 2)


def fit_normix(
    z_abs,
    null_mode: str = "theoretical",
    opts: FitOptions | None = None,
    study_id: str | None = None,
) -> TwoGroupsModel:
    """Fit the half-normal + normal mixture to folded z-scores.

    The fit is deterministic: pi0 starts at ``opts.pi0_init``, the non-null
    mean at the 90th percentile of |z|, the non-null scale at 1. The
    empirical null scale starts at the root-mean-square of |z| (the
    everything-is-null scale, consistent with the high pi0 start) and stays
    >= 1. All M-steps are exact weighted MLEs projected onto their bounds,
    so the observed log-likelihood never decreases. Non-convergence after
    ``max_iter`` returns the last iterate with ``converged=False``.
    """
    opts = opts or FitOptions()
    x = np.asarray(z_abs, dtype=np.float64).ravel()
    if x.size < opts.min_genes:
        raise ValueError(
            f"need at least {opts.min_genes} statistics to fit a two-groups model, got {x.size}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("folded z-scores must be finite")
    if np.any(x < 0.0):
        raise ValueError("folded z-scores must be non-negative")

    if null_mode not in NULL_MODES:
        raise ValueError(f"null_mode must be one of {NULL_MODES}")

    pi0 = opts.pi0_init
    s0 = 1.0 if null_mode == "theoretical" else max(1.0, math.sqrt(float(np.mean(x * x))))
    mu = max(float(np.percentile(x, 90.0)), opts.mu_min)
    s1 = 1.0
    pi0_lo, pi0_hi = opts.pi0_min, 1.0 - opts.pi0_min

    trace: list[float] = []
    converged = False
    ll_prev = -np.inf
    for _ in range(opts.max_iter):
        f0 = _halfnormal_pdf(x, s0)
        f1 = _normal_pdf(x, mu, s1)
        mix = pi0 * f0 + (1.0 - pi0) * f1
        mix = np.maximum(mix, 1e-300)
        ll = float(np.log(mix).sum())
        trace.append(ll)
        if np.isfinite(ll_prev) and abs(ll - ll_prev) <= opts.rel_tol * max(1.0, abs(ll_prev)):
            converged = True
            break
        ll_prev = ll

        w1 = (1.0 - pi0) * f1 / mix
        w0 = 1.0 - w1
        pi0 = float(np.clip(w0.mean(), pi0_lo, pi0_hi))
        w0_sum = float(w0.sum())
        if null_mode == "empirical" and w0_sum > 1e-12:
            s0 = max(1.0, math.sqrt(float(np.dot(w0, x * x)) / w0_sum))
        w1_sum = float(w1.sum())
        if w1_sum > 1e-12:
            mu = max(float(np.dot(w1, x)) / w1_sum, opts.mu_min)
            var = float(np.dot(w1, (x - mu) ** 2)) / w1_sum
            s1 = max(math.sqrt(max(var, 0.0)), opts.sigma_min)

    degenerate = pi0 <= pi0_lo + 1e-12 or pi0 >= pi0_hi - 1e-12
    model = TwoGroupsModel(
        pi0=pi0,
        null_sigma=s0,
        nonnull_mu=mu,
        nonnull_sigma=s1,
        power=0.0,
        null_mode=null_mode,
        converged=converged,
        degenerate=degenerate,
        loglik=trace[-1] if trace else float("nan"),
        study_id=study_id,
        loglik_trace=trace,
    )
    model.power = estimate_power(model)
    return model


def estimate_power(model: TwoGroupsModel) -> float:
    """Expected unshrunk tdr under the non-null density: how separated the
    two groups are. Approaches 1 for fully separated groups, 0 as pi0
    approaches 1."""
    pi0 = model.pi0
    if pi0 >= 1.0:
        return 0.0

    def integrand(t: float) -> float:
        f0 = math.sqrt(2.0 / math.pi) / model.null_sigma * math.exp(
            -0.5 * (t / model.null_sigma) ** 2
        )
        f1 = math.exp(
            _LOG_NORMAL
            - math.log(model.nonnull_sigma)
            - 0.5 * ((t - model.nonnull_mu) / model.nonnull_sigma) ** 2
        )
        denom = pi0 * f0 + (1.0 - pi0) * f1
        if denom <= 0.0:
            return 0.0
        return f1 * ((1.0 - pi0) * f1 / denom)

    upper = model.nonnull_mu + 12.0 * model.nonnull_sigma
    val, _ = quad(integrand, 0.0, upper, limit=200, points=[model.nonnull_mu])
    tail, _ = quad(integrand, upper, np.inf, limit=100)
    return float(np.clip(val + tail, 0.0, 1.0))


def fit_study_models(
    Z: StatsMatrix,
    null_mode: str = "theoretical",
    opts: FitOptions | None = None,
    threads: int | None = None,
) -> list[TwoGroupsModel]:
    """Fit one model per study column of a z-score matrix."""
    if Z.scale != "zscore":
        raise ValueError("model fitting requires z-scores; convert p-values first")
    x = np.abs(Z.values)

    def fit_one(j: int) -> TwoGroupsModel:
        return fit_normix(x[:, j], null_mode=null_mode, opts=opts, study_id=Z.study_ids[j])

    if threads is not None and threads <= 1:
        return [fit_one(j) for j in range(Z.n_studies)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fit_one, range(Z.n_studies)))


def study_log_densities(models, Z: StatsMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell log null density and log power-shrunk non-null density.

    Returns (logF0, logF1s), each (n_genes, n_studies). logF1s is -inf where
    a study's power is zero.
    """
    if Z.scale != "zscore":
        raise ValueError("densities are evaluated on z-scores")
    if len(models) != Z.n_studies:
        raise ValueError(
            f"{len(models)} models provided for {Z.n_studies} studies"
        )
    logf0 = np.empty_like(Z.values)
    logf1 = np.empty_like(Z.values)
    for j, model in enumerate(models):
        col = Z.values[:, j]
        logf0[:, j] = model.log_density_null(col)
        logf1[:, j] = model.log_density_nonnull_shrunk(col)
    return logf0, logf1


def models_to_json(models, path=None) -> str:
    payload = json.dumps([m.to_json_dict() for m in models], indent=2)
    if path is not None:
        Path(path).write_text(payload + "\n", encoding="utf-8")
    return payload


def models_from_json(source) -> list[TwoGroupsModel]:
    """Load models from a JSON string or file path."""
    text = source
    p = Path(str(source))
    if p.exists():
        text = p.read_text(encoding="utf-8")
    data = json.loads(text)
    return [TwoGroupsModel.from_json_dict(d) for d in data]
