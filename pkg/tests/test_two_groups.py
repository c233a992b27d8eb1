import numpy as np
import pytest
from scipy.integrate import quad

from screenrep.data_io import StatsMatrix
from screenrep.two_groups import (
    FitOptions,
    TwoGroupsModel,
    estimate_power,
    fit_normix,
    fit_study_models,
    models_from_json,
    models_to_json,
    study_log_densities,
)


def make_model(pi0=0.9, null_sigma=1.0, mu=3.0, sigma=1.0, power=1.0, null_mode="theoretical"):
    return TwoGroupsModel(
        pi0=pi0,
        null_sigma=null_sigma,
        nonnull_mu=mu,
        nonnull_sigma=sigma,
        power=power,
        null_mode=null_mode,
    )


def sample_mixture(rng, n, pi0, mu=3.0, sigma=1.0):
    nonnull = rng.random(n) < (1 - pi0)
    z = np.where(
        nonnull,
        np.abs(rng.normal(mu, sigma, size=n)),
        np.abs(rng.normal(0.0, 1.0, size=n)),
    )
    return z


def test_half_normal_density_at_zero():
    model = make_model()
    assert model.density_null(0.0) == pytest.approx(0.7978845608028654, abs=1e-10)


def test_marginal_normalization():
    # the non-null normal keeps its below-zero mass un-renormalized, so the
    # folded marginal integrates to 1 - (1 - pi0) * Phi(-mu/sigma) exactly
    from scipy.stats import norm

    for mu, sigma, pi0 in [(3.0, 1.0, 0.9), (0.5, 2.0, 0.5), (1.0, 3.0, 0.2)]:
        model = make_model(pi0=pi0, mu=mu, sigma=sigma)
        total, _ = quad(lambda t: float(model.density_marginal(t)), 0.0, np.inf, limit=200)
        expected = 1.0 - (1.0 - pi0) * norm.cdf(-mu / sigma)
        assert total == pytest.approx(expected, abs=1e-9)
    # and is 1 to high accuracy whenever the non-null mass respects the support
    separated = make_model(pi0=0.8, mu=6.0, sigma=1.0)
    total, _ = quad(lambda t: float(separated.density_marginal(t)), 0.0, np.inf, limit=200)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_marginal_reduces_to_null_when_pi0_one():
    model = make_model(pi0=1.0)
    z = np.linspace(0, 6, 50)
    np.testing.assert_allclose(model.density_marginal(z), model.density_null(z), rtol=1e-12)


def test_shrunk_density_scaling():
    z = np.linspace(0, 6, 25)
    raw = make_model(power=1.0)
    np.testing.assert_allclose(
        raw.density_nonnull_shrunk(z), raw.density_nonnull_raw(z), rtol=1e-12
    )
    half = make_model(power=0.5)
    np.testing.assert_allclose(
        half.density_nonnull_shrunk(3.0), 0.5 * half.density_nonnull_raw(3.0), rtol=1e-12
    )
    zero = make_model(power=0.0)
    assert np.all(zero.density_nonnull_shrunk(z) == 0.0)
    assert np.all(zero.marginal_tdr(z) == 0.0)


def test_tdr_limits():
    z = np.linspace(0, 6, 25)
    assert np.all(make_model(pi0=1.0).marginal_tdr(z) == 0.0)
    all_nonnull = make_model(pi0=0.0, power=1.0)
    np.testing.assert_allclose(all_nonnull.marginal_tdr(z), 1.0, rtol=1e-12)
    # where the shrunk non-null density crosses the null density, tdr = 1/2
    from scipy.optimize import brentq

    model = make_model(pi0=0.5, power=1.0, mu=2.0, sigma=1.0)
    zstar = brentq(
        lambda t: float(model.density_null(t) - model.density_nonnull_shrunk(t)), 0.1, 4.0
    )
    assert model.marginal_tdr(zstar) == pytest.approx(0.5, abs=1e-9)
    assert model.marginal_tdr(zstar) + model.marginal_fdr(zstar) == pytest.approx(1.0)


def test_power_limits():
    assert estimate_power(make_model(pi0=1.0)) == 0.0
    separated = make_model(pi0=0.5, mu=30.0, sigma=0.5)
    assert estimate_power(separated) == pytest.approx(1.0, abs=1e-6)


def test_power_matches_direct_quadrature():
    # independent oracle: integrate f1 * tdr_raw on a dense grid
    for pi0, mu, sigma in [(0.9, 3.0, 1.0), (0.5, 1.5, 2.0), (0.2, 0.5, 0.7)]:
        model = make_model(pi0=pi0, mu=mu, sigma=sigma)
        grid = np.linspace(0.0, mu + 14.0 * sigma, 400001)
        f0 = model.density_null(grid)
        f1 = model.density_nonnull_raw(grid)
        tdr = (1 - pi0) * f1 / (pi0 * f0 + (1 - pi0) * f1)
        expected = np.trapezoid(f1 * tdr, grid)
        assert estimate_power(model) == pytest.approx(float(expected), abs=1e-6)


def test_fit_refuses_tiny_samples():
    with pytest.raises(ValueError, match="at least 50"):
        fit_normix(np.abs(np.random.default_rng(0).normal(size=20)))


def test_fit_pure_null(rng):
    z = np.abs(rng.normal(0.0, 1.0, size=5000))
    model = fit_normix(z)
    assert model.pi0 >= 0.95
    assert model.null_sigma == 1.0


def test_fit_recovers_pi0(rng):
    errs = []
    for seed in range(20):
        local = np.random.default_rng(seed)
        z = sample_mixture(local, 5000, pi0=0.8, mu=3.0, sigma=1.0)
        model = fit_normix(z)
        errs.append(abs(model.pi0 - 0.8))
        assert model.converged
    assert np.median(errs) <= 0.05


def test_fit_dense_effects_theoretical_vs_empirical(rng):
    # 60% non-null drawn from folded N(+-3, sd 3): the free-scale null
    # absorbs non-null mass and inflates pi0
    pi0_t, pi0_e = [], []
    for seed in range(5):
        local = np.random.default_rng(100 + seed)
        nonnull = local.random(5000) < 0.6
        sign = np.where(local.random(5000) < 0.5, 1.0, -1.0)
        z = np.where(
            nonnull,
            np.abs(local.normal(3.0 * sign, 3.0)),
            np.abs(local.normal(0.0, 1.0, size=5000)),
        )
        pi0_t.append(fit_normix(z, null_mode="theoretical").pi0)
        pi0_e.append(fit_normix(z, null_mode="empirical").pi0)
    assert np.median(pi0_t) <= 0.7
    assert np.median(pi0_e) >= np.median(pi0_t) + 0.05


def test_em_loglik_monotone(rng):
    z = sample_mixture(rng, 2000, pi0=0.85)
    model = fit_normix(z)
    trace = np.asarray(model.loglik_trace)
    assert trace.size >= 2
    assert np.all(np.diff(trace) >= -1e-10)


def test_fit_deterministic(rng):
    z = sample_mixture(rng, 1000, pi0=0.9)
    a = fit_normix(z)
    b = fit_normix(z)
    assert a.pi0 == b.pi0
    assert a.nonnull_mu == b.nonnull_mu
    assert a.power == b.power


def test_empirical_null_sigma_floor(rng):
    z = np.abs(rng.normal(0.0, 0.6, size=3000))  # underdispersed null
    model = fit_normix(z, null_mode="empirical")
    assert model.null_sigma >= 1.0


def test_fit_study_models_and_serialization(rng, tmp_path):
    values = rng.normal(size=(300, 3))
    mat = StatsMatrix(
        tuple(f"g{i}" for i in range(300)), ("a", "b", "c"), values, "zscore"
    )
    models = fit_study_models(mat, threads=2)
    assert [m.study_id for m in models] == ["a", "b", "c"]
    path = tmp_path / "models.json"
    models_to_json(models, path)
    back = models_from_json(path)
    assert back[1].pi0 == pytest.approx(models[1].pi0)
    assert back[2].power == pytest.approx(models[2].power)

    logF0, logF1 = study_log_densities(models, mat)
    assert logF0.shape == values.shape
    np.testing.assert_allclose(
        np.exp(logF0[:, 0]), models[0].density_null(values[:, 0]), rtol=1e-12
    )


def test_fit_options_bounds(rng):
    z = sample_mixture(rng, 500, pi0=0.9)
    model = fit_normix(z, opts=FitOptions(max_iter=3))
    assert not model.converged
    assert 1e-4 <= model.pi0 <= 1 - 1e-4
