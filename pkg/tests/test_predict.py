import math

import numpy as np
import pytest

from zisae.bayes import BayesFit, ChainDiagnostics, McmcConfig, PosteriorDraws, Priors, fit_bayes
from zisae.data import DataError, GridData, ModelSpec, TransformSpec, standardize_predictors
from zisae.predict import (CountyPosterior, aggregate_county, posterior_predict_unit, posterior_predict_units,
                           predict_bayes, read_county_csv, summarize_point, unit_uniforms,
                           write_county_posterior)


def const_fit(M=3000, beta0=2.0, tau2=0.0, alpha0=math.inf, spec="B_ZI_CVI", root=2, J=2):
    d = {
        "beta0": np.full(M, beta0), "beta": np.zeros((M, 1)), "beta_county": np.zeros((M, J)),
        "sigma2_beta_county": np.ones(M), "tau2": np.full(M, tau2),
        "alpha0": np.full(M, alpha0), "alpha": np.zeros((M, 1)), "alpha_county": np.zeros((M, J)),
        "sigma2_alpha_county": np.ones(M),
    }
    return BayesFit(ModelSpec.from_name(spec), TransformSpec(root), Priors(), McmcConfig(seed=5),
                    PosteriorDraws(d, 1), ChainDiagnostics(), np.empty((0, 2)), J)


def grid(n=4, J=2, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 1))
    return GridData(rng.uniform(0, 1, (n, 2)), np.arange(n) % J, X, X.copy(), ("x",), ("x",),
                    tuple(f"c{j}" for j in range(J)))


def test_absent_branch_is_tiny():
    y = posterior_predict_unit(const_fit(alpha0=-math.inf), grid(), 0)
    assert np.all(y <= (5e-3) ** 2)
    y4 = posterior_predict_unit(const_fit(alpha0=-math.inf, root=4), grid(), 0)
    assert np.all(y4 <= (5e-3) ** 4)


def test_degenerate_draws():
    y = posterior_predict_unit(const_fit(beta0=1.5), grid(), 1)
    assert np.all(y == 2.25)


def test_noncentral_moment():
    y = posterior_predict_unit(const_fit(beta0=3.0, tau2=0.5), grid(), 0)
    se = y.std() / math.sqrt(y.size)
    assert abs(y.mean() - 9.5) < 4 * se


def test_unit_streams_batch_invariant():
    a = unit_uniforms(3, "y", np.arange(10), 6)
    b = unit_uniforms(3, "y", [2, 3, 7], 6)
    assert np.array_equal(a[[2, 3, 7]], b)
    assert not np.array_equal(unit_uniforms(3, "w", [2], 6), a[[2]])


def test_aggregate_examples():
    one = np.arange(5.0)[None]
    assert np.array_equal(aggregate_county(one, [0], 1).draws, one)
    cp = aggregate_county(np.array([[2.0] * 4, [4.0] * 4]), [0, 0], 1)
    assert np.all(cp.draws == 3.0) and cp.sd[0] == 0.0
    lo, hi = cp.interval
    assert lo[0] == hi[0] == 3.0
    with pytest.raises(DataError):
        aggregate_county(one, [1], 2)


def test_point_and_quantiles():
    assert summarize_point(CountyPosterior(np.array([[1.0, 2.0, 3.0]])))[0] == 2.0
    assert summarize_point(CountyPosterior(np.full((1, 7), 0.3)))[0] == pytest.approx(0.3, abs=0)
    cp = CountyPosterior(np.array([[5.0, 1.0, 4.0, 2.0, 3.0]]))
    # type 8: h = n p + (p + 1) / 3, linear between order statistics, clamped at the ends
    q = cp.quantiles((0.025, 0.25, 0.5, 0.975))[:, 0]
    assert q[0] == 1.0 and q[3] == 5.0 and q[2] == 3.0
    assert q[1] == pytest.approx(1 + 2 / 3, abs=1e-15)


def test_mean_summation_accuracy():
    x = np.random.default_rng(1).lognormal(3, 1, 3000)
    assert CountyPosterior(x[None]).mean[0] == pytest.approx(math.fsum(x) / 3000, rel=1e-12)


def test_monotone_and_permutation():
    rng = np.random.default_rng(2)
    y = rng.random((6, 50))
    c = np.array([0, 1, 0, 1, 0, 1])
    a = aggregate_county(y, c, 2).draws
    assert np.all(aggregate_county(y + 0.1, c, 2).draws >= a)
    p = rng.permutation(6)
    assert np.allclose(aggregate_county(y[p], c[p], 2).draws, a, atol=1e-15)


@pytest.fixture(scope="module")
def svi_fit(small_sample):
    s, stats = standardize_predictors(small_sample)
    fit, _ = fit_bayes("B_ZI_CVI_SVI_CRV", s, config=McmcConfig(chains=2, iterations=200, burn_in=60, thin=2,
                                                                  seed=3))
    return fit, stats


def test_batched_equals_in_memory(svi_fit, small_region):
    fit, stats = svi_fit
    g, _ = standardize_predictors(small_region.grid.subset(np.arange(0, 3000, 7)), stats)
    a, ua = predict_bayes(fit, g, seed=1, batch=10_000, unit_summary=True)
    b, ub = predict_bayes(fit, g, seed=1, batch=37, unit_summary=True)
    assert np.array_equal(a.draws, b.draws)
    assert np.array_equal(ua.biomass, ub.biomass)
    # and both equal a direct in-memory aggregation over all units
    ys = np.empty((len(g), fit.M))
    for j in range(g.n_counties):
        u = np.flatnonzero(g.county == j)
        ys[u] = posterior_predict_units(fit, g, u, 1).y
    assert np.allclose(aggregate_county(ys, g.county, g.n_counties).draws, a.draws, rtol=1e-13)
    assert np.all(a.draws >= 0)
    lo, hi = a.interval
    assert np.all(lo <= hi)


def test_unobserved_county_and_csv(svi_fit, small_region, tmp_path):
    fit, stats = svi_fit
    g, _ = standardize_predictors(small_region.grid.subset(np.arange(0, 3000, 11)), stats)
    cp, _ = predict_bayes(fit, g, seed=2, counties=[1])
    assert np.isnan(cp.draws[0]).all() and np.isfinite(cp.draws[1]).all()
    full, _ = predict_bayes(fit, g, seed=2)
    write_county_posterior(tmp_path / "c.csv", full)
    back = read_county_csv(tmp_path / "c.csv")
    assert back["county"] == list(g.county_labels)
    assert np.array_equal(back["estimate"], full.mean)
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "county,estimate,sd,q025,q975,M"
