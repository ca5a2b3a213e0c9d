import copy

import numpy as np
import pytest
from scipy import stats

import conjugate_oracle as oracle
from zisae.bayes import (ConfigError, McmcConfig, PosteriorDraws, Priors, fit_bayes, fit_bernoulli_stage,
                         psrf, run_stage)
from zisae.bayes.conditionals import inverse_gamma
from zisae.bayes.gaussian import GaussianStage
from zisae.data import DataError, standardize_predictors


def test_conjugate_blocks_ks():
    for name, p in oracle.ks_pvalues().items():
        assert p > 0.01, name


def test_slope_variances_drawn_independently():
    d = np.array([inverse_gamma(3.0, np.array([1.0, 1.0]), np.random.default_rng(s)) for s in range(2000)])
    assert abs(np.corrcoef(d.T)[0, 1]) < 0.1


def test_translation_move_is_exact():
    stage, st = oracle.gaussian_stage()
    F = st.F_corr * st.sigma2_w
    n = stage.n
    A = np.eye(n)
    for i in range(n):
        for k, j in enumerate(stage.graph.neighbors[i, : stage.graph.counts[i]]):
            A[i, j] -= st.B[i, k]
    # density of delta along (beta0 + delta, w - delta): Gaussian in delta
    Qw = A.T @ np.diag(1 / F) @ A
    one = np.ones(n)
    prec = one @ Qw @ one + 1 / oracle.PRIORS.var_fixed
    mean = (one @ Qw @ st.w - st.theta[0] / oracle.PRIORS.var_fixed) / prec
    rng = np.random.default_rng(3)
    d = []
    for _ in range(5000):
        s = copy.deepcopy(st)
        stage.translate_intercept(s, rng)
        d.append(s.theta[0] - st.theta[0])
    assert stats.kstest(d, stats.norm(mean, prec ** -0.5).cdf).pvalue > 0.01


def test_normal_normal_reduction():
    # no county effects, known residual variance: the chain targets the textbook posterior
    rng = np.random.default_rng(0)
    n = 40
    X = rng.standard_normal((n, 2))
    y = 1 + X @ [0.5, -1.0] + rng.standard_normal(n) * 0.5
    stage = GaussianStage(y, X, np.zeros(n, int), 1, cvi=False, fixed={"tau2": 0.25}, priors=Priors(var_fixed=4.0))
    draws, _ = run_stage(stage, McmcConfig(chains=2, iterations=4000, burn_in=100, thin=1, seed=1))
    Xt = np.column_stack([np.ones(n), X])
    Q = Xt.T @ Xt / 0.25 + np.eye(3) / 4.0
    cov = np.linalg.inv(Q)
    mean = cov @ Xt.T @ y / 0.25
    got = np.column_stack([draws["beta0"], draws["beta"]])
    se = np.sqrt(np.diag(cov) / got.shape[0])
    assert np.all(np.abs(got.mean(0) - mean) < 5 * se)
    assert np.allclose(np.cov(got.T), cov, rtol=0.1, atol=1e-4)


def test_psrf_cases():
    rng = np.random.default_rng(0)
    same = rng.standard_normal((3, 1000))
    assert psrf(same) < 1.01
    assert psrf(np.ones((3, 50))) == 1.0
    apart = same + np.arange(3)[:, None] * 5
    assert psrf(apart) > 2
    trend = np.tile(np.linspace(0, 10, 400), (3, 1)) + rng.standard_normal((3, 400)) * 0.1
    assert psrf(trend) > 1.5
    with pytest.raises(ValueError):
        psrf(same[:1])


def test_m_contract():
    cfg = McmcConfig()
    assert (cfg.chains, cfg.retained_per_chain, cfg.M) == (3, 1000, 3000)
    small = McmcConfig(chains=3, iterations=120, burn_in=20, thin=5)
    assert small.M == 60


def test_config_errors():
    with pytest.raises(ConfigError):
        McmcConfig(chains=2, chain_seeds=(4, 4))
    with pytest.raises(ConfigError):
        McmcConfig(iterations=10, burn_in=10)
    with pytest.raises(ConfigError):
        McmcConfig(iterations=10, burn_in=5, thin=10)
    with pytest.raises(ConfigError):
        Priors(phi_lower=3, phi_upper=1)


def test_draws_csv_round_trip(tmp_path):
    d = PosteriorDraws({"a": np.arange(6.0), "b": np.arange(12.0).reshape(6, 2),
                        "c": np.arange(24.0).reshape(6, 2, 2)}, 2)
    d.to_csv(tmp_path / "d.csv")
    back = PosteriorDraws.from_csv(tmp_path / "d.csv")
    assert back.n_chains == 2
    for k in "abc":
        assert np.array_equal(back[k], d[k])


def test_bernoulli_stage_errors():
    V = np.zeros((4, 1))
    c = np.zeros(4, int)
    with pytest.raises(DataError):
        fit_bernoulli_stage(np.ones(4), V, c, 1)
    with pytest.raises(DataError):
        fit_bernoulli_stage(np.array([0, 1, 2, 1]), V, c, 1)
    with pytest.raises(DataError):
        fit_bernoulli_stage(np.empty(0), np.empty((0, 1)), np.empty(0, int), 1)


@pytest.fixture(scope="module")
def std_sample(small_sample):
    return standardize_predictors(small_sample)[0]


def test_fit_shapes_and_determinism(std_sample):
    cfg = McmcConfig(chains=2, iterations=300, burn_in=100, thin=2, seed=4)
    a, bern = fit_bayes("B_ZI_CVC_SVI_CRV", std_sample, config=cfg)
    b, _ = fit_bayes("B_ZI_CVC_SVI_CRV", std_sample, config=cfg)
    assert a.M == 200
    J = std_sample.n_counties
    nz = int(std_sample.presence.sum())
    assert a.draws["alpha_county"].shape == (200, J)
    assert a.draws["beta_county_slopes"].shape == (200, J, 3)
    assert a.draws["tau2_county"].shape == (200, J)
    assert a.draws["w"].shape == (200, nz)
    for k in a.draws.names:
        assert np.array_equal(a.draws[k], b.draws[k]), k
    # the presence stage is reused verbatim when passed in
    c, _ = fit_bayes("B_ZI_CVI", std_sample, config=cfg, bernoulli=bern)
    assert np.array_equal(c.draws["alpha0"], a.draws["alpha0"])
    assert "rhat" not in a.draws and np.isfinite(a.diagnostics.max_rhat)


def test_single_stage_blocks(std_sample):
    cfg = McmcConfig(chains=2, iterations=200, burn_in=50, thin=5, seed=1)
    fit, bern = fit_bayes("B_CVC", std_sample, config=cfg)
    assert bern is None
    assert "alpha0" not in fit.draws and "tau2" in fit.draws
    assert fit.gauss_coords.shape[0] == len(std_sample)


def test_chain_seeds_differ(std_sample):
    cfg = McmcConfig(chains=2, iterations=200, burn_in=50, thin=5, chain_seeds=(5, 6))
    fit, _ = fit_bayes("B_CVI", std_sample, config=cfg)
    ch = fit.draws.by_chain("beta0")
    assert not np.array_equal(ch[0], ch[1])


def test_successive_conditional_matches_prior():
    # alternate (parameters | y) and (y | parameters); the parameter marginals must stay at the prior
    y, X, county, J, coords = oracle.instance()
    stage = GaussianStage(y, X, county, J, coords, cvi=True, svi=True, priors=Priors(var_fixed=4.0), m=5)
    rng = np.random.default_rng(7)
    st = stage.initial_state(rng)
    N = 20_000
    rec = np.empty((N, 3))
    for s in range(N):
        stage.step(st, rng)
        if s < 2000 and s % 50 == 49:
            stage.adapt(st)
        stage.y = stage.fitted(st.theta) + st.w + rng.standard_normal(stage.n) * np.sqrt(st.tau2[stage.county])
        rec[s] = st.s2_int, st.tau2[0], st.phi
    rec = rec[2000:]
    ig = stats.invgamma(2, scale=1)
    for k, dist in enumerate([ig, ig, stats.uniform(0.003, 2.997)]):
        u = dist.cdf(rec[:, k])
        for q in (0.1, 0.25, 0.5, 0.75, 0.9):
            assert abs(np.mean(u <= q) - q) < 0.05, (k, q)


def test_bernoulli_balanced_intercept_only():
    n = 2000
    z = np.tile([0, 1], n // 2)
    d, _ = fit_bernoulli_stage(z, np.empty((n, 0)), np.zeros(n, int), 1,
                               config=McmcConfig(chains=2, iterations=1500, burn_in=500, thin=2, seed=3))
    assert abs(d["alpha0"].mean() + d["alpha_county"][:, 0].mean()) < 0.1


def test_all_present_county_shifts_up():
    rng = np.random.default_rng(8)
    n, J = 600, 4
    county = np.repeat(np.arange(J), n // J)
    v = rng.standard_normal((n, 1))
    z = (rng.random(n) < 0.5).astype(int)
    z[county == 2] = 1
    d, _ = fit_bernoulli_stage(z, v, county, J, config=McmcConfig(chains=2, iterations=1500, burn_in=500, thin=2))
    a = d["alpha_county"]
    assert np.isfinite(a).all()
    assert a[:, 2].mean() > 0 and np.mean(a[:, 2] > 0) > 0.9


def test_separation_warns_and_samples():
    v = np.linspace(-1, 1, 40)[:, None]
    z = (v[:, 0] > 0).astype(int)
    with pytest.warns(RuntimeWarning, match="separable"):
        d, _ = fit_bernoulli_stage(z, v, np.zeros(40, int), 1,
                                   config=McmcConfig(chains=2, iterations=300, burn_in=100, thin=2))
    assert np.isfinite(d["alpha"]).all() and d["alpha"].mean() > 0


def test_cvc_identical_counties_shrink():
    rng = np.random.default_rng(9)
    J, m = 3, 30
    X1 = rng.standard_normal((m, 2))
    y1 = 1 + X1 @ [0.5, -0.5] + 0.3 * rng.standard_normal(m)
    X, y = np.tile(X1, (J, 1)), np.tile(y1, J)
    county = np.repeat(np.arange(J), m)
    stage = GaussianStage(y, X, county, J, cvc=True)
    d, _ = run_stage(stage, McmcConfig(chains=2, iterations=3000, burn_in=500, thin=2, seed=2))
    slopes = d["beta_county_slopes"].mean(0)
    assert np.all(np.abs(slopes) < 0.05)
    assert np.all(np.abs(d["beta"].mean(0) - [0.5, -0.5]) < 0.15)
    # with nothing to separate the counties the slope variances stay near their prior scale
    assert np.all(d["sigma2_beta_slopes"].mean(0) < 2.0)


@pytest.mark.slow
def test_bernoulli_recovery():
    hits = np.zeros(2, int)
    for r in range(20):
        rng = np.random.default_rng(100 + r)
        n, J = 4000, 20
        county = rng.integers(0, J, n)
        V = rng.standard_normal((n, 2))
        eta = 0.3 + V @ [1.0, -1.0] + rng.normal(0, 0.5, J)[county]
        z = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(int)
        d, _ = fit_bernoulli_stage(z, V, county, J, config=McmcConfig(chains=2, iterations=1500, burn_in=500,
                                                                       thin=2, seed=r))
        lo, hi = np.quantile(d["alpha"], [0.025, 0.975], axis=0, method="median_unbiased")
        hits += (lo <= [1.0, -1.0]) & ([1.0, -1.0] <= hi)
    assert np.all(hits >= 17), hits
