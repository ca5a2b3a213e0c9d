"""Independent oracles for every conjugate block, on one fixed 50-plot instance.

The analytic conditionals are rebuilt here from a dense design matrix and
scalar sums, without touching the sampler's assembly code, then each
sampler draw routine is called repeatedly from the same frozen state and
compared by a Kolmogorov-Smirnov test.
"""
import copy

import numpy as np
from scipy import stats

from zisae.bayes.bernoulli import BernoulliStage
from zisae.bayes.gaussian import GaussianStage
from zisae.bayes.priors import Priors

N_DRAWS = 10_000
PRIORS = Priors()


def instance(seed=123):
    rng = np.random.default_rng(seed)
    n, J, p = 50, 5, 2
    county = np.repeat(np.arange(J), n // J)
    X = rng.standard_normal((n, p))
    coords = rng.uniform(0, 10, (n, 2))
    y = 3 + X @ np.array([0.5, -0.3]) + rng.normal(0, 0.4, J)[county] + rng.standard_normal(n) * 0.7
    return y, X, county, J, coords


def gaussian_stage(cvc=True, crv=True, svi=True, seed=123):
    y, X, county, J, coords = instance(seed)
    stage = GaussianStage(y, X, county, J, coords, cvi=True, cvc=cvc, crv=crv, svi=svi, priors=PRIORS, m=5)
    st = stage.initial_state(np.random.default_rng(1))
    rng = np.random.default_rng(2)
    # move away from the start so the frozen state is a typical one
    for _ in range(30):
        stage.step(st, rng)
    return stage, st


def dense_design(stage):
    n, k0, c, J = stage.n, stage.k0, stage.c, stage.J
    D = np.zeros((n, k0 + J * c))
    D[:, :k0] = stage.Xt
    for j in range(J):
        rows = stage.county == j
        for a in range(c):
            D[rows, k0 + j * c + a] = stage.Xt[rows, a]
    return D


def coefficient_oracle(stage, st):
    D = dense_design(stage)
    w = 1.0 / st.tau2[stage.county]
    prior = np.full(D.shape[1], 1.0 / PRIORS.var_fixed)
    per = np.concatenate([[1.0 / st.s2_int], 1.0 / st.s2_slopes])[: stage.c]
    prior[stage.k0:] = np.tile(per, stage.J)
    Q = D.T @ (D * w[:, None]) + np.diag(prior)
    r = stage.y - (st.w if stage.svi else 0.0)
    cov = np.linalg.inv(Q)
    return cov @ (D.T @ (w * r)), cov


def _repeat(stage, st, fn, pick, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(N_DRAWS):
        s = copy.deepcopy(st)
        fn(s, rng)
        out.append(pick(s))
    return np.array(out)


def _projection_ks(draws, mean, cov, idx, seed):
    u = np.random.default_rng(seed).standard_normal(len(idx))
    x = draws[:, idx] @ u
    m, sd = mean[idx] @ u, np.sqrt(u @ cov[np.ix_(idx, idx)] @ u)
    return stats.kstest(x, stats.norm(m, sd).cdf).pvalue


def ks_pvalues():
    """Return {block name: KS p-value} for every conjugate block."""
    out = {}
    stage, st = gaussian_stage()
    mean, cov = coefficient_oracle(stage, st)
    th = _repeat(stage, st, stage.draw_coefficients, lambda s: s.theta.copy(), 10)
    out["fixed effects"] = _projection_ks(th, mean, cov, np.arange(stage.k0), 1)
    out["county effects"] = _projection_ks(th, mean, cov, np.arange(stage.k0, stage.K), 2)

    a, b = PRIORS.ig_shape, PRIORS.ig_scale
    C = st.theta[stage.k0:].reshape(stage.J, stage.c)
    d = _repeat(stage, st, stage.draw_county_variances, lambda s: np.r_[s.s2_int, s.s2_slopes], 11)
    out["county intercept variance"] = stats.kstest(
        d[:, 0], stats.invgamma(a + stage.J / 2, scale=b + 0.5 * np.sum(C[:, 0] ** 2)).cdf).pvalue
    for k in range(stage.p):
        out[f"slope variance {k}"] = stats.kstest(
            d[:, 1 + k], stats.invgamma(a + stage.J / 2, scale=b + 0.5 * np.sum(C[:, 1 + k] ** 2)).cdf).pvalue

    D = dense_design(stage)
    e = stage.y - D @ st.theta - st.w
    t = _repeat(stage, st, stage.draw_tau2, lambda s: s.tau2.copy(), 12)
    for j in range(stage.J):
        m = stage.county == j
        out[f"county residual variance {j}"] = stats.kstest(
            t[:, j], stats.invgamma(a + m.sum() / 2, scale=b + 0.5 * np.sum(e[m] ** 2)).cdf).pvalue

    pooled, pst = gaussian_stage(cvc=False, crv=False, svi=False)
    e = pooled.y - dense_design(pooled) @ pst.theta
    t = _repeat(pooled, pst, pooled.draw_tau2, lambda s: s.tau2[0], 13)
    out["residual variance"] = stats.kstest(
        t, stats.invgamma(a + pooled.n / 2, scale=b + 0.5 * np.sum(e ** 2)).cdf).pvalue

    # sigma2_w against a dense-precision oracle: NNGP quadratic form w' (I-B)' F^-1 (I-B) w
    n = stage.n
    A = np.eye(n)
    for i in range(n):
        for k, j in enumerate(stage.graph.neighbors[i, : stage.graph.counts[i]]):
            A[i, j] -= st.B[i, k]
    q = float(st.w @ A.T @ np.diag(1.0 / st.F_corr) @ A @ st.w)
    s = _repeat(stage, st, stage.draw_sigma2_w, lambda s: s.sigma2_w, 14)
    out["spatial variance"] = stats.kstest(s, stats.invgamma(a + n / 2, scale=b + q / 2).cdf).pvalue

    rng = np.random.default_rng(5)
    y, X, county, J, _ = instance()
    z = (rng.random(len(y)) < 0.5).astype(float)
    bern = BernoulliStage(z, X, county, J, priors=PRIORS)
    bst = bern.initial_state(np.random.default_rng(6))
    bst.county = rng.normal(0, 0.8, J)
    s = _repeat(bern, bst, bern.draw_sigma2, lambda s: s.s2, 15)
    out["presence county variance"] = stats.kstest(
        s, stats.invgamma(a + J / 2, scale=b + 0.5 * np.sum(bst.county ** 2)).cdf).pvalue
    return out
