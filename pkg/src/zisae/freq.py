"""Frequentist two-stage estimator (county random intercepts in both stages).

Continuous stage: REML linear mixed model on transformed biomass of the
nonzero plots, profiled down to a single variance ratio. Presence stage:
logistic GLMM with a Laplace approximation. Unit predictions combine the
bias-corrected back-transform with the presence probability; county MSE
comes from a parametric bootstrap.
"""
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize
from scipy.special import expit

from . import transforms
from .data import DataError, TransformSpec

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class ConvergenceError(RuntimeError):
    pass


# ----------------------------------------------------------------------------
# linear mixed model, REML
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LmmFit:
    beta0_hat: float
    beta_hat: np.ndarray
    sigma2_b0_hat: float
    tau2_hat: float
    blups: np.ndarray
    reml: float = float("nan")
    cov_beta: np.ndarray = None

    @property
    def coef(self):
        return np.concatenate([[self.beta0_hat], self.beta_hat])


class _CountyStats:
    """Per-county sufficient statistics for the one-random-intercept model."""

    def __init__(self, y, X1, county, J):
        self.n = y.shape[0]
        self.p = X1.shape[1]
        self.nj = np.bincount(county, minlength=J).astype(float)
        self.XtX = X1.T @ X1
        self.Xty = X1.T @ y
        self.yty = float(y @ y)
        self.S = np.zeros((J, self.p))
        np.add.at(self.S, county, X1)
        self.T = np.bincount(county, weights=y, minlength=J)

    def system(self, gamma):
        c = gamma / (1.0 + gamma * self.nj)
        A = self.XtX - (self.S * c[:, None]).T @ self.S
        b = self.Xty - self.S.T @ (c * self.T)
        q = self.yty - float(np.sum(c * self.T ** 2))
        return A, b, q

    def profile(self, gamma):
        """Return (REML criterion, beta, RSS) at variance ratio ``gamma``."""
        A, b, q = self.system(gamma)
        L = np.linalg.cholesky(A)
        beta = np.linalg.solve(A, b)
        rss = max(q - float(b @ beta), 0.0)
        dof = self.n - self.p
        logdetH = float(np.sum(np.log1p(gamma * self.nj)))
        logdetA = 2.0 * float(np.sum(np.log(np.diag(L))))
        if rss <= 0:
            return math.inf, beta, rss
        crit = -0.5 * (dof * math.log(rss / dof) + logdetH + logdetA)
        return crit, beta, rss

    def score(self, gamma):
        """Derivative of the REML criterion with respect to gamma."""
        A, b, q = self.system(gamma)
        beta = np.linalg.solve(A, b)
        rss = q - float(b @ beta)
        d = 1.0 / (1.0 + gamma * self.nj)
        r = (self.T - self.S @ beta) * d
        drss = -float(r @ r)
        dA = -np.trace(np.linalg.solve(A, (self.S * (d * d)[:, None]).T @ self.S))
        return -0.5 * ((self.n - self.p) * drss / rss + float(np.sum(self.nj * d)) + dA)


def _golden_max(f, lo, hi, tol=1e-12, max_iter=300):
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    trace = []
    for _ in range(max_iter):
        if b - a < tol:
            return 0.5 * (a + b), trace
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
        trace.append((a, b))
    raise ConvergenceError(f"variance-ratio search did not converge; last brackets {trace[-3:]}")


def _polish(st, gamma, lo, hi):
    """Refine an interior optimum by solving score = 0; the profile is too flat for golden search alone."""
    try:
        s_lo, s_hi = st.score(lo), st.score(hi)
    except np.linalg.LinAlgError:
        return gamma
    if not (np.isfinite(s_lo) and np.isfinite(s_hi)) or s_lo <= 0.0 or s_hi >= 0.0:
        return gamma
    return brentq(st.score, lo, hi, xtol=1e-15 * max(gamma, 1.0), rtol=4 * np.finfo(float).eps, maxiter=200)


def fit_lmm_reml(y_t, X, county, n_counties=None, fix_sigma2_zero=False):
    """REML fit of y = b0 + u_county + X beta + e with one county random intercept."""
    y = np.asarray(y_t, dtype=float)
    n = y.shape[0]
    X = np.asarray(X, dtype=float).reshape(n, -1)
    county = np.asarray(county, dtype=np.int64)
    J = int(n_counties if n_counties is not None else (county.max() + 1 if n else 0))
    X1 = np.column_stack([np.ones(n), X])
    p = X1.shape[1]
    if n <= p + 2:
        raise DataError(f"need more than {p + 2} observations for the mixed model, got {n}")
    st = _CountyStats(y, X1, county, J)
    if np.count_nonzero(st.nj) < 2 and not fix_sigma2_zero:
        raise DataError("mixed model needs at least two counties with data")
    crit0, beta0, rss0 = st.profile(0.0)
    if rss0 <= 1e-14 * max(st.yty, 1.0):
        # exact fit: nothing left for either variance component
        return LmmFit(float(beta0[0]), beta0[1:].copy(), 0.0, 0.0, np.zeros(J), math.inf)
    if fix_sigma2_zero:
        gamma = 0.0
    else:
        f = lambda u: st.profile(u / (1.0 - u))[0]
        grid = np.linspace(0.0, 1.0 - 1e-9, 65)
        vals = np.array([f(u) for u in grid])
        k = int(np.argmax(vals))
        if k == 0:
            lo, hi = 0.0, grid[1]
        else:
            lo, hi = grid[k - 1], grid[min(k + 1, len(grid) - 1)]
        u, _ = _golden_max(f, lo, hi)
        if f(0.0) >= f(u):
            u = 0.0
        gamma = u / (1.0 - u)
        if u > 0.0:
            gamma = _polish(st, gamma, lo / (1.0 - lo), hi / (1.0 - hi))
    crit, beta, rss = st.profile(gamma)
    tau2 = rss / (n - p)
    A, _, _ = st.system(gamma)
    cov = tau2 * np.linalg.inv(A)
    resid_mean = (st.T - st.S @ beta)
    with np.errstate(invalid="ignore", divide="ignore"):
        blups = np.where(st.nj > 0, gamma / (1.0 + gamma * st.nj) * resid_mean, 0.0)
    return LmmFit(float(beta[0]), beta[1:].copy(), float(gamma * tau2), float(tau2), blups, float(crit), cov)


# ----------------------------------------------------------------------------
# logistic GLMM, Laplace approximation
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GlmmFit:
    alpha0_hat: float
    alpha_hat: np.ndarray
    sigma2_a0_hat: float
    modes: np.ndarray
    se: np.ndarray = None
    ridge: float = 0.0
    loglik: float = float("nan")

    @property
    def coef(self):
        return np.concatenate([[self.alpha0_hat], self.alpha_hat])


def _county_modes(z, off, county, J, s2, tol=1e-10, max_iter=100):
    """Inner Newton for every county mode at once; returns (modes, h(mode), curvature)."""
    b = np.zeros(J)
    def h_of(bv):
        eta = off + bv[county]
        ll = np.bincount(county, z * eta - np.logaddexp(0.0, eta), J)
        return ll - 0.5 * bv * bv / s2
    h = h_of(b)
    for _ in range(max_iter):
        p = expit(off + b[county])
        g = np.bincount(county, z - p, J) - b / s2
        H = np.bincount(county, p * (1 - p), J) + 1.0 / s2
        step = g / H
        t = np.ones(J)
        for _half in range(40):
            nb = b + t * step
            nh = h_of(nb)
            bad = nh < h - 1e-12
            if not bad.any():
                break
            t = np.where(bad, t * 0.5, t)
        else:
            raise ConvergenceError("inner Newton for county modes failed after step-halving")
        b, h = nb, nh
        if np.max(np.abs(t * step)) < tol:
            break
    p = expit(off + b[county])
    H = np.bincount(county, p * (1 - p), J) + 1.0 / s2
    return b, h, H


def _laplace_loglik(params, z, V1, county, J, ridge):
    a = params[:-1]
    sd = abs(params[-1])
    off = V1 @ a
    if sd < 1e-8:
        ll = float(np.sum(z * off - np.logaddexp(0.0, off)))
        modes = np.zeros(J)
    else:
        s2 = sd * sd
        modes, h, H = _county_modes(z, off, county, J, s2)
        obs = np.bincount(county, minlength=J) > 0
        ll = float(np.sum(h[obs] - 0.5 * np.log(s2 * H[obs])))
        modes = np.where(obs, modes, 0.0)
    return ll - ridge * float(a[1:] @ a[1:]), modes


def _num_hessian(f, x, h=1e-4):
    k = x.size
    H = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            ei = np.zeros(k)
            ej = np.zeros(k)
            ei[i] = h
            ej[j] = h
            v = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h * h)
            H[i, j] = H[j, i] = v
    return H


def fit_bernoulli_glmm_laplace(z, V, county, n_counties=None, allow_single_class=False, ridge=None):
    z = np.asarray(z, dtype=float)
    n = z.shape[0]
    V = np.asarray(V, dtype=float).reshape(n, -1)
    county = np.asarray(county, dtype=np.int64)
    J = int(n_counties if n_counties is not None else county.max() + 1)
    q = V.shape[1]
    if n == 0:
        raise DataError("no records")
    if z.min() == z.max():
        if not allow_single_class:
            raise DataError("presence model needs both zero and nonzero plots")
        return GlmmFit(math.inf if z[0] == 1 else -math.inf, np.zeros(q), 0.0, np.zeros(J))
    V1 = np.column_stack([np.ones(n), V])

    def run(rdg):
        obj = lambda x: -_laplace_loglik(x, z, V1, county, J, rdg)[0]
        p0 = np.mean(z)
        x0 = np.concatenate([[math.log(p0 / (1 - p0))], np.zeros(q), [0.5]])
        bounds = [(None, None)] * (q + 1) + [(0.0, 10.0)]
        res = minimize(obj, x0, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": 500, "ftol": 1e-13, "gtol": 1e-8})
        return res, obj

    rdg = 0.0 if ridge is None else float(ridge)
    res, obj = run(rdg)
    if ridge is None and (not np.all(np.isfinite(res.x)) or np.max(np.abs(res.x[1:-1]), initial=0) > 30):
        warnings.warn("presence data look separable; refitting with an L2 penalty of 1e-4 on alpha",
                      RuntimeWarning, stacklevel=2)
        rdg = 1e-4
        res, obj = run(rdg)
    x = res.x
    ll, modes = _laplace_loglik(x, z, V1, county, J, rdg)
    sd = abs(x[-1])
    fa = lambda a: -_laplace_loglik(np.concatenate([a, [sd]]), z, V1, county, J, rdg)[0]
    try:
        cov = np.linalg.inv(_num_hessian(fa, x[:-1]))
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        se = np.full(q + 1, np.nan)
    return GlmmFit(float(x[0]), x[1:-1].copy(), float(sd * sd), modes, se, rdg, ll)


# ----------------------------------------------------------------------------
# prediction
# ----------------------------------------------------------------------------

def _check_county(county, J):
    county = np.asarray(county, dtype=np.int64)
    if county.size and (county.min() < 0 or county.max() >= J):
        raise DataError("grid contains a county unknown to the fitted model")
    return county


def predict_units(lmm, glmm, grid, transform=None):
    """Per-unit (transformed-scale mean, presence probability, product)."""
    transform = transform or TransformSpec()
    J = lmm.blups.shape[0]
    county = _check_county(grid.county, J)
    y_star = lmm.beta0_hat + lmm.blups[county] + grid.X @ lmm.beta_hat
    p_hat = expit(glmm.alpha0_hat + glmm.modes[county] + grid.V @ glmm.alpha_hat)
    prod = transforms.bias_corrected_inverse(y_star, lmm.tau2_hat, transform) * p_hat
    return y_star, p_hat, prod


def estimate_county_means(products, county, n_counties):
    county = np.asarray(county, dtype=np.int64)
    sizes = np.bincount(county, minlength=n_counties)
    if np.any(sizes == 0):
        raise DataError(f"counties without grid units: {np.flatnonzero(sizes == 0).tolist()}")
    return np.bincount(county, weights=np.asarray(products, dtype=float), minlength=n_counties) / sizes


@dataclass(frozen=True, eq=False)
class FreqFit:
    lmm: LmmFit
    glmm: GlmmFit
    transform: TransformSpec
    n_counties: int


def fit_freq(data, transform=None):
    """Fit both stages to plots with standardized predictors."""
    transform = transform or TransformSpec()
    z = data.presence
    keep = z == 1
    y_t = transforms.forward(data.biomass[keep], transform)
    lmm = fit_lmm_reml(y_t, data.X[keep], data.county[keep], data.n_counties)
    glmm = fit_bernoulli_glmm_laplace(z, data.V, data.county, data.n_counties)
    return FreqFit(lmm, glmm, transform, data.n_counties)


def county_estimates(fit, grid):
    _, _, prod = predict_units(fit.lmm, fit.glmm, grid, fit.transform)
    return estimate_county_means(prod, grid.county, fit.n_counties)


def _boot_replicate(fit, data, grid, rng):
    lmm, glmm, tr = fit.lmm, fit.glmm, fit.transform
    J = fit.n_counties
    b = rng.normal(0.0, math.sqrt(lmm.sigma2_b0_hat), J)
    a = rng.normal(0.0, math.sqrt(glmm.sigma2_a0_hat), J)
    u = rng.random(len(data))
    e = rng.normal(0.0, math.sqrt(lmm.tau2_hat), len(data))
    # truth on the grid: expected biomass given the simulated county effects
    mu_g = lmm.beta0_hat + b[grid.county] + grid.X @ lmm.beta_hat
    p_g = expit(glmm.alpha0_hat + a[grid.county] + grid.V @ glmm.alpha_hat)
    truth = estimate_county_means(transforms.bias_corrected_inverse(mu_g, lmm.tau2_hat, tr) * p_g,
                                  grid.county, J)
    p_s = expit(glmm.alpha0_hat + a[data.county] + data.V @ glmm.alpha_hat)
    z = (u < p_s).astype(float)
    y_t = lmm.beta0_hat + b[data.county] + data.X @ lmm.beta_hat + e
    keep = z == 1
    l2 = fit_lmm_reml(y_t[keep], data.X[keep], data.county[keep], J)
    g2 = fit_bernoulli_glmm_laplace(z, data.V, data.county, J, allow_single_class=True)
    _, _, prod = predict_units(l2, g2, grid, tr)
    return estimate_county_means(prod, grid.county, J), truth


def bootstrap_mse(fit, data, grid, B=500, seed=0, max_fail=0.10):
    """Parametric-bootstrap RMSE-hat per county; returns (rmse_hat, n_failed)."""
    if B < 2:
        raise ValueError("bootstrap needs B >= 2")
    seqs = np.random.SeedSequence(seed).spawn(B)
    sq = np.zeros(fit.n_counties)
    ok = failed = 0
    for ss in seqs:
        try:
            est, truth = _boot_replicate(fit, data, grid, np.random.default_rng(ss))
        except (DataError, ConvergenceError, np.linalg.LinAlgError, FloatingPointError):
            failed += 1
            continue
        sq += (est - truth) ** 2
        ok += 1
    if failed > max_fail * B:
        raise ConvergenceError(f"{failed} of {B} bootstrap refits failed")
    return np.sqrt(sq / ok), failed
