"""Metropolis-within-Gibbs sampler for the presence (logit) stage.

    logit p_i = alpha0 + alpha_county[j] + v_i . alpha

(alpha0, alpha) move jointly by an adaptive random walk whose starting
covariance comes from the IRLS Hessian. County intercepts move one per
county in a single vectorized MH step. An exact interweaving step redraws
alpha0 given the centred county levels alpha0 + alpha_county, which
removes most of the intercept / county-mean correlation.
"""
import math
from dataclasses import dataclass

import numpy as np

from .conditionals import inverse_gamma
from .priors import Priors


def _log1pexp(x):
    return np.logaddexp(0.0, x)


def bernoulli_loglik(z, eta):
    return z * eta - _log1pexp(eta)


def irls(V1, z, prior_prec, offset=None, iters=50, tol=1e-10):
    """Posterior mode of a ridge-penalized logistic regression and its Hessian."""
    n, d = V1.shape
    off = np.zeros(n) if offset is None else offset
    b = np.zeros(d)
    P = np.eye(d) * prior_prec
    for _ in range(iters):
        eta = off + V1 @ b
        p = 1.0 / (1.0 + np.exp(-eta))
        W = p * (1 - p)
        H = V1.T @ (V1 * W[:, None]) + P
        g = V1.T @ (z - p) - P @ b
        step = np.linalg.solve(H, g)
        b = b + step
        if np.max(np.abs(step)) < tol:
            break
    eta = off + V1 @ b
    p = 1.0 / (1.0 + np.exp(-eta))
    H = V1.T @ (V1 * (p * (1 - p))[:, None]) + P
    return b, H


@dataclass
class BernState:
    a: np.ndarray            # (alpha0, alpha)
    county: np.ndarray
    s2: float
    prop_chol: np.ndarray
    scale: float
    county_sd: np.ndarray
    hist: list
    tries: int = 0
    accepts: int = 0
    c_tries: int = 0
    c_accepts: np.ndarray = None


class BernoulliStage:
    stream = "bernoulli"

    def __init__(self, z, V, county, n_counties, *, priors=None, fixed=None):
        self.z = np.asarray(z, dtype=float)
        n = self.z.shape[0]
        if n == 0:
            raise ValueError("presence stage received an empty dataset")
        V = np.asarray(V, dtype=float).reshape(n, -1)
        self.county = np.asarray(county, dtype=np.int64)
        self.J = int(n_counties)
        self.priors = priors or Priors()
        self.fixed = dict(fixed or {})
        self.n, self.q = n, V.shape[1]
        self.V1 = np.column_stack([np.ones(n), V])
        self.d = self.q + 1
        self.nj = np.bincount(self.county, minlength=self.J)
        self.observed = self.nj > 0

    def loglik_rows(self, a, cty):
        eta = self.V1 @ a + cty[self.county]
        return bernoulli_loglik(self.z, eta)

    def initial_state(self, rng, chain=0, proposal_sd=None):
        b, H = irls(self.V1, self.z, 1e-2)
        L = np.linalg.cholesky(np.linalg.inv(H))
        a = b + L @ rng.standard_normal(self.d) * 0.5
        s2 = float(self.fixed.get("sigma2", rng.uniform(0.2, 1.0)))
        cty = rng.normal(0.0, 0.1, self.J)
        sd = 2.4 / np.sqrt(0.25 * self.nj + 1.0 / s2)
        return BernState(a=a, county=cty, s2=s2, prop_chol=L, scale=2.38 / math.sqrt(self.d),
                         county_sd=sd, hist=[], c_accepts=np.zeros(self.J))

    def draw_fixed(self, st, rng):
        vf = self.priors.var_fixed
        step = st.prop_chol @ rng.standard_normal(self.d) * st.scale
        logu = math.log(rng.random() + 1e-300)
        prop = st.a + step
        off = st.county[self.county]
        cur = np.sum(bernoulli_loglik(self.z, self.V1 @ st.a + off)) - 0.5 * (st.a @ st.a) / vf
        new = np.sum(bernoulli_loglik(self.z, self.V1 @ prop + off)) - 0.5 * (prop @ prop) / vf
        st.tries += 1
        if logu < new - cur:
            st.a = prop
            st.accepts += 1

    def draw_county(self, st, rng):
        J = self.J
        step = rng.standard_normal(J) * st.county_sd
        logu = np.log(rng.random(J) + 1e-300)
        base = self.V1 @ st.a
        prop = st.county + step
        lc = np.bincount(self.county, bernoulli_loglik(self.z, base + st.county[self.county]), J)
        lp = np.bincount(self.county, bernoulli_loglik(self.z, base + prop[self.county]), J)
        lc -= 0.5 * st.county ** 2 / st.s2
        lp -= 0.5 * prop ** 2 / st.s2
        acc = (logu < lp - lc) & self.observed
        st.county = np.where(acc, prop, st.county)
        # counties without plots: their conditional is the prior
        free = ~self.observed
        if free.any():
            st.county[free] = step[free] / st.county_sd[free] * math.sqrt(st.s2)
        st.c_tries += 1
        st.c_accepts += acc

    def interweave(self, st, rng):
        vf = self.priors.var_fixed
        c = st.a[0] + st.county
        prec = 1.0 / vf + self.J / st.s2
        mean = (c.sum() / st.s2) / prec
        a0 = mean + rng.standard_normal() / math.sqrt(prec)
        st.a[0] = a0
        st.county = c - a0

    def sigma2_params(self, st):
        return self.priors.ig_shape + 0.5 * self.J, self.priors.ig_scale + 0.5 * float(st.county @ st.county)

    def draw_sigma2(self, st, rng):
        if "sigma2" in self.fixed:
            st.s2 = float(self.fixed["sigma2"])
            return
        shape, scale = self.sigma2_params(st)
        st.s2 = float(inverse_gamma(shape, scale, rng))

    def step(self, st, rng):
        self.draw_fixed(st, rng)
        self.draw_county(st, rng)
        self.interweave(st, rng)
        self.draw_sigma2(st, rng)
        if st.hist is not None:
            st.hist.append(st.a.copy())

    def adapt(self, st):
        if st.tries:
            rate = st.accepts / st.tries
            st.scale *= math.exp(rate - 0.234)
        if st.c_tries:
            rate = st.c_accepts / st.c_tries
            st.county_sd *= np.exp(rate - 0.44)
        if st.hist is not None and len(st.hist) >= 200:
            H = np.array(st.hist[len(st.hist) // 2:])
            C = np.cov(H.T).reshape(self.d, self.d) + np.eye(self.d) * 1e-8
            try:
                st.prop_chol = np.linalg.cholesky(C)
                st.scale = min(st.scale, 10.0)
            except np.linalg.LinAlgError:
                pass
        st.tries = st.accepts = st.c_tries = 0
        st.c_accepts = np.zeros(self.J)

    def start_sampling(self, st):
        st.tries = st.accepts = st.c_tries = 0
        st.c_accepts = np.zeros(self.J)
        st.hist = None

    def acceptance(self, st):
        out = {}
        if st.tries:
            out["alpha"] = st.accepts / st.tries
        if st.c_tries and self.observed.any():
            out["alpha_county"] = float(np.mean(st.c_accepts[self.observed]) / st.c_tries)
        return out

    def block_shapes(self):
        return {"alpha0": (), "alpha": (self.q,), "alpha_county": (self.J,), "sigma2_alpha_county": ()}

    def record(self, st, out, s):
        out["alpha0"][s] = st.a[0]
        out["alpha"][s] = st.a[1:]
        out["alpha_county"][s] = st.county
        out["sigma2_alpha_county"][s] = st.s2
