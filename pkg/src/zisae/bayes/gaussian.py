"""Gibbs sampler for the continuous (transformed biomass) stage.

Mean structure per row i in county j:

    beta0 + beta_county[j] + x_i . (beta + slopes[j]) + w_i

Fixed effects and county effects are drawn jointly from their Gaussian
full conditional, variance components from inverse-gamma conditionals,
the latent NNGP vector site by site, and the decay by Metropolis-Hastings
on log(phi). A translation move along (beta0 + delta, w - delta) is
interleaved to break the intercept / spatial-mean ridge.
"""
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from .. import nngp
from .conditionals import gaussian_from_precision, inverse_gamma
from .priors import Priors


@dataclass
class GaussState:
    theta: np.ndarray
    s2_int: float
    s2_slopes: np.ndarray
    tau2: np.ndarray
    w: np.ndarray = None
    sigma2_w: float = 1.0
    phi: float = 0.1
    B: np.ndarray = None
    F_corr: np.ndarray = None
    phi_sd: float = 0.3
    phi_tries: int = 0
    phi_accepts: int = 0
    window_accepts: int = 0
    window_tries: int = 0


class GaussianStage:
    stream = "gaussian"

    def __init__(self, y, X, county, n_counties, coords=None, *, cvi=True, cvc=False, crv=False,
                 svi=False, priors=None, m=15, fixed=None):
        self.y = np.ascontiguousarray(y, dtype=float)
        n = self.y.shape[0]
        if n == 0:
            raise ValueError("continuous stage received an empty dataset")
        X = np.asarray(X, dtype=float).reshape(n, -1)
        self.county = np.asarray(county, dtype=np.int64)
        self.J = int(n_counties)
        if self.county.size and (self.county.min() < 0 or self.county.max() >= self.J):
            raise ValueError("county index out of range")
        self.priors = priors or Priors()
        self.cvi, self.cvc, self.crv, self.svi = bool(cvi or cvc), bool(cvc), bool(crv), bool(svi)
        self.fixed = dict(fixed or {})
        self.n, self.p = n, X.shape[1]
        self.Xt = np.column_stack([np.ones(n), X])
        self.k0 = self.p + 1
        self.c = (self.k0 if self.cvc else 1) if self.cvi else 0
        self.K = self.k0 + self.J * self.c
        self.Zc = sps.csr_matrix((np.ones(n), (self.county, np.arange(n))), shape=(self.J, n))
        self.nj = np.bincount(self.county, minlength=self.J)
        outer = (self.Xt[:, :, None] * self.Xt[:, None, :]).reshape(n, -1)
        self.G = np.asarray(self.Zc @ outer).reshape(self.J, self.k0, self.k0)
        if self.c:
            j, a, b = np.meshgrid(np.arange(self.J), np.arange(self.c), np.arange(self.c), indexing="ij")
            self._bd_rows = (self.k0 + j * self.c + a).ravel()
            self._bd_cols = (self.k0 + j * self.c + b).ravel()
            self._cdiag = self.k0 + np.arange(self.J * self.c)
        self.graph = None
        if self.svi:
            if coords is None:
                raise ValueError("spatial intercept needs coordinates")
            self.coords = np.asarray(coords, dtype=float)
            self.graph = nngp.build_graph(self.coords, m)

    # ------------------------------------------------------------------
    # pieces of the mean
    # ------------------------------------------------------------------
    def county_coefs(self, theta):
        return theta[self.k0:].reshape(self.J, self.c)

    def fitted(self, theta):
        mu = self.Xt @ theta[: self.k0]
        if self.c:
            C = self.county_coefs(theta)
            mu = mu + np.einsum("ij,ij->i", self.Xt[:, : self.c], C[self.county])
        return mu

    def county_prior_precision(self, st):
        if not self.c:
            return np.empty(0)
        per = np.concatenate([[1.0 / st.s2_int], 1.0 / st.s2_slopes])[: self.c]
        return np.tile(per, self.J)

    # ------------------------------------------------------------------
    # full conditionals
    # ------------------------------------------------------------------
    def coef_system(self, st):
        """Precision matrix and linear term of the joint fixed + county coefficient conditional."""
        k0, c, J = self.k0, self.c, self.J
        prec = 1.0 / st.tau2
        r = self.y - st.w if self.svi else self.y
        H = np.asarray(self.Zc @ (self.Xt * r[:, None]))
        Gw = self.G * prec[:, None, None]
        Hw = H * prec[:, None]
        Q = np.zeros((self.K, self.K))
        b = np.zeros(self.K)
        Q[:k0, :k0] = Gw.sum(0) + np.eye(k0) / self.priors.var_fixed
        b[:k0] = Hw.sum(0)
        if c:
            cross = Gw[:, :, :c].transpose(1, 0, 2).reshape(k0, J * c)
            Q[:k0, k0:] = cross
            Q[k0:, :k0] = cross.T
            Q[self._bd_rows, self._bd_cols] = Gw[:, :c, :c].ravel()
            Q[self._cdiag, self._cdiag] += self.county_prior_precision(st)
            b[k0:] = Hw[:, :c].ravel()
        return Q, b

    def draw_coefficients(self, st, rng):
        Q, b = self.coef_system(st)
        st.theta, _ = gaussian_from_precision(Q, b, rng)
        return st.theta

    def county_variance_params(self, st):
        """IG parameters for the county-intercept variance and the per-slope variances."""
        a, s = self.priors.ig_shape, self.priors.ig_scale
        C = self.county_coefs(st.theta)
        shape = a + 0.5 * self.J
        scales = s + 0.5 * (C * C).sum(axis=0)
        return shape, scales

    def draw_county_variances(self, st, rng):
        if not self.c:
            return
        shape, scales = self.county_variance_params(st)
        draws = inverse_gamma(shape, scales, rng)
        st.s2_int = float(draws[0])
        if self.cvc:
            st.s2_slopes = np.asarray(draws[1:], dtype=float)

    def residuals(self, st):
        e = self.y - self.fitted(st.theta)
        if self.svi:
            e = e - st.w
        return e

    def tau2_params(self, st):
        a, s = self.priors.ig_shape, self.priors.ig_scale
        e = self.residuals(st)
        ss = np.bincount(self.county, weights=e * e, minlength=self.J)
        if self.crv:
            return a + 0.5 * self.nj, s + 0.5 * ss
        return a + 0.5 * self.n, s + 0.5 * ss.sum()

    def draw_tau2(self, st, rng):
        if "tau2" in self.fixed:
            st.tau2 = np.broadcast_to(np.asarray(self.fixed["tau2"], dtype=float), (self.J,)).copy()
            return
        shape, scale = self.tau2_params(st)
        if self.crv:
            st.tau2 = inverse_gamma(shape, scale, rng)
        else:
            st.tau2 = np.full(self.J, float(inverse_gamma(shape, scale, rng)))

    def spatial_factors(self, st):
        return nngp.ConditionalFactors(st.B, st.F_corr * st.sigma2_w, st.F_corr, st.sigma2_w, st.phi)

    def draw_w(self, st, rng):
        resid = self.y - self.fitted(st.theta)
        obs_prec = 1.0 / st.tau2[self.county]
        normals = rng.standard_normal(self.n)
        nngp.w_gibbs_sweep(st.w, self.spatial_factors(st), self.graph, resid, obs_prec, normals)

    def translate_intercept(self, st, rng):
        """Exact draw along beta0 -> beta0 + d, w -> w - d; the likelihood is unchanged."""
        F = st.F_corr * st.sigma2_w
        sB = 1.0 - st.B.sum(axis=1)
        e = nngp.K.nngp_residuals(st.w, self.graph.neighbors, st.B)
        P = float(np.sum(sB * sB / F)) + 1.0 / self.priors.var_fixed
        L = float(np.sum(e * sB / F)) - st.theta[0] / self.priors.var_fixed
        d = L / P + rng.standard_normal() / math.sqrt(P)
        st.theta[0] += d
        st.w -= d

    def sigma2_w_params(self, st):
        q, _ = nngp.scaled_quadratic(st.w, st.B, st.F_corr, self.graph)
        return self.priors.ig_shape + 0.5 * self.n, self.priors.ig_scale + 0.5 * q

    def draw_sigma2_w(self, st, rng):
        if "sigma2_w" in self.fixed:
            st.sigma2_w = float(self.fixed["sigma2_w"])
            return
        shape, scale = self.sigma2_w_params(st)
        st.sigma2_w = float(inverse_gamma(shape, scale, rng))

    def draw_phi(self, st, rng):
        if "phi" in self.fixed:
            return
        bounds = (self.priors.phi_lower, self.priors.phi_upper)
        phi, B, Fc, _, acc = nngp.phi_mh_step(st.phi, st.B, st.F_corr, st.w, st.sigma2_w, self.graph,
                                              bounds, st.phi_sd, rng)
        st.phi, st.B, st.F_corr = phi, B, Fc
        st.window_tries += 1
        st.window_accepts += acc
        return acc

    # ------------------------------------------------------------------
    # chain plumbing
    # ------------------------------------------------------------------
    def initial_state(self, rng, chain=0, proposal_sd=0.3):
        Q = self.Xt.T @ self.Xt + np.eye(self.k0) * 1e-6
        beta = np.linalg.solve(Q, self.Xt.T @ self.y)
        resid = self.y - self.Xt @ beta
        rv = max(float(np.var(resid)), 1e-4)
        theta = np.zeros(self.K)
        theta[: self.k0] = beta + rng.normal(0.0, 0.1 * math.sqrt(rv), self.k0)
        if self.c:
            theta[self.k0:] = rng.normal(0.0, 0.1 * math.sqrt(rv), self.J * self.c)
        st = GaussState(
            theta=theta,
            s2_int=float(rv * rng.uniform(0.2, 1.0)),
            s2_slopes=np.full(self.p, 0.1) * rng.uniform(0.5, 2.0, self.p),
            tau2=np.full(self.J, rv * rng.uniform(0.5, 1.5)),
            phi_sd=proposal_sd,
        )
        if "tau2" in self.fixed:
            st.tau2 = np.broadcast_to(np.asarray(self.fixed["tau2"], dtype=float), (self.J,)).copy()
        if self.svi:
            st.w = np.zeros(self.n)
            st.sigma2_w = float(self.fixed.get("sigma2_w", 0.5 * rv * rng.uniform(0.5, 2.0)))
            if "phi" in self.fixed:
                st.phi = float(self.fixed["phi"])
            else:
                ext = float(np.ptp(self.coords, axis=0).max()) if self.n > 1 else 1.0
                guess = 3.0 / max(0.25 * ext, 1e-6) * math.exp(rng.uniform(-0.5, 0.5))
                st.phi = float(np.clip(guess, self.priors.phi_lower * 1.01, self.priors.phi_upper * 0.99))
            st.B, st.F_corr = nngp.correlation_factors(self.graph, st.phi)
        return st

    def step(self, st, rng):
        self.draw_coefficients(st, rng)
        self.draw_county_variances(st, rng)
        self.draw_tau2(st, rng)
        if self.svi:
            self.draw_w(st, rng)
            self.translate_intercept(st, rng)
            self.draw_sigma2_w(st, rng)
            self.draw_phi(st, rng)

    def adapt(self, st):
        if not self.svi or st.window_tries == 0:
            return
        rate = st.window_accepts / st.window_tries
        st.phi_sd *= math.exp(0.5 * (rate - 0.44))
        st.phi_sd = float(np.clip(st.phi_sd, 1e-3, 3.0))
        st.window_accepts = st.window_tries = 0

    def start_sampling(self, st):
        st.window_accepts = st.window_tries = 0

    def acceptance(self, st):
        if not self.svi or st.window_tries == 0:
            return {}
        return {"phi": st.window_accepts / st.window_tries}

    def block_shapes(self):
        shapes = {"beta0": (), "beta": (self.p,)}
        if self.cvi:
            shapes["beta_county"] = (self.J,)
            shapes["sigma2_beta_county"] = ()
        if self.cvc:
            shapes["beta_county_slopes"] = (self.J, self.p)
            shapes["sigma2_beta_slopes"] = (self.p,)
        shapes["tau2_county" if self.crv else "tau2"] = (self.J,) if self.crv else ()
        if self.svi:
            shapes.update({"w": (self.n,), "sigma2_w": (), "phi": ()})
        return shapes

    def record(self, st, out, s):
        th = st.theta
        out["beta0"][s] = th[0]
        out["beta"][s] = th[1: self.k0]
        if self.cvi:
            C = self.county_coefs(th)
            out["beta_county"][s] = C[:, 0]
            out["sigma2_beta_county"][s] = st.s2_int
            if self.cvc:
                out["beta_county_slopes"][s] = C[:, 1:]
                out["sigma2_beta_slopes"][s] = st.s2_slopes
        if self.crv:
            out["tau2_county"][s] = st.tau2
        else:
            out["tau2"][s] = st.tau2[0]
        if self.svi:
            out["w"][s] = st.w
            out["sigma2_w"][s] = st.sigma2_w
            out["phi"][s] = st.phi
