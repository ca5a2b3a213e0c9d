"""Nearest-neighbour Gaussian process pieces for the space-varying intercept.

Sites are ordered by x then y. Each site conditions on its ``m`` nearest
predecessors, giving the sparse factorisation

    w_i | w_N(i) ~ N(b_i . w_N(i), f_i)

with ``b_i`` and ``f_i`` taken from the exponential covariance
``sigma2_w * exp(-phi * d)``. Conditional coefficients depend on ``phi``
only, so they are cached on the correlation scale and the variances are
multiplied by ``sigma2_w`` on demand.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from ._kernels import FactorizationError

RANGE_CORRELATION = 0.05
JITTER = 1e-10
LOG_2PI = math.log(2.0 * math.pi)


def effective_range(phi):
    """Distance (km) at which exponential correlation falls to 0.05."""
    out = -math.log(RANGE_CORRELATION) / np.asarray(phi, dtype=float)
    return out if out.ndim else float(out)


def decay_from_range(range_km):
    return effective_range(range_km)


@dataclass(frozen=True)
class SpatialParams:
    sigma2_w: float
    phi: float

    def __post_init__(self):
        if not (self.sigma2_w > 0 and self.phi > 0):
            raise ValueError(f"spatial parameters must be positive: {self}")


@dataclass(frozen=True, eq=False)
class NeighborGraph:
    coords: np.ndarray
    m: int
    order: np.ndarray        # order[k] = site at position k
    rank: np.ndarray         # rank[i] = position of site i
    neighbors: np.ndarray    # (n, m) site indices, -1 padded, indexed by site
    counts: np.ndarray
    site_dist: np.ndarray    # (n, m)
    nn_dist: np.ndarray      # (n, m, m)
    jitter: np.ndarray       # per-site diagonal jitter (correlation scale)
    rev_ptr: np.ndarray
    rev_site: np.ndarray
    rev_pos: np.ndarray

    @property
    def n(self):
        return self.coords.shape[0]

    def neighbor_set(self, i):
        return self.neighbors[i, : self.counts[i]].copy()

    def neighbor_sets(self):
        """Neighbour sets listed by ordering position."""
        return [self.neighbor_set(s) for s in self.order]


@dataclass(frozen=True, eq=False)
class ConditionalFactors:
    B: np.ndarray
    F: np.ndarray           # covariance scale
    F_corr: np.ndarray      # correlation scale
    sigma2_w: float
    phi: float

    def with_sigma2(self, sigma2_w):
        return ConditionalFactors(self.B, self.F_corr * sigma2_w, self.F_corr, float(sigma2_w), self.phi)


def _pair_distances(coords, nbr, counts):
    n, m = nbr.shape
    safe = np.where(nbr >= 0, nbr, 0)
    pts = coords[safe]                                   # (n, m, 2)
    site_d = np.sqrt(((pts - coords[:, None, :]) ** 2).sum(-1))
    if n <= m * m:
        # dense neighbour sets: index one n x n table instead of an n x m x m x 2 temporary
        dx = coords[:, None, 0] - coords[None, :, 0]
        dy = coords[:, None, 1] - coords[None, :, 1]
        D = np.sqrt(dx * dx + dy * dy)
        nn_d = D[safe[:, :, None], safe[:, None, :]]
    else:
        nn_d = np.sqrt(((pts[:, :, None, :] - pts[:, None, :, :]) ** 2).sum(-1))
    valid = np.arange(m)[None, :] < counts[:, None]
    site_d = np.where(valid, site_d, 0.0)
    both = valid[:, :, None] & valid[:, None, :]
    nn_d = np.where(both, nn_d, 0.0)
    offdiag = both & ~np.eye(m, dtype=bool)[None]
    coincident = (valid & (site_d == 0.0)).any(1) | (offdiag & (nn_d == 0.0)).any((1, 2))
    return site_d, nn_d, np.where(coincident, JITTER, 0.0)


def build_graph(coords, m=15):
    coords = np.ascontiguousarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValueError("coords must be an (n, 2) array")
    n = coords.shape[0]
    if n < 1:
        raise ValueError("neighbour graph needs at least one site")
    if m < 1:
        raise ValueError("m must be >= 1")
    if not np.all(np.isfinite(coords)):
        raise ValueError("coordinates must be finite")
    order = np.lexsort((coords[:, 1], coords[:, 0]))
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    nbr_pos = K.ordered_neighbors(np.ascontiguousarray(coords[order]), m)
    neighbors = -np.ones((n, m), dtype=np.int64)
    neighbors[order] = np.where(nbr_pos >= 0, order[np.maximum(nbr_pos, 0)], -1)
    counts = (neighbors >= 0).sum(1).astype(np.int64)
    site_d, nn_d, jitter = _pair_distances(coords, neighbors, counts)

    flat_site, flat_pos = np.nonzero(neighbors >= 0)
    targets = neighbors[flat_site, flat_pos]
    srt = np.argsort(targets, kind="stable")
    rev_site = flat_site[srt].astype(np.int64)
    rev_pos = flat_pos[srt].astype(np.int64)
    rev_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(targets, minlength=n), out=rev_ptr[1:])
    return NeighborGraph(coords, int(m), order, rank, neighbors, counts, site_d, nn_d, jitter,
                         rev_ptr, rev_site, rev_pos)


def correlation_factors(graph, phi):
    B, F, bad = K.corr_factors(graph.site_dist, graph.nn_dist, graph.counts, float(phi), graph.jitter)
    if bad >= 0:
        raise FactorizationError(f"neighbour covariance of site {bad} is singular at phi={phi}")
    return B, F


def factorize(graph, params):
    B, Fc = correlation_factors(graph, params.phi)
    return ConditionalFactors(B, Fc * params.sigma2_w, Fc, float(params.sigma2_w), float(params.phi))


def _check_len(w, graph):
    w = np.asarray(w, dtype=float)
    if w.shape != (graph.n,):
        raise ValueError(f"w has shape {w.shape}, graph has {graph.n} sites")
    return w


def log_density(w, factors, graph):
    w = _check_len(w, graph)
    e = K.nngp_residuals(w, graph.neighbors, factors.B)
    return float(-0.5 * np.sum(LOG_2PI + np.log(factors.F) + e * e / factors.F))


def scaled_quadratic(w, B, F_corr, graph):
    """Return (sum e^2 / f_corr, sum log f_corr), the sufficient pieces of the density."""
    e = K.nngp_residuals(w, graph.neighbors, B)
    return float(np.sum(e * e / F_corr)), float(np.sum(np.log(F_corr)))


def _loglik_corr(w, B, F_corr, sigma2_w, graph):
    q, logdet = scaled_quadratic(w, B, F_corr, graph)
    n = graph.n
    return -0.5 * (n * LOG_2PI + n * math.log(sigma2_w) + logdet + q / sigma2_w)


def sample_sigma2_w(w, B, F_corr, graph, shape, scale, rng):
    q, _ = scaled_quadratic(w, B, F_corr, graph)
    return (scale + 0.5 * q) / rng.gamma(shape + 0.5 * graph.n)


def phi_mh_step(phi, B, F_corr, w, sigma2_w, graph, bounds, proposal_sd, rng, loglik=None):
    """Random walk on log(phi) with Jacobian term; uniform prior on ``bounds``.

    Returns (phi, B, F_corr, loglik, accepted). The normal increment is
    always drawn so the random stream does not depend on the outcome.
    """
    lo, hi = bounds
    step = rng.standard_normal()
    logu = math.log(rng.random() + 1e-300)
    if loglik is None:
        loglik = _loglik_corr(w, B, F_corr, sigma2_w, graph)
    prop = phi * math.exp(proposal_sd * step)
    if not (lo <= prop <= hi):
        return phi, B, F_corr, loglik, False
    if prop == phi:
        return phi, B, F_corr, loglik, True
    try:
        Bp, Fp = correlation_factors(graph, prop)
    except FactorizationError:
        return phi, B, F_corr, loglik, False
    ll_prop = _loglik_corr(w, Bp, Fp, sigma2_w, graph)
    log_ratio = ll_prop - loglik + math.log(prop) - math.log(phi)
    if logu < log_ratio:
        return prop, Bp, Fp, ll_prop, True
    return phi, B, F_corr, loglik, False


def sample_phi_mh(current, w, graph, prior=(0.003, 3.0), proposal_sd=0.1, rng=None):
    """One Metropolis-Hastings update of the decay targeting p(phi | w, sigma2_w)."""
    rng = rng if rng is not None else np.random.default_rng()
    w = _check_len(w, graph)
    lo, hi = prior
    if not 0 < lo < hi:
        raise ValueError("prior bounds must satisfy 0 < a < b")
    B, Fc = correlation_factors(graph, current.phi)
    phi, _, _, _, accepted = phi_mh_step(current.phi, B, Fc, w, current.sigma2_w, graph,
                                          (lo, hi), proposal_sd, rng)
    return SpatialParams(current.sigma2_w, phi), accepted


def w_gibbs_sweep(w, factors, graph, resid, obs_prec, normals):
    """Update every w_i from its full conditional in place (site index order).

    ``resid`` is the response minus every non-spatial mean term and
    ``obs_prec`` the per-site residual precision (zero where a site carries
    no observation).
    """
    return K.w_sweep(w, graph.neighbors, factors.B, factors.F, graph.rev_ptr, graph.rev_site,
                     graph.rev_pos, np.ascontiguousarray(resid, dtype=float),
                     np.ascontiguousarray(obs_prec, dtype=float), normals)


# ----------------------------------------------------------------------------
# prediction at unobserved sites
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PredictionNeighbors:
    neighbors: np.ndarray
    counts: np.ndarray
    site_dist: np.ndarray
    nn_dist: np.ndarray
    jitter: np.ndarray

    def subset(self, sl):
        return PredictionNeighbors(self.neighbors[sl], self.counts[sl], self.site_dist[sl],
                                   self.nn_dist[sl], self.jitter[sl])


def prediction_neighbors(new_coords, observed_coords, m):
    new_coords = np.ascontiguousarray(new_coords, dtype=float).reshape(-1, 2)
    observed_coords = np.ascontiguousarray(observed_coords, dtype=float)
    if observed_coords.shape[0] < 1:
        raise ValueError("prediction needs at least one observed site")
    k = min(m, observed_coords.shape[0])
    nbr, _ = K.knn_query(new_coords, observed_coords, k)
    counts = np.full(new_coords.shape[0], k, dtype=np.int64)
    safe = nbr
    pts = observed_coords[safe]
    site_d = np.sqrt(((pts - new_coords[:, None, :]) ** 2).sum(-1))
    nn_d = np.sqrt(((pts[:, :, None, :] - pts[:, None, :, :]) ** 2).sum(-1))
    offdiag = ~np.eye(k, dtype=bool)[None]
    coincident = (site_d == 0.0).any(1) | ((nn_d == 0.0) & offdiag).any((1, 2))
    return PredictionNeighbors(nbr, counts, np.ascontiguousarray(site_d), np.ascontiguousarray(nn_d),
                               np.where(coincident, JITTER, 0.0))


def predict_w(new_coords, observed_coords, w_draws, params_draws, m=15, rng=None, normals=None,
              neighbors=None):
    """Draw w at new sites, one value per retained iteration.

    ``params_draws`` is a pair of arrays ``(sigma2_w, phi)`` of length M or a
    sequence of :class:`SpatialParams`. Each draw conditions on the m
    nearest observed sites: N(b* . w_N*, f*).
    """
    if isinstance(params_draws, (list, tuple)) and params_draws and isinstance(params_draws[0], SpatialParams):
        sigma2 = np.array([p.sigma2_w for p in params_draws])
        phi = np.array([p.phi for p in params_draws])
    else:
        sigma2, phi = (np.atleast_1d(np.asarray(a, dtype=float)) for a in params_draws)
    w_draws = np.ascontiguousarray(np.atleast_2d(w_draws), dtype=float)
    nb = neighbors or prediction_neighbors(new_coords, observed_coords, m)
    U, M = nb.neighbors.shape[0], phi.shape[0]
    if normals is None:
        rng = rng if rng is not None else np.random.default_rng()
        normals = rng.standard_normal((U, M))
    return K.predict_w_draws(nb.site_dist, nb.nn_dist, nb.neighbors, nb.counts, nb.jitter, w_draws,
                             np.ascontiguousarray(phi), np.ascontiguousarray(sigma2),
                             np.ascontiguousarray(normals))
