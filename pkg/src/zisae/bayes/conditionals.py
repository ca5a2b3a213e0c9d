"""Closed-form full-conditional draws shared by the samplers."""
import numpy as np
from scipy.linalg import cho_solve, solve_triangular


def inverse_gamma(shape, scale, rng, size=None):
    """Draw from IG(shape, scale) with density proportional to x^-(shape+1) exp(-scale/x).

    Array arguments give independent draws, one per broadcast element.
    """
    if size is None:
        size = np.broadcast(np.asarray(shape), np.asarray(scale)).shape or None
    return np.asarray(scale) / rng.gamma(shape, size=size)


def ig_update(shape, scale, n, ss):
    """Conjugate IG update after ``n`` zero-mean normal terms with sum of squares ``ss``."""
    return shape + 0.5 * n, scale + 0.5 * ss


def gaussian_from_precision(Q, b, rng, z=None):
    """Draw x ~ N(Q^-1 b, Q^-1); returns (draw, mean)."""
    L = np.linalg.cholesky(Q)
    mean = cho_solve((L, True), b)
    if z is None:
        z = rng.standard_normal(b.shape[0])
    return mean + solve_triangular(L.T, z, lower=False), mean


def psrf(chains):
    """Split potential scale reduction factor (split R-hat).

    ``chains`` has shape (n_chains, n_draws) or (n_chains, n_draws, k); each
    chain is split in half before pooling. Identical constant chains return
    1.0 by convention.
    """
    a = np.asarray(chains, dtype=float)
    if a.ndim < 2 or a.shape[0] < 2:
        raise ValueError("psrf needs at least 2 chains")
    if a.shape[1] < 10:
        raise ValueError("psrf needs at least 10 draws per chain")
    half = a.shape[1] // 2
    split = np.concatenate([a[:, :half], a[:, a.shape[1] - half:]], axis=0)
    n = split.shape[1]
    means = split.mean(axis=1)
    W = split.var(axis=1, ddof=1).mean(axis=0)
    Bn = means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * W + Bn
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / W)
    r = np.where(W > 0, r, np.where(Bn > 0, np.inf, 1.0))
    return float(r) if r.ndim == 0 else r
