"""Synthetic populations by stratified kNN imputation, and SRS within counties."""
import warnings
from dataclasses import dataclass

import numpy as np

from .. import _kernels as K
from ..data import DataError, GridData, PlotData


@dataclass(frozen=True, eq=False)
class SimPopulation:
    grid: GridData
    biomass: np.ndarray
    donor: np.ndarray          # donor row copied into each pixel
    truth: np.ndarray          # exact county means

    @property
    def n_counties(self):
        return self.grid.n_counties


def county_means(values, county, J):
    sizes = np.bincount(county, minlength=J)
    if np.any(sizes == 0):
        raise DataError(f"counties without pixels: {np.flatnonzero(sizes == 0).tolist()}")
    return np.bincount(county, weights=values, minlength=J) / sizes


def _matching_space(pixels, donors, columns):
    def table(d):
        cols = {}
        for names, M in ((d.x_names, d.X), (d.v_names, d.V)):
            for k, nm in enumerate(names):
                cols.setdefault(nm, M[:, k])
        missing = [c for c in columns if c not in cols]
        if missing:
            raise DataError(f"matching columns not found: {missing}")
        return np.column_stack([cols[c] for c in columns]).astype(float)

    P, D = table(pixels), table(donors)
    mu = D.mean(axis=0)
    sd = D.std(axis=0, ddof=1)
    sd[sd == 0] = 1.0
    return np.ascontiguousarray((P - mu) / sd), np.ascontiguousarray((D - mu) / sd)


def bootstrap_weights(n, rng):
    """Inclusion counts of one with-replacement resample of size n."""
    return np.bincount(rng.integers(0, n, n), minlength=n)


def impute(P, D, weights, k, rng):
    """For each row of P pick one of its k nearest donors (prob. proportional to weight)."""
    keep = np.flatnonzero(weights > 0)
    if keep.size == 0:
        raise DataError("no donors with positive weight")
    kk = min(k, keep.size)
    idx, _ = K.knn_query(P, np.ascontiguousarray(D[keep]), kk)
    wts = weights[keep][idx].astype(float)
    cum = np.cumsum(wts, axis=1)
    u = rng.random(P.shape[0]) * cum[:, -1]
    pick = (cum <= u[:, None]).sum(axis=1)
    pick = np.minimum(pick, kk - 1)
    return keep[idx[np.arange(P.shape[0]), pick]]


def generate_population(pixels, donors, k=5, pixel_strata=None, donor_strata=None, columns=None,
                        rng=None, weights="bootstrap"):
    """Impute donor biomass into every pixel.

    Matching uses Euclidean distance among standardized ``columns`` (by
    default every predictor) within strata. ``weights`` is "bootstrap" or
    "uniform".
    """
    rng = rng if rng is not None else np.random.default_rng()
    if columns is None:
        columns = tuple(dict.fromkeys(donors.x_names + donors.v_names))
    P, D = _matching_space(pixels, donors, columns)
    ps = np.zeros(len(pixels), dtype=np.int64) if pixel_strata is None else np.asarray(pixel_strata)
    ds = np.zeros(len(donors), dtype=np.int64) if donor_strata is None else np.asarray(donor_strata)
    chosen = np.empty(len(pixels), dtype=np.int64)
    for s in np.unique(ps):
        rows = np.flatnonzero(ps == s)
        pool = np.flatnonzero(ds == s)
        if pool.size == 0:
            raise DataError(f"stratum {s!r} has no donors")
        if k > pool.size:
            warnings.warn(f"k={k} exceeds the {pool.size} donors of stratum {s!r}; truncating",
                          RuntimeWarning, stacklevel=2)
        w = bootstrap_weights(pool.size, rng) if weights == "bootstrap" else np.ones(pool.size, dtype=int)
        chosen[rows] = pool[impute(P[rows], D[pool], w, k, rng)]
    biomass = np.asarray(donors.biomass, dtype=float)[chosen]
    return SimPopulation(pixels, biomass, chosen, county_means(biomass, pixels.county, pixels.n_counties))


def draw_sample(pop, sizes, rng):
    """Simple random sample without replacement of sizes[j] pixels in every county."""
    sizes = np.asarray(sizes, dtype=np.int64)
    J = pop.n_counties
    if sizes.shape != (J,):
        raise ValueError(f"need one sample size per county ({J})")
    avail = pop.grid.county_sizes()
    over = np.flatnonzero(sizes > avail)
    if over.size:
        raise DataError(f"sample size exceeds population in counties {over.tolist()}")
    order = np.argsort(pop.grid.county, kind="stable")
    starts = np.concatenate([[0], np.cumsum(avail)])
    picks = [order[starts[j]: starts[j + 1]][rng.choice(avail[j], sizes[j], replace=False)]
             for j in range(J) if sizes[j] > 0]
    idx = np.concatenate(picks) if picks else np.empty(0, dtype=np.int64)
    g = pop.grid
    return PlotData(np.array([f"px{i}" for i in idx]), g.coords[idx], g.county[idx], pop.biomass[idx],
                    g.X[idx], g.V[idx], g.x_names, g.v_names, g.county_labels)
