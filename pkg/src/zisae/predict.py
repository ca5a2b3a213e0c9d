"""Posterior-predictive draws at grid units and their county aggregation.

Every unit owns fixed positions in three counter-based random streams
(presence uniforms, Box-Muller uniforms for y, Box-Muller uniforms for w),
so a unit's draws do not depend on how the grid is batched or ordered.
"""
import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels as K
from . import nngp
from .data import DataError

QUANTILE_METHOD = "median_unbiased"
_TAGS = {"presence": 11, "y": 12, "w": 13}


def _pairs(M):
    return 2 * ((M + 1) // 2)


def unit_uniforms(seed, purpose, units, per_unit):
    """Uniforms for the given unit indices, (len(units), per_unit); batch invariant."""
    units = np.asarray(units, dtype=np.int64)
    out = np.empty((units.size, per_unit))
    if units.size == 0:
        return out
    ss = np.random.SeedSequence([int(seed), _TAGS[purpose]])
    # split into runs of consecutive indices; each run needs one jump
    breaks = np.flatnonzero(np.diff(units) != 1) + 1
    starts = np.concatenate([[0], breaks])
    ends = np.concatenate([breaks, [units.size]])
    for a, b in zip(starts, ends):
        bg = np.random.PCG64(ss)
        bg.advance(int(units[a]) * per_unit)
        out[a:b] = np.random.Generator(bg).random((b - a, per_unit))
    return out


def unit_normals(seed, purpose, units, M):
    return K._box_muller_np(unit_uniforms(seed, purpose, units, _pairs(M)), M)


@dataclass(frozen=True, eq=False)
class UnitDraws:
    """Back-transformed draws y^(s) and presence probabilities for a set of units."""

    units: np.ndarray
    y: np.ndarray
    prob: np.ndarray


def _mean_structure(draws, spec, X, j):
    M = draws.M
    beta = np.asarray(draws["beta"]).reshape(M, -1)
    lvl = draws["beta0"] + draws["beta_county"][:, j]
    if spec.varying_coefficients:
        beta = beta + draws["beta_county_slopes"][:, j, :]
    return X @ beta.T + lvl[None, :]


def _residual_var(draws, spec, j):
    if spec.county_residual_variance:
        return np.ascontiguousarray(draws["tau2_county"][:, j])
    return np.ascontiguousarray(draws["tau2"])


def posterior_predict_units(fit, grid, units, seed=None, neighbors=None):
    """Draws for ``units`` (indices into ``grid``) which must all lie in one county."""
    units = np.asarray(units, dtype=np.int64)
    seed = fit.config.seed if seed is None else seed
    draws, spec = fit.draws, fit.spec
    M = draws.M
    county = grid.county[units]
    if units.size == 0:
        return UnitDraws(units, np.empty((0, M)), np.empty((0, M)))
    j = int(county[0])
    if np.any(county != j):
        raise ValueError("units must share a county")
    if j < 0 or j >= fit.n_counties:
        raise DataError(f"unknown county index {j}")
    mean = _mean_structure(draws, spec, grid.X[units], j)
    if spec.spatial_intercept:
        nb = neighbors if neighbors is not None else nngp.prediction_neighbors(
            grid.coords[units], fit.gauss_coords, spec.nngp_neighbors)
        wn = unit_normals(seed, "w", units, M)
        mean += nngp.predict_w(None, fit.gauss_coords, draws["w"], (draws["sigma2_w"], draws["phi"]),
                               normals=wn, neighbors=nb)
    var1 = _residual_var(draws, spec, j)
    if spec.two_stage:
        alpha = np.asarray(draws["alpha"]).reshape(M, -1)
        eta = grid.V[units] @ alpha.T + (draws["alpha0"] + draws["alpha_county"][:, j])[None, :]
        ub = unit_uniforms(seed, "presence", units, M)
    else:
        eta = np.zeros((units.size, M))
        ub = np.zeros((units.size, M))
    un = unit_uniforms(seed, "y", units, _pairs(M))
    y, prob = K.ppd_draws(np.ascontiguousarray(eta), np.ascontiguousarray(mean), var1,
                          float(fit.priors.tau2_2), int(fit.transform.root), ub, un, bool(spec.two_stage))
    return UnitDraws(units, y, prob)


def posterior_predict_unit(fit, grid, unit, seed=None):
    """Draws y^(s), s = 1..M, for a single grid unit."""
    return posterior_predict_units(fit, grid, [unit], seed).y[0]


@dataclass(frozen=True, eq=False)
class CountyPosterior:
    """Per-county draws mu_j^(s) (J x M) and their summaries."""

    draws: np.ndarray
    labels: tuple = ()

    @property
    def M(self):
        return self.draws.shape[1]

    @property
    def mean(self):
        return self.draws.mean(axis=1)

    @property
    def sd(self):
        return self.draws.std(axis=1, ddof=1) if self.M > 1 else np.zeros(self.draws.shape[0])

    @property
    def mse(self):
        return self.sd ** 2

    def quantiles(self, probs=(0.025, 0.975)):
        return np.quantile(self.draws, probs, axis=1, method=QUANTILE_METHOD)

    @property
    def interval(self):
        q = self.quantiles()
        return q[0], q[1]


def summarize_point(cp):
    return cp.mean


def aggregate_county(unit_y, county, n_counties, labels=()):
    """Average unit draws within each county: mu_j^(s) = mean over units of y^(s)."""
    unit_y = np.asarray(unit_y, dtype=float)
    county = np.asarray(county, dtype=np.int64)
    sizes = np.bincount(county, minlength=n_counties)
    if np.any(sizes == 0):
        raise DataError(f"counties without grid units: {np.flatnonzero(sizes == 0).tolist()}")
    acc = np.zeros((n_counties, unit_y.shape[1]))
    np.add.at(acc, county, unit_y)
    return CountyPosterior(acc / sizes[:, None], tuple(labels))


@dataclass(frozen=True, eq=False)
class UnitSummary:
    prob: np.ndarray
    biomass: np.ndarray


def predict_bayes(fit, grid, seed=None, batch=2000, unit_summary=False, counties=None):
    """Stream the grid county by county; returns (CountyPosterior, UnitSummary or None)."""
    J = fit.n_counties
    if grid.county.size and grid.county.max() >= J:
        raise DataError("grid contains a county unknown to the fitted model")
    sizes = np.bincount(grid.county, minlength=J)
    wanted = range(J) if counties is None else counties
    M = fit.draws.M
    out = np.full((J, M), np.nan)
    up = ub = None
    if unit_summary:
        up = np.full(len(grid), np.nan)
        ub = np.full(len(grid), np.nan)
    order = np.argsort(grid.county, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    for j in wanted:
        if sizes[j] == 0:
            raise DataError(f"county {grid.county_labels[j] if grid.county_labels else j} has no grid units")
        idx = order[bounds[j]: bounds[j + 1]]
        acc = np.zeros(M)
        for a in range(0, idx.size, batch):
            part = idx[a: a + batch]
            d = posterior_predict_units(fit, grid, part, seed)
            # row by row in unit order: the sum is then independent of the batch size
            for row in d.y:
                acc += row
            if unit_summary:
                up[part] = d.prob.mean(axis=1)
                ub[part] = d.y.mean(axis=1)
        out[j] = acc / idx.size
    labels = tuple(grid.county_labels)
    return CountyPosterior(out, labels), (UnitSummary(up, ub) if unit_summary else None)


def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


def write_county_csv(path, labels, estimate, sd=None, q025=None, q975=None, M=None):
    J = len(labels)
    col = lambda a: [None] * J if a is None else list(a)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["county", "estimate", "sd", "q025", "q975", "M"])
        for lab, e, s, lo, hi in zip(labels, estimate, col(sd), col(q025), col(q975)):
            w.writerow([lab, _fmt(e), _fmt(s), _fmt(lo), _fmt(hi), "" if M is None else int(M)])


def write_county_posterior(path, cp):
    lo, hi = cp.interval
    write_county_csv(path, cp.labels, cp.mean, cp.sd, lo, hi, cp.M)


def write_unit_csv(path, grid, summary):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "county", "prob_presence", "biomass"])
        for i in range(len(grid)):
            w.writerow([_fmt(grid.coords[i, 0]), _fmt(grid.coords[i, 1]),
                        grid.county_labels[grid.county[i]], _fmt(summary.prob[i]), _fmt(summary.biomass[i])])


def read_county_csv(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    num = lambda v: float(v) if v != "" else float("nan")
    return {
        "county": [r["county"] for r in rows],
        "estimate": np.array([num(r["estimate"]) for r in rows]),
        "sd": np.array([num(r["sd"]) for r in rows]),
        "q025": np.array([num(r["q025"]) for r in rows]),
        "q975": np.array([num(r["q975"]) for r in rows]),
    }
