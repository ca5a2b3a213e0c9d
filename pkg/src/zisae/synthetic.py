"""A dry, mostly treeless synthetic region with sparse forested uplands.

Used as a test fixture and by the simulation acceptance check. Pixels lie
on a regular 1 km-ish lattice split into Voronoi "counties"; predictors
are smooth random fields; donor plots get zero-inflated biomass from a
two-stage spatial model and are then imputed into every pixel.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import GridData, PlotData

NAMES = ("tcc", "elev", "tri")


def smooth_field(coords, length, rng, n_features=200):
    """Approximately unit-variance Gaussian field with squared-exponential correlation."""
    om = rng.normal(0.0, 1.0 / length, (n_features, 2))
    ph = rng.uniform(0.0, 2 * np.pi, n_features)
    return np.sqrt(2.0 / n_features) * np.cos(coords @ om.T + ph).sum(axis=1)


@dataclass(frozen=True, eq=False)
class Region:
    grid: GridData
    tnt: np.ndarray
    donors: PlotData
    donor_tnt: np.ndarray
    sizes: np.ndarray          # per-county sample sizes for the design


def county_labels(J):
    return tuple(f"C{j + 1:02d}" for j in range(J))


def _lattice(n_pixels, extent):
    w, h = extent
    nx = int(round(np.sqrt(n_pixels * w / h)))
    ny = int(np.ceil(n_pixels / nx))
    xs = (np.arange(nx) + 0.5) * w / nx
    ys = (np.arange(ny) + 0.5) * h / ny
    X, Y = np.meshgrid(xs, ys)
    return np.column_stack([X.ravel(), Y.ravel()])[:n_pixels]


def _voronoi_counties(coords, J, extent, rng):
    w, h = extent
    cols = int(np.ceil(np.sqrt(J * w / h)))
    rows = int(np.ceil(J / cols))
    cells = [(c, r) for r in range(rows) for c in range(cols)][:J]
    centers = np.array([((c + rng.uniform(0.25, 0.75)) * w / cols, (r + rng.uniform(0.25, 0.75)) * h / rows)
                        for c, r in cells])
    d2 = ((coords[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
    return np.argmin(d2, axis=1)


def _predictors(coords, rng):
    base = smooth_field(coords, 40.0, rng)
    peaks = smooth_field(coords, 12.0, rng)
    elev = 1600.0 + 350.0 * base + 450.0 * np.maximum(peaks, 0.0) ** 2
    tri = np.maximum(2.0 + 6.0 * np.maximum(peaks, 0.0) + 1.5 * smooth_field(coords, 5.0, rng)
                     + rng.normal(0.0, 1.0, len(coords)), 0.0)
    wet = smooth_field(coords, 25.0, rng)
    lin = -4.6 + 2.2 * (elev - 1600.0) / 400.0 + 0.8 * wet + 0.15 * tri
    tcc = np.clip(60.0 * expit(lin) + rng.normal(0.0, 3.0, len(coords)), 0.0, 100.0)
    tcc = np.round(tcc)
    tnt = ((tcc >= 5.0) ^ (rng.random(len(coords)) < 0.03)).astype(np.int64)
    return np.column_stack([tcc, elev, tri]), tnt


def donor_biomass(coords, P, tnt, county, J, rng, range_km=6.7, sigma2_w=1.5):
    """Zero-inflated two-stage draw on the square-root scale."""
    tcc, elev, tri = P[:, 0], P[:, 1], P[:, 2]
    a_cty = rng.normal(0.0, np.sqrt(0.8), J)
    eta = -4.0 + 0.12 * tcc + 0.002 * (elev - 1600.0) + 0.05 * tri + 1.2 * tnt + a_cty[county]
    z = rng.random(len(coords)) < expit(eta)
    b_cty = rng.normal(0.0, np.sqrt(0.25), J)
    tau2 = rng.uniform(0.3, 1.2, J)
    w = np.sqrt(sigma2_w) * smooth_field(coords, range_km / 3.0, rng, n_features=400)
    y = 1.5 + 0.06 * tcc + 0.004 * (elev - 1600.0) / 4.0 + 0.08 * tri + b_cty[county] + w \
        + rng.normal(0.0, 1.0, len(coords)) * np.sqrt(tau2[county])
    return np.where(z & (y > 0), y * y, 0.0)


def make_region(n_pixels=100_000, n_counties=12, n_donors=3000, n_sample=500, extent=(320.0, 260.0),
                seed=0):
    rng = np.random.default_rng(seed)
    coords = _lattice(n_pixels, extent)
    county = _voronoi_counties(coords, n_counties, extent, rng)
    P, tnt = _predictors(coords, rng)
    labels = county_labels(n_counties)
    grid = GridData(coords, county, P, P.copy(), NAMES, NAMES, labels)
    idx = np.sort(rng.choice(len(coords), n_donors, replace=False))
    bio = donor_biomass(coords[idx], P[idx], tnt[idx], county[idx], n_counties, rng)
    donors = PlotData(np.array([f"d{i}" for i in range(n_donors)]), coords[idx], county[idx], bio,
                      P[idx], P[idx].copy(), NAMES, NAMES, labels)
    share = grid.county_sizes() / len(coords)
    sizes = np.maximum(np.round(share * n_sample).astype(np.int64), 4)
    return Region(grid, tnt, donors, tnt[idx], sizes)


def make_population(region, k=5, seed=0):
    from .sim.population import generate_population

    return generate_population(region.grid, region.donors, k, region.tnt, region.donor_tnt,
                               columns=NAMES, rng=np.random.default_rng(seed))


@dataclass(frozen=True)
class TwoStageTruth:
    alpha0: float = -0.2
    alpha: tuple = (1.0, -0.5, 0.3)
    sigma2_alpha: float = 0.5
    beta0: float = 5.0
    beta: tuple = (0.8, 0.4, -0.3)
    sigma2_beta: float = 0.3
    tau2_range: tuple = (0.3, 1.0)
    sigma2_w: float = 1.5
    phi: float = 0.45


def simulate_two_stage(n=1000, J=10, truth=TwoStageTruth(), extent=(40.0, 40.0), seed=0):
    """Draw plots from the two-stage model with county intercepts, CRV and an
    exponential-covariance spatial intercept on the square-root scale.

    Predictors are standard normal, so no standardization is needed. Returns
    (PlotData, dict of realized effects).
    """
    rng = np.random.default_rng(seed)
    coords = rng.uniform((0.0, 0.0), extent, (n, 2))
    county = _voronoi_counties(coords, J, extent, rng)
    X = rng.standard_normal((n, len(truth.beta)))
    a = rng.normal(0.0, np.sqrt(truth.sigma2_alpha), J)
    z = rng.random(n) < expit(truth.alpha0 + X @ np.asarray(truth.alpha) + a[county])
    d = np.sqrt(((coords[:, None, :] - coords[None, :, :]) ** 2).sum(-1))
    L = np.linalg.cholesky(truth.sigma2_w * np.exp(-truth.phi * d) + 1e-10 * np.eye(n))
    w = L @ rng.standard_normal(n)
    b = rng.normal(0.0, np.sqrt(truth.sigma2_beta), J)
    tau2 = rng.uniform(*truth.tau2_range, J)
    yt = truth.beta0 + X @ np.asarray(truth.beta) + b[county] + w + rng.standard_normal(n) * np.sqrt(tau2[county])
    biomass = np.where(z, np.maximum(yt, 0.0) ** 2, 0.0)
    names = tuple(f"x{k + 1}" for k in range(X.shape[1]))
    data = PlotData(np.array([f"s{i}" for i in range(n)]), coords, county, biomass, X, X.copy(), names, names,
                    county_labels(J))
    return data, {"w": w, "alpha_county": a, "beta_county": b, "tau2": tau2}
