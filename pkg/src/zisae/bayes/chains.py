"""Chain driver: burn-in, thinning, concatenation and split R-hat."""
import warnings
from dataclasses import dataclass

import numpy as np

from .. import transforms
from ..data import DataError, ModelSpec, TransformSpec
from .bernoulli import BernoulliStage, irls
from .conditionals import psrf
from .draws import ChainDiagnostics, PosteriorDraws
from .gaussian import GaussianStage
from .priors import McmcConfig, Priors


def run_stage(stage, config, progress=None):
    """Run ``config.chains`` independent chains of one sampler stage."""
    R = config.retained_per_chain
    shapes = stage.block_shapes()
    out = {k: np.empty((config.chains * R, *s)) for k, s in shapes.items()}
    rates = []
    for c, ss in enumerate(config.seed_sequences(stage.stream)):
        rng = np.random.default_rng(ss)
        st = stage.initial_state(rng, c, config.phi_proposal_sd)
        for it in range(config.burn_in):
            stage.step(st, rng)
            if (it + 1) % config.adapt_every == 0:
                stage.adapt(st)
        stage.start_sampling(st)
        for s in range(R):
            for _ in range(config.thin):
                stage.step(st, rng)
            stage.record(st, out, c * R + s)
        rates.append(stage.acceptance(st))
        if progress:
            progress(stage.stream, c)
    draws = PosteriorDraws(out, config.chains)
    acc = {k: float(np.mean([r[k] for r in rates])) for k in (rates[0] if rates else {})}
    return draws, ChainDiagnostics(rhat_table(draws), acc, config.rhat_threshold)


def rhat_table(draws):
    """Per-scalar split R-hat, keyed by column name; empty for a single chain."""
    if draws.n_chains < 2 or draws.M // draws.n_chains < 10:
        return {}
    table = {}
    for name in draws.names:
        a = draws.by_chain(name)
        r = np.atleast_1d(psrf(a.reshape(a.shape[0], a.shape[1], -1)))
        if draws[name].ndim == 1:
            table[name] = float(r[0])
        else:
            for k, idx in enumerate(np.ndindex(*draws[name].shape[1:])):
                table[f"{name}[{','.join(map(str, idx))}]"] = float(r[k])
    return table


def _check_separation(V, z):
    V1 = np.column_stack([np.ones(len(z)), V])
    b, _ = irls(V1, z.astype(float), 1e-8, iters=60)
    if not np.all(np.isfinite(b)) or np.max(np.abs(b)) > 25:
        warnings.warn("presence data look separable; the proper prior keeps the posterior finite",
                      RuntimeWarning, stacklevel=3)


def fit_bernoulli_stage(z, V, county, n_counties, priors=None, config=None, fixed=None):
    z = np.asarray(z)
    if z.size == 0:
        raise DataError("presence stage received an empty dataset")
    if np.any((z != 0) & (z != 1)):
        raise DataError("presence indicator must be 0/1")
    if z.min() == z.max():
        raise DataError("presence stage needs at least one zero and one nonzero plot")
    _check_separation(np.asarray(V, dtype=float).reshape(len(z), -1), z)
    stage = BernoulliStage(z, V, county, n_counties, priors=priors, fixed=fixed)
    return run_stage(stage, config or McmcConfig())


def fit_gaussian_stage(y_t, X, county, n_counties, coords=None, spec=None, priors=None, config=None,
                       fixed=None):
    spec = spec or ModelSpec.from_name("B_CVI")
    if len(y_t) == 0:
        raise DataError("continuous stage received an empty dataset")
    stage = GaussianStage(y_t, X, county, n_counties, coords, cvi=True, cvc=spec.varying_coefficients,
                          crv=spec.county_residual_variance, svi=spec.spatial_intercept,
                          priors=priors, m=spec.nngp_neighbors, fixed=fixed)
    return run_stage(stage, config or McmcConfig())


@dataclass(frozen=True, eq=False)
class BernoulliFit:
    draws: PosteriorDraws
    diagnostics: ChainDiagnostics


@dataclass(frozen=True, eq=False)
class BayesFit:
    """Everything needed to predict from a fitted Bayesian estimator."""

    spec: ModelSpec
    transform: TransformSpec
    priors: Priors
    config: McmcConfig
    draws: PosteriorDraws
    diagnostics: ChainDiagnostics
    gauss_coords: np.ndarray      # sites carrying w (rows that entered the continuous stage)
    n_counties: int

    @property
    def converged(self):
        return self.diagnostics.converged

    @property
    def M(self):
        return self.draws.M


def fit_bayes(model, data, priors=None, config=None, transform=None, bernoulli=None):
    """Fit one Bayesian estimator to ``data`` (a PlotData with standardized predictors).

    ``bernoulli`` may carry a BernoulliFit already obtained on the same data;
    the presence stage is identical across the two-stage estimators, so it
    is reused rather than resampled.
    """
    if isinstance(model, str):
        model = ModelSpec.from_name(model)
    if not model.bayesian:
        raise ValueError(f"{model.name} is not a Bayesian estimator")
    priors = priors or Priors()
    config = config or McmcConfig()
    transform = transform or TransformSpec()
    if len(data) == 0:
        raise DataError("no records")
    J = data.n_counties
    y_t = transforms.forward(data.biomass, transform)
    if model.two_stage:
        z = data.presence
        if bernoulli is None:
            bd, bdiag = fit_bernoulli_stage(z, data.V, data.county, J, priors, config)
            bernoulli = BernoulliFit(bd, bdiag)
        keep = z == 1
        gd, gdiag = fit_gaussian_stage(y_t[keep], data.X[keep], data.county[keep], J,
                                       data.coords[keep], model, priors, config)
        draws = bernoulli.draws.merged(gd)
        diag = bernoulli.diagnostics.merged(gdiag)
        coords = data.coords[keep]
    else:
        draws, diag = fit_gaussian_stage(y_t, data.X, data.county, J, data.coords, model, priors, config)
        coords = data.coords
    fit = BayesFit(model, transform, priors, config, draws, diag, np.asarray(coords), J)
    return fit, bernoulli


def run_chains(model, data, priors=None, config=None, transform=None):
    """Draws and diagnostics only; see ``fit_bayes`` for the full fit object."""
    fit, _ = fit_bayes(model, data, priors, config, transform)
    return fit.draws, fit.diagnostics
