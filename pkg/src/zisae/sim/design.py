"""Estimator adapters, the repeated-sampling design and K-fold cross-validation."""
import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .. import freq
from ..bayes import BernoulliFit, McmcConfig, Priors, fit_bayes
from ..bayes.priors import ConfigError
from ..data import DataError, ModelSpec, TransformSpec, standardize_predictors
from ..predict import QUANTILE_METHOD, posterior_predict_units, predict_bayes
from .metrics import county_metrics, cv_metrics, freq_interval
from .population import draw_sample

log = logging.getLogger(__name__)

FAILURES = (DataError, freq.ConvergenceError, np.linalg.LinAlgError, FloatingPointError)


@dataclass(frozen=True)
class Settings:
    transform: TransformSpec = field(default_factory=TransformSpec)
    priors: Priors = field(default_factory=Priors)
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    bootstrap_b: int = 500
    nngp_neighbors: int = 15
    batch: int = 2000


@dataclass(frozen=True, eq=False)
class CountyEstimate:
    estimate: np.ndarray
    rmse_hat: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    converged: bool = True


def _standardized(sample, grid):
    names = tuple(dict.fromkeys(sample.x_names + sample.v_names))
    s, stats = standardize_predictors(sample, constant=names)
    g, _ = standardize_predictors(grid, stats)
    return s, g


def _derived_seed(seed, *tags):
    return int(np.random.SeedSequence([int(seed), *tags]).generate_state(1)[0])


class ModelEstimator:
    """Wraps one of the nine model specifications for use in run_design."""

    def __init__(self, spec, settings=None):
        self.spec = ModelSpec.from_name(spec) if isinstance(spec, str) else spec
        self.settings = settings or Settings()
        if self.spec.nngp_neighbors != self.settings.nngp_neighbors:
            self.spec = replace(self.spec, nngp_neighbors=self.settings.nngp_neighbors)

    @property
    def name(self):
        return self.spec.name

    def __call__(self, sample, grid, seed, cache=None):
        st = self.settings
        s, g = _standardized(sample, grid)
        if not self.spec.bayesian:
            fit = freq.fit_freq(s, st.transform)
            est = freq.county_estimates(fit, g)
            rmse, _ = freq.bootstrap_mse(fit, s, g, st.bootstrap_b, seed=_derived_seed(seed, 7))
            lo, hi = freq_interval(est, rmse)
            return CountyEstimate(est, rmse, lo, hi)
        cfg = st.mcmc.with_seed(_derived_seed(seed, 3))
        bern = cache.get("bernoulli") if cache is not None else None
        fit, bern = fit_bayes(self.spec, s, st.priors, cfg, st.transform, bernoulli=bern)
        if cache is not None and bern is not None:
            cache["bernoulli"] = bern
        cp, _ = predict_bayes(fit, g, seed=_derived_seed(seed, 5), batch=st.batch)
        lo, hi = cp.interval
        return CountyEstimate(cp.mean, cp.sd, lo, hi, fit.converged)


class OracleEstimator:
    """Returns the true county means (plus an optional shift) with zero RMSE-hat."""

    def __init__(self, truth, shift=0.0, name="ORACLE"):
        self.truth = np.asarray(truth, dtype=float)
        self.shift = float(shift)
        self.name = name
        self.spec = None

    def __call__(self, sample, grid, seed, cache=None):
        e = self.truth + self.shift
        z = np.zeros_like(e)
        return CountyEstimate(e, z, e.copy(), e.copy())


def as_estimator(e, settings=None):
    if isinstance(e, (str, ModelSpec)):
        return ModelEstimator(e, settings)
    if callable(e):
        return e
    raise ConfigError(f"not an estimator: {e!r}")


@dataclass(frozen=True, eq=False)
class DesignResult:
    name: str
    estimates: np.ndarray      # d x J, NaN rows for failed replicates
    rmse_hat: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    metrics: object
    failures: int
    nonconverged: int


def _replicate(pop, sizes, ests, seed, i):
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), i]))
    sample = draw_sample(pop, sizes, rng)
    rep_seed = _derived_seed(seed, i, 1)
    cache = {}
    out = {}
    for e in ests:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                out[e.name] = e(sample, pop.grid, rep_seed, cache)
        except FAILURES as exc:
            log.warning("replicate %d, %s failed: %s", i, e.name, exc)
            out[e.name] = None
    return out


def run_design(pop, sizes, estimators, d, seed, settings=None, progress=None, workers=1):
    """Draw d samples, run every estimator on each, and summarize per county.

    Replicate i depends only on (seed, i), so results do not depend on the
    number of workers.
    """
    if d < 2:
        raise ValueError("design needs d >= 2 replicates")
    ests = [as_estimator(e, settings) for e in estimators]
    J = pop.n_counties
    store = {e.name: {k: np.full((d, J), np.nan) for k in ("est", "rmse", "lo", "hi")} for e in ests}
    fails = {e.name: 0 for e in ests}
    noconv = {e.name: 0 for e in ests}

    def collect(i, res):
        for name, r in res.items():
            if r is None:
                fails[name] += 1
                continue
            s = store[name]
            s["est"][i], s["rmse"][i], s["lo"][i], s["hi"][i] = r.estimate, r.rmse_hat, r.lo, r.hi
            noconv[name] += int(not r.converged)
        if progress:
            progress(i)

    if workers and workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            futs = [ex.submit(_replicate, pop, sizes, ests, seed, i) for i in range(d)]
            for i, f in enumerate(futs):
                collect(i, f.result())
    else:
        for i in range(d):
            collect(i, _replicate(pop, sizes, ests, seed, i))
    out = {}
    for e in ests:
        s = store[e.name]
        m = county_metrics(s["est"], pop.truth, s["rmse"], s["lo"], s["hi"])
        out[e.name] = DesignResult(e.name, s["est"], s["rmse"], s["lo"], s["hi"], m, fails[e.name],
                                   noconv[e.name])
    return out


# ----------------------------------------------------------------------------
# cross-validation
# ----------------------------------------------------------------------------

def assign_folds(n, K, rng):
    if K < 2:
        raise ConfigError("K must be >= 2")
    if K > n:
        raise ConfigError(f"K={K} exceeds the number of units ({n})")
    folds = np.empty(n, dtype=np.int64)
    folds[rng.permutation(n)] = np.arange(n) % K
    return folds


@dataclass(frozen=True, eq=False)
class CvResult:
    name: str
    pred: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    metrics: object
    folds: np.ndarray


class FoldError(RuntimeError):
    def __init__(self, fold, exc):
        super().__init__(f"fold {fold} failed: {exc}")
        self.fold = fold


def zero_envelope(tau2_2, root):
    """Upper edge (4 sd, back-transformed) of the near-degenerate zero branch."""
    return (4.0 * math.sqrt(tau2_2)) ** root


def predict_holdout(spec, train, test, settings, seed):
    """Unit predictions (and interval bounds for Bayesian models) at the test plots.

    Lower bounds inside the zero branch's envelope are reported as exact 0 so a
    recorded zero counts as covered.
    """
    tr, te = _standardized(train, test.as_grid())
    st = settings
    if not spec.bayesian:
        fit = freq.fit_freq(tr, st.transform)
        _, _, prod = freq.predict_units(fit.lmm, fit.glmm, te, st.transform)
        nan = np.full(len(test), np.nan)
        return prod, nan, nan.copy()
    cfg = st.mcmc.with_seed(_derived_seed(seed, 3))
    fit, _ = fit_bayes(spec, tr, st.priors, cfg, st.transform)
    n = len(test)
    pred, lo, hi = np.empty(n), np.empty(n), np.empty(n)
    s = _derived_seed(seed, 5)
    for j in np.unique(te.county):
        units = np.flatnonzero(te.county == j)
        for a in range(0, units.size, st.batch):
            part = units[a: a + st.batch]
            y = posterior_predict_units(fit, te, part, s).y
            pred[part] = y.mean(axis=1)
            q = np.quantile(y, (0.025, 0.975), axis=1, method=QUANTILE_METHOD)
            lo[part], hi[part] = q[0], q[1]
    if spec.two_stage:
        lo[lo <= zero_envelope(st.priors.tau2_2, st.transform.root)] = 0.0
    return pred, lo, hi


def kfold_cv(data, K, estimator, seed, settings=None):
    settings = settings or Settings()
    spec = ModelSpec.from_name(estimator) if isinstance(estimator, str) else estimator
    if spec.nngp_neighbors != settings.nngp_neighbors:
        spec = replace(spec, nngp_neighbors=settings.nngp_neighbors)
    n = len(data)
    folds = assign_folds(n, K, np.random.default_rng(np.random.SeedSequence([int(seed), 99])))
    pred, lo, hi = np.empty(n), np.empty(n), np.empty(n)
    for f in range(K):
        test = folds == f
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                p, l, h = predict_holdout(spec, data.subset(np.flatnonzero(~test)),
                                          data.subset(np.flatnonzero(test)), settings,
                                          _derived_seed(seed, f, 2))
        except FAILURES as exc:
            raise FoldError(f, exc) from exc
        pred[test], lo[test], hi[test] = p, l, h
    if spec.bayesian:
        m = cv_metrics(pred, data.biomass, lo, hi)
    else:
        m = cv_metrics(pred, data.biomass)
    return CvResult(spec.name, pred, lo, hi, m, folds)
