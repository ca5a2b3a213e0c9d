"""Command line: zisae {fit,predict,simulate,cv} --config run.yaml

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure, 5 a fit finished but failed the convergence check.
"""
import argparse
import csv
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import archive as arc
from . import freq
from .bayes import fit_bayes
from .bayes.priors import ConfigError
from .config import load_config
from .data import (DataError, load_grid, load_plots, read_county_labels, register_counties,
                   standardize_predictors)
from .predict import UnitSummary, predict_bayes, write_county_csv, write_unit_csv
from .sim import ModelEstimator, freq_interval, run_design
from .sim.design import FoldError, kfold_cv
from .sim.population import generate_population

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_CONVERGENCE = 0, 2, 3, 4, 5

log = logging.getLogger("zisae")


def _fmt(v):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def _predictor_names(schema):
    return tuple(dict.fromkeys(schema.x_columns + schema.v_columns))


def _load_training(cfg):
    if cfg.plots is None:
        raise ConfigError("data.plots is required")
    labels = read_county_labels(cfg.plots, cfg.schema)
    if cfg.grid is not None:
        labels = register_counties(labels, read_county_labels(cfg.grid, cfg.schema))
    return load_plots(cfg.plots, cfg.schema, labels)


# ----------------------------------------------------------------------------

def cmd_fit(cfg):
    if not cfg.models:
        raise ConfigError("models must list at least one estimator")
    data = _load_training(cfg)
    std, stats = standardize_predictors(data)
    cfg.out.mkdir(parents=True, exist_ok=True)
    status = EXIT_OK
    bern = None
    for spec in cfg.specs:
        target = cfg.out / spec.name
        if spec.bayesian:
            fit, bern = fit_bayes(spec, std, cfg.priors, cfg.mcmc, cfg.transform, bernoulli=bern)
            arc.save_bayes(target, fit, std, stats, cfg.digest())
            if not fit.converged:
                log.warning("%s: split R-hat above %.2f (max %.3f)", spec.name, cfg.mcmc.rhat_threshold,
                            fit.diagnostics.max_rhat)
                status = EXIT_CONVERGENCE
        else:
            fit = freq.fit_freq(std, cfg.transform)
            arc.save_freq(target, fit, std, stats, cfg.digest(), spec)
        log.info("wrote %s", target)
    return status


def cmd_predict(cfg):
    where = cfg.predict.get("archive")
    if where is None:
        raise ConfigError("predict.archive is required")
    if cfg.grid is None:
        raise ConfigError("data.grid is required")
    a = arc.Archive(where)
    schema = a.schema(cfg.schema)
    grid = load_grid(cfg.grid, schema, a.counties)
    g, _ = standardize_predictors(grid, a.stats)
    cfg.out.mkdir(parents=True, exist_ok=True)
    batch = int(cfg.predict.get("batch", 2000))
    sizes = g.county_sizes()
    present = [j for j in range(len(a.counties)) if sizes[j] > 0]
    labels = [a.counties[j] for j in present]
    if a.kind == "bayesian":
        fit = a.bayes_fit()
        cp, units = predict_bayes(fit, g, cfg.seed, batch, bool(cfg.predict.get("unit_csv", False)),
                                  counties=present)
        lo, hi = cp.interval
        write_county_csv(cfg.out / "county_estimates.csv", labels, cp.mean[present], cp.sd[present],
                         lo[present], hi[present], cp.M)
        if units is not None:
            write_unit_csv(cfg.out / "unit_predictions.csv", grid, units)
    else:
        if len(present) != len(a.counties):
            raise DataError("every registered county needs grid units for the frequentist bootstrap")
        fit = a.freq_fit()
        _, p_hat, prod = freq.predict_units(fit.lmm, fit.glmm, g, fit.transform)
        est = freq.estimate_county_means(prod, g.county, len(a.counties))
        rmse, _ = freq.bootstrap_mse(fit, a.training_plots(), g, cfg.bootstrap_b, seed=cfg.seed)
        lo, hi = freq_interval(est, rmse)
        write_county_csv(cfg.out / "county_estimates.csv", labels, est, rmse, lo, hi, None)
        if cfg.predict.get("unit_csv"):
            write_unit_csv(cfg.out / "unit_predictions.csv", grid, UnitSummary(p_hat, prod))
    return EXIT_OK


def _simulation_inputs(cfg):
    sim = cfg.simulate
    if "synthetic" in sim:
        from .synthetic import make_population, make_region

        syn = dict(sim["synthetic"])
        pop_seed = syn.pop("population_seed", cfg.seed)
        region = make_region(**syn)
        return make_population(region, int(sim.get("k", 5)), pop_seed), region.sizes
    if "donors" not in sim or "pixels" not in sim:
        raise ConfigError("simulate needs either a synthetic block or donors + pixels files")
    labels = register_counties(read_county_labels(sim["donors"], cfg.schema),
                               read_county_labels(sim["pixels"], cfg.schema))
    donors = load_plots(sim["donors"], cfg.schema, labels)
    pixels = load_grid(sim["pixels"], cfg.schema, labels)
    strata = sim.get("strata")
    names = _predictor_names(cfg.schema)

    def stratum(d):
        if strata is None:
            return None
        if strata not in names:
            raise ConfigError(f"strata column {strata!r} must be a declared predictor column")
        M = d.X if strata in d.x_names else d.V
        nm = d.x_names if strata in d.x_names else d.v_names
        return M[:, nm.index(strata)]

    match = tuple(sim.get("match_columns") or [c for c in names if c != strata])
    pop = generate_population(pixels, donors, int(sim.get("k", 5)), stratum(pixels), stratum(donors),
                              match, np.random.default_rng(np.random.SeedSequence([cfg.seed, 17])))
    if "sizes" in sim:
        sizes = np.array([int(sim["sizes"].get(lab, 0)) for lab in labels])
    else:
        sizes = donors.county_sizes()
    return pop, sizes


def cmd_simulate(cfg):
    if not cfg.models:
        raise ConfigError("models must list at least one estimator")
    d = int(cfg.simulate.get("d", 100))
    if d < 2:
        raise ConfigError("simulate.d must be >= 2")
    pop, sizes = _simulation_inputs(cfg)
    settings = cfg.settings()
    res = run_design(pop, sizes, [ModelEstimator(s, settings) for s in cfg.specs], d, cfg.seed,
                     workers=cfg.workers)
    cfg.out.mkdir(parents=True, exist_ok=True)
    labels = pop.grid.county_labels
    with (cfg.out / "simulation_metrics.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["estimator", "county", "truth", "rmse", "bias", "rmse_hat_bias", "coverage",
                    "replicates", "failures"])
        for name, r in res.items():
            m = r.metrics
            for j, lab in enumerate(labels):
                w.writerow([name, lab, _fmt(pop.truth[j]), _fmt(m.rmse[j]), _fmt(m.bias[j]),
                            _fmt(m.rmse_hat_bias[j]), _fmt(m.coverage[j]), m.n_ok, m.n_failed])
    status = EXIT_OK
    for name, r in res.items():
        if r.failures > 0.10 * d:
            log.error("%s failed on %d of %d replicates", name, r.failures, d)
            status = EXIT_NUMERIC
        elif r.nonconverged and status == EXIT_OK:
            status = EXIT_CONVERGENCE
    return status


def cmd_cv(cfg):
    if not cfg.models:
        raise ConfigError("models must list at least one estimator")
    data = _load_training(cfg)
    settings = cfg.settings()
    cfg.out.mkdir(parents=True, exist_ok=True)
    rows = []
    for spec in cfg.specs:
        r = kfold_cv(data, cfg.cv_k, spec, cfg.seed, settings)
        m = r.metrics
        rows.append([spec.name, cfg.cv_k, m.n, _fmt(m.bias), _fmt(m.rmspe),
                     _fmt(m.coverage) if spec.bayesian else ""])
    with (cfg.out / "cv_metrics.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["estimator", "K", "n", "bias", "rmspe", "coverage"])
        w.writerows(rows)
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "simulate": cmd_simulate, "cv": cmd_cv}


def build_parser():
    p = argparse.ArgumentParser(prog="zisae", description="Zero-inflated small area estimation of biomass")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--seed", type=int, default=None, help="override the configured master seed")
    p.add_argument("--workers", type=int, default=None, help="parallel workers for replicate loops")
    p.add_argument("--out", default=None, help="output directory (overrides config)")
    p.add_argument("--archive", default=None, help="model archive for predict (overrides config)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed, args.out, args.workers)
        if args.archive:
            cfg.predict["archive"] = Path(args.archive)
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore", RuntimeWarning)
            return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (freq.ConvergenceError, np.linalg.LinAlgError, FloatingPointError, FoldError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
