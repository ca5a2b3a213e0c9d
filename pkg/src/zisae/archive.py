"""Fitted-model archives: a directory of plain-text matrices plus a YAML manifest.

Layout::

    manifest.yaml      kind, model, transform, priors, mcmc, counties, predictor
                       names and standardization moments, config digest
    draws.csv          Bayesian: one row per retained draw, "chain" column first
    sites.csv          Bayesian SVI: coordinates carrying w (x, y)
    plots.csv          frequentist: standardized training plots (for the bootstrap)
    summary.csv        parameter, mean, q025, q975
"""
import csv
import math
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from .bayes import BayesFit, ChainDiagnostics, McmcConfig, PosteriorDraws, Priors
from .data import (DataError, ModelSpec, Schema, StandardizeStats, TransformSpec, load_plots,
                   write_plots)
from .freq import FreqFit, GlmmFit, LmmFit
from .nngp import effective_range
from .predict import QUANTILE_METHOD


def _floats(a):
    return [float(v) for v in np.ravel(a)]


def _fmt(v):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def write_summary(path, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "mean", "q025", "q975"])
        for name, m, lo, hi in rows:
            w.writerow([name, _fmt(m), _fmt(lo), _fmt(hi)])


def bayes_summary(draws):
    rows = []
    for name, v in draws.columns():
        lo, hi = np.quantile(v, (0.025, 0.975), method=QUANTILE_METHOD)
        rows.append((name, float(np.mean(v)), float(lo), float(hi)))
    if "phi" in draws:
        phi = draws["phi"]
        lo, hi = np.quantile(phi, (0.025, 0.975), method=QUANTILE_METHOD)
        rows.append(("effective_range", effective_range(float(np.mean(phi))),
                     effective_range(float(hi)), effective_range(float(lo))))
    return rows


def freq_summary(fit):
    lmm, glmm = fit.lmm, fit.glmm
    rows = []
    se_b = np.sqrt(np.diag(lmm.cov_beta)) if lmm.cov_beta is not None else np.full(lmm.coef.size, np.nan)
    for k, v in enumerate(lmm.coef):
        name = "beta0" if k == 0 else f"beta[{k - 1}]"
        rows.append((name, v, v - 1.96 * se_b[k], v + 1.96 * se_b[k]))
    rows.append(("sigma2_beta_county", lmm.sigma2_b0_hat, None, None))
    rows.append(("tau2", lmm.tau2_hat, None, None))
    se_a = glmm.se if glmm.se is not None else np.full(glmm.coef.size, np.nan)
    for k, v in enumerate(glmm.coef):
        name = "alpha0" if k == 0 else f"alpha[{k - 1}]"
        rows.append((name, v, v - 1.96 * se_a[k], v + 1.96 * se_a[k]))
    rows.append(("sigma2_alpha_county", glmm.sigma2_a0_hat, None, None))
    return rows


def _common(spec, transform, data, stats, digest):
    return {
        "model": spec.name,
        "nngp_neighbors": int(spec.nngp_neighbors),
        "transform": {"root": int(transform.root)},
        "counties": list(data.county_labels),
        "x_names": list(data.x_names),
        "v_names": list(data.v_names),
        "standardize": stats.to_dict(),
        "config_digest": digest,
    }


def save_bayes(directory, fit, data, stats, digest=""):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    man = _common(fit.spec, fit.transform, data, stats, digest)
    mc = asdict(fit.config)
    if mc["chain_seeds"] is not None:
        mc["chain_seeds"] = list(mc["chain_seeds"])
    man.update({
        "kind": "bayesian",
        "priors": asdict(fit.priors),
        "mcmc": mc,
        "M": int(fit.M),
        "converged": bool(fit.converged),
        "max_rhat": float(fit.diagnostics.max_rhat),
        "acceptance": {k: float(v) for k, v in fit.diagnostics.acceptance.items()},
    })
    fit.draws.to_csv(d / "draws.csv")
    if fit.spec.spatial_intercept:
        with (d / "sites.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y"])
            for x, y in fit.gauss_coords:
                w.writerow([repr(float(x)), repr(float(y))])
    write_summary(d / "summary.csv", bayes_summary(fit.draws))
    (d / "manifest.yaml").write_text(yaml.safe_dump(man, sort_keys=True))
    return d


def save_freq(directory, fit, data_std, stats, digest="", spec=None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    spec = spec or ModelSpec.from_name("F_ZI_CVI")
    man = _common(spec, fit.transform, data_std, stats, digest)
    man.update({
        "kind": "frequentist",
        "lmm": {"beta0": fit.lmm.beta0_hat, "beta": _floats(fit.lmm.beta_hat),
                "sigma2_b0": fit.lmm.sigma2_b0_hat, "tau2": fit.lmm.tau2_hat, "blups": _floats(fit.lmm.blups)},
        "glmm": {"alpha0": fit.glmm.alpha0_hat, "alpha": _floats(fit.glmm.alpha_hat),
                 "sigma2_a0": fit.glmm.sigma2_a0_hat, "modes": _floats(fit.glmm.modes),
                 "ridge": fit.glmm.ridge},
    })
    write_plots(d / "plots.csv", data_std)
    write_summary(d / "summary.csv", freq_summary(fit))
    (d / "manifest.yaml").write_text(yaml.safe_dump(man, sort_keys=True))
    return d


class Archive:
    def __init__(self, directory):
        self.dir = Path(directory)
        mf = self.dir / "manifest.yaml"
        if not mf.exists():
            raise DataError(f"{self.dir}: not a model archive (manifest.yaml missing)")
        self.manifest = yaml.safe_load(mf.read_text())
        m = self.manifest
        self.spec = ModelSpec.from_name(m["model"], m.get("nngp_neighbors", 15))
        self.transform = TransformSpec(**m["transform"])
        self.counties = tuple(m["counties"])
        self.x_names = tuple(m["x_names"])
        self.v_names = tuple(m["v_names"])
        self.stats = StandardizeStats.from_dict(m["standardize"])

    @property
    def kind(self):
        return self.manifest["kind"]

    def schema(self, base=None):
        base = base or Schema()
        return Schema(self.x_names, self.v_names, base.id, base.x, base.y, base.county, base.biomass)

    def bayes_fit(self):
        m = self.manifest
        draws = PosteriorDraws.from_csv(self.dir / "draws.csv")
        if self.spec.spatial_intercept:
            coords = np.loadtxt(self.dir / "sites.csv", delimiter=",", skiprows=1, ndmin=2)
        else:
            coords = np.empty((0, 2))
        mc = dict(m["mcmc"])
        return BayesFit(self.spec, self.transform, Priors(**m["priors"]), McmcConfig.from_dict(mc), draws,
                        ChainDiagnostics(threshold=mc.get("rhat_threshold", 1.1)), coords, len(self.counties))

    def freq_fit(self):
        m = self.manifest
        L, G = m["lmm"], m["glmm"]
        lmm = LmmFit(L["beta0"], np.array(L["beta"]), L["sigma2_b0"], L["tau2"], np.array(L["blups"]))
        glmm = GlmmFit(G["alpha0"], np.array(G["alpha"]), G["sigma2_a0"], np.array(G["modes"]),
                       ridge=G.get("ridge", 0.0))
        return FreqFit(lmm, glmm, self.transform, len(self.counties))

    def training_plots(self):
        sch = Schema(self.x_names, self.v_names)
        return load_plots(self.dir / "plots.csv", sch, self.counties)
