"""YAML run configuration with strict key checking.

Example (every key optional unless marked)::

    seed: 20240101                # required
    out: results                  # output directory
    workers: 4                    # default: number of available cores
    data:
      plots: plots.csv            # fit / cv
      grid: grid.csv              # predict (and county registry for fit)
      schema:
        x_columns: [tcc, elev, tri]
        v_columns: [tcc, elev, tri]
        id: id
        x: x_km
        y: y_km
        county: county
        biomass: biomass_mg_ha
    transform: {root: 2}
    models: [F_ZI_CVI, B_ZI_CVI_SVI_CRV]
    nngp_neighbors: 15
    priors: {var_fixed: 1000, ig_shape: 2, ig_scale: 1, phi_lower: 0.003, phi_upper: 3}
    mcmc: {chains: 3, iterations: 15000, burn_in: 5000, thin: 10}
    bootstrap: {B: 500}
    predict: {archive: results/B_ZI_CVI_SVI_CRV, unit_csv: false, batch: 2000}
    simulate:
      synthetic: {n_pixels: 100000, n_counties: 12, n_donors: 3000, n_sample: 500, seed: 1}
      k: 5
      d: 50
    cv: {K: 10}
"""
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .bayes.priors import ConfigError, McmcConfig, Priors
from .data import ESTIMATOR_NAMES, ModelSpec, Schema, TransformSpec
from .sim.design import Settings

TOP_KEYS = {"seed", "out", "workers", "data", "transform", "models", "nngp_neighbors", "priors", "mcmc",
            "bootstrap", "predict", "simulate", "cv"}
DATA_KEYS = {"plots", "grid", "schema"}
SCHEMA_KEYS = {"x_columns", "v_columns", "id", "x", "y", "county", "biomass"}
PREDICT_KEYS = {"archive", "unit_csv", "batch"}
SIM_KEYS = {"synthetic", "donors", "pixels", "strata", "sizes", "k", "d", "match_columns"}
SYNTH_KEYS = {"n_pixels", "n_counties", "n_donors", "n_sample", "extent", "seed", "population_seed"}


def _check_keys(d, allowed, where):
    if d is None:
        return {}
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    return d


@dataclass
class RunConfig:
    raw: dict
    base: Path
    seed: int
    out: Path
    workers: int = 1
    schema: Schema = field(default_factory=Schema)
    transform: TransformSpec = field(default_factory=TransformSpec)
    models: tuple = ()
    nngp_neighbors: int = 15
    priors: Priors = field(default_factory=Priors)
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    bootstrap_b: int = 500
    plots: Path = None
    grid: Path = None
    predict: dict = field(default_factory=dict)
    simulate: dict = field(default_factory=dict)
    cv_k: int = 10

    @property
    def specs(self):
        return [ModelSpec.from_name(m, self.nngp_neighbors) for m in self.models]

    def settings(self, batch=2000):
        return Settings(self.transform, self.priors, self.mcmc, self.bootstrap_b, self.nngp_neighbors,
                        batch)

    def digest(self):
        text = yaml.safe_dump(self.raw, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()


def _path(base, value, what, must_exist=True):
    p = Path(value)
    if not p.is_absolute():
        p = base / p
    if must_exist and not p.exists():
        raise ConfigError(f"{what}: {p} does not exist")
    return p


def load_config(path, seed_override=None, out_override=None, workers=None):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    return from_dict(raw, path.parent, seed_override, out_override, workers)


def from_dict(raw, base=Path("."), seed_override=None, out_override=None, workers=None):
    raw = dict(_check_keys(raw, TOP_KEYS, "config"))
    base = Path(base)
    if seed_override is not None:
        raw["seed"] = int(seed_override)
    if "seed" not in raw or raw["seed"] is None:
        raise ConfigError("seed is required")
    try:
        seed = int(raw["seed"])
    except (TypeError, ValueError):
        raise ConfigError("seed must be an integer") from None
    data = _check_keys(raw.get("data"), DATA_KEYS, "data")
    schema = Schema(**_check_keys(data.get("schema"), SCHEMA_KEYS, "data.schema"))
    try:
        transform = TransformSpec(**_check_keys(raw.get("transform"), {"root"}, "transform"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    models = tuple(str(m).strip().upper() for m in (raw.get("models") or ()))
    bad = [m for m in models if m not in ESTIMATOR_NAMES]
    if bad:
        raise ConfigError(f"unknown model(s) {bad}; expected names from {list(ESTIMATOR_NAMES)}")
    m = int(raw.get("nngp_neighbors", 15))
    if m < 1:
        raise ConfigError("nngp_neighbors must be >= 1")
    mcmc = dict(raw.get("mcmc") or {})
    if seed_override is not None or "seed" not in mcmc:
        mcmc["seed"] = seed
    try:
        mc = McmcConfig.from_dict(mcmc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    boot = _check_keys(raw.get("bootstrap"), {"B"}, "bootstrap")
    B = int(boot.get("B", 500))
    if B < 2:
        raise ConfigError("bootstrap.B must be >= 2")
    pred = dict(_check_keys(raw.get("predict"), PREDICT_KEYS, "predict"))
    if "archive" in pred:
        pred["archive"] = _path(base, pred["archive"], "predict.archive", must_exist=False)
    sim = dict(_check_keys(raw.get("simulate"), SIM_KEYS, "simulate"))
    if "synthetic" in sim:
        _check_keys(sim["synthetic"], SYNTH_KEYS, "simulate.synthetic")
    for key in ("donors", "pixels"):
        if key in sim:
            sim[key] = _path(base, sim[key], f"simulate.{key}")
    cvb = _check_keys(raw.get("cv"), {"K"}, "cv")
    K = int(cvb.get("K", 10))
    if K < 2:
        raise ConfigError("cv.K must be >= 2")
    out = Path(out_override) if out_override else _path(base, raw.get("out", "out"), "out", False)
    return RunConfig(
        raw=raw, base=base, seed=seed, out=out, workers=int(workers or raw.get("workers") or os.cpu_count() or 1),
        schema=schema, transform=transform, models=models, nngp_neighbors=m,
        priors=Priors.from_dict(raw.get("priors")), mcmc=mc, bootstrap_b=B,
        plots=_path(base, data["plots"], "data.plots") if data.get("plots") else None,
        grid=_path(base, data["grid"], "data.grid") if data.get("grid") else None,
        predict=pred, simulate=sim, cv_k=K,
    )
