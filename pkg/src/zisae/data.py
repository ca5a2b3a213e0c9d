"""Plots, prediction grids, counties and estimator specifications.

Tabular inputs are RFC-4180 CSV with a header row. Plot files carry
``id, x_km, y_km, county, biomass_mg_ha`` plus named predictor columns;
grid files carry the same minus ``id`` and ``biomass_mg_ha``. Coordinates
must already be projected planar kilometres.
"""
import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)


class DataError(ValueError):
    """Raised for unreadable or invalid input tables."""


# ----------------------------------------------------------------------------
# specifications
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class TransformSpec:
    root: int = 2

    def __post_init__(self):
        if self.root not in (2, 4):
            raise ValueError(f"root must be 2 or 4, got {self.root!r}")


ESTIMATOR_NAMES = (
    "F_ZI_CVI",
    "B_CVI",
    "B_CVC",
    "B_ZI_CVI",
    "B_ZI_CVC",
    "B_ZI_CVI_CRV",
    "B_ZI_CVC_CRV",
    "B_ZI_CVI_SVI_CRV",
    "B_ZI_CVC_SVI_CRV",
)


@dataclass(frozen=True)
class ModelSpec:
    """One of the nine estimators.

    Only the nine legal flag combinations can be constructed: the
    frequentist estimator is the two-stage county-intercept model, the
    single-stage Bayesian models carry neither CRV nor SVI, and SVI is only
    offered on top of CRV.
    """

    paradigm: str
    two_stage: bool
    varying_coefficients: bool = False
    county_residual_variance: bool = False
    spatial_intercept: bool = False
    nngp_neighbors: int = 15

    def __post_init__(self):
        if self.paradigm not in ("frequentist", "bayesian"):
            raise ValueError(f"unknown paradigm {self.paradigm!r}")
        if self.nngp_neighbors < 1:
            raise ValueError("nngp_neighbors must be >= 1")
        if self.name not in ESTIMATOR_NAMES:
            raise ValueError(f"illegal estimator combination {self.name}")

    @property
    def bayesian(self):
        return self.paradigm == "bayesian"

    @property
    def name(self):
        parts = ["F" if self.paradigm == "frequentist" else "B"]
        if self.two_stage:
            parts.append("ZI")
        parts.append("CVC" if self.varying_coefficients else "CVI")
        if self.spatial_intercept:
            parts.append("SVI")
        if self.county_residual_variance:
            parts.append("CRV")
        return "_".join(parts)

    @classmethod
    def from_name(cls, name, nngp_neighbors=15):
        key = name.strip().upper().replace(" ", "_")
        if key not in ESTIMATOR_NAMES:
            raise ValueError(f"unknown estimator {name!r}; expected one of {', '.join(ESTIMATOR_NAMES)}")
        tokens = set(key.split("_"))
        return cls(
            paradigm="frequentist" if key.startswith("F") else "bayesian",
            two_stage="ZI" in tokens,
            varying_coefficients="CVC" in tokens,
            county_residual_variance="CRV" in tokens,
            spatial_intercept="SVI" in tokens,
            nngp_neighbors=nngp_neighbors,
        )

    def __str__(self):
        return self.name


def all_estimators(nngp_neighbors=15):
    return [ModelSpec.from_name(n, nngp_neighbors) for n in ESTIMATOR_NAMES]


# ----------------------------------------------------------------------------
# records and columnar containers
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class PlotRecord:
    id: str
    x: float
    y: float
    county_id: int
    biomass: float
    predictors_x: tuple
    predictors_v: tuple


@dataclass(frozen=True)
class GridUnit:
    x: float
    y: float
    county_id: int
    predictors_x: tuple
    predictors_v: tuple


@dataclass(frozen=True)
class Schema:
    """Column names of a plot or grid table."""

    x_columns: tuple = ()
    v_columns: tuple = ()
    id: str = "id"
    x: str = "x_km"
    y: str = "y_km"
    county: str = "county"
    biomass: str = "biomass_mg_ha"

    def __post_init__(self):
        object.__setattr__(self, "x_columns", tuple(self.x_columns))
        object.__setattr__(self, "v_columns", tuple(self.v_columns))

    @property
    def predictor_columns(self):
        seen = []
        for c in self.x_columns + self.v_columns:
            if c not in seen:
                seen.append(c)
        return tuple(seen)


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GridData:
    """Prediction units; row order is the unit index used for random streams."""

    coords: np.ndarray
    county: np.ndarray
    X: np.ndarray
    V: np.ndarray
    x_names: tuple
    v_names: tuple
    county_labels: tuple

    def __post_init__(self):
        for name in ("coords", "county", "X", "V"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    def __len__(self):
        return self.coords.shape[0]

    def __iter__(self) -> Iterator[GridUnit]:
        for i in range(len(self)):
            yield GridUnit(float(self.coords[i, 0]), float(self.coords[i, 1]), int(self.county[i]),
                           tuple(self.X[i]), tuple(self.V[i]))

    @property
    def n_counties(self):
        return len(self.county_labels)

    def county_sizes(self):
        return np.bincount(self.county, minlength=self.n_counties)

    def subset(self, idx):
        idx = np.asarray(idx)
        return GridData(self.coords[idx], self.county[idx], self.X[idx], self.V[idx],
                        self.x_names, self.v_names, self.county_labels)


@dataclass(frozen=True)
class PlotData:
    """Observed plots in columnar form (one row per PlotRecord)."""

    ids: np.ndarray
    coords: np.ndarray
    county: np.ndarray
    biomass: np.ndarray
    X: np.ndarray
    V: np.ndarray
    x_names: tuple
    v_names: tuple
    county_labels: tuple

    def __post_init__(self):
        for name in ("ids", "coords", "county", "biomass", "X", "V"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    def __len__(self):
        return self.biomass.shape[0]

    def __iter__(self) -> Iterator[PlotRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def record(self, i):
        return PlotRecord(str(self.ids[i]), float(self.coords[i, 0]), float(self.coords[i, 1]),
                          int(self.county[i]), float(self.biomass[i]), tuple(self.X[i]), tuple(self.V[i]))

    @property
    def n_counties(self):
        return len(self.county_labels)

    @property
    def presence(self):
        return derive_presence(self)

    def county_sizes(self):
        return np.bincount(self.county, minlength=self.n_counties)

    def subset(self, idx):
        idx = np.asarray(idx)
        return PlotData(self.ids[idx], self.coords[idx], self.county[idx], self.biomass[idx],
                        self.X[idx], self.V[idx], self.x_names, self.v_names, self.county_labels)

    def as_grid(self):
        return GridData(self.coords, self.county, self.X, self.V, self.x_names, self.v_names,
                        self.county_labels)


@dataclass(frozen=True)
class CountyTable:
    labels: tuple
    n_obs: np.ndarray
    n_grid: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "n_obs", _frozen(np.asarray(self.n_obs, dtype=np.int64)))
        object.__setattr__(self, "n_grid", _frozen(np.asarray(self.n_grid, dtype=np.int64)))
        if len(self.n_obs) != len(self.labels) or len(self.n_grid) != len(self.labels):
            raise ValueError("county table arrays must match the label count")
        if np.any(self.n_obs < 0):
            raise ValueError("negative county sample size")

    def __len__(self):
        return len(self.labels)

    def index(self, label):
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise KeyError(f"unknown county {label!r}") from None

    @classmethod
    def build(cls, plots=None, grid=None):
        src = grid if grid is not None else plots
        if src is None:
            raise ValueError("need plots or grid")
        labels = src.county_labels
        n_obs = plots.county_sizes() if plots is not None else np.zeros(len(labels), int)
        n_grid = grid.county_sizes() if grid is not None else np.zeros(len(labels), int)
        if plots is not None and plots.county_labels != labels:
            raise ValueError("plots and grid use different county registries")
        if grid is not None and np.any(n_grid < 1):
            missing = [labels[j] for j in np.flatnonzero(n_grid < 1)]
            raise DataError(f"counties without grid units: {missing}")
        return cls(labels, n_obs, n_grid)


# ----------------------------------------------------------------------------
# CSV ingestion
# ----------------------------------------------------------------------------

def _read_rows(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: no records") from None
        header = [h.strip() for h in header]
        rows = [r for r in reader if r and any(cell.strip() for cell in r)]
    if not rows:
        raise DataError(f"{path}: no records")
    return header, rows


def _column_index(header, wanted, path):
    missing = [c for c in wanted if c not in header]
    if missing:
        raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
    return {c: header.index(c) for c in wanted}


def _number(cell, col, rowno, path):
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"{path}: row {rowno}: column {col!r} is not numeric ({cell!r})") from None
    if not math.isfinite(v):
        raise DataError(f"{path}: row {rowno}: column {col!r} is not finite ({cell!r})")
    return v


def register_counties(*label_lists):
    labels = set()
    for ll in label_lists:
        labels.update(str(x) for x in ll)
    return tuple(sorted(labels))


def read_county_labels(path, schema=None):
    schema = schema or Schema()
    header, rows = _read_rows(path)
    idx = _column_index(header, [schema.county], path)[schema.county]
    return register_counties(r[idx].strip() for r in rows)


def _parse_table(path, schema, with_plot_columns, counties):
    header, rows = _read_rows(path)
    wanted = [schema.x, schema.y, schema.county, *schema.predictor_columns]
    if with_plot_columns:
        wanted = [schema.id, *wanted, schema.biomass]
    cols = _column_index(header, wanted, path)
    labels_raw = []
    for rowno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {rowno}: expected {len(header)} cells, found {len(row)}")
        labels_raw.append(row[cols[schema.county]].strip())
    registry = tuple(counties) if counties is not None else register_counties(labels_raw)
    lookup = {lab: j for j, lab in enumerate(registry)}
    n = len(rows)
    coords = np.empty((n, 2))
    county = np.empty(n, dtype=np.int64)
    pred = {c: np.empty(n) for c in schema.predictor_columns}
    biomass = np.empty(n)
    ids = []
    for i, row in enumerate(rows):
        rowno = i + 2
        lab = labels_raw[i]
        if lab not in lookup:
            raise DataError(f"{path}: row {rowno}: unknown county {lab!r}")
        county[i] = lookup[lab]
        coords[i, 0] = _number(row[cols[schema.x]], schema.x, rowno, path)
        coords[i, 1] = _number(row[cols[schema.y]], schema.y, rowno, path)
        for c in schema.predictor_columns:
            pred[c][i] = _number(row[cols[c]], c, rowno, path)
        if with_plot_columns:
            ids.append(row[cols[schema.id]].strip())
            b = _number(row[cols[schema.biomass]], schema.biomass, rowno, path)
            if b < 0:
                raise DataError(f"{path}: row {rowno}: negative biomass {b}")
            biomass[i] = b
    X = np.column_stack([pred[c] for c in schema.x_columns]) if schema.x_columns else np.empty((n, 0))
    V = np.column_stack([pred[c] for c in schema.v_columns]) if schema.v_columns else np.empty((n, 0))
    return registry, coords, county, X, V, np.array(ids, dtype=object), biomass


def load_plots(path, schema=None, counties=None):
    """Read plot records; ``counties`` pins the registry (unknown labels then fail)."""
    schema = schema or Schema()
    registry, coords, county, X, V, ids, biomass = _parse_table(path, schema, True, counties)
    data = PlotData(ids, coords, county, biomass, X, V, schema.x_columns, schema.v_columns, registry)
    if not np.any(biomass > 0):
        warnings.warn("continuous stage has no data: every plot has zero biomass", stacklevel=2)
    return data


def load_grid(path, schema=None, counties=None):
    schema = schema or Schema()
    registry, coords, county, X, V, _, _ = _parse_table(path, schema, False, counties)
    return GridData(coords, county, X, V, schema.x_columns, schema.v_columns, registry)


def _fmt(v):
    return repr(float(v))


def _predictor_table(data):
    cols = {}
    for j, name in enumerate(data.x_names):
        cols[name] = data.X[:, j]
    for j, name in enumerate(data.v_names):
        cols.setdefault(name, data.V[:, j])
    return cols


def write_plots(path, data, schema=None):
    schema = schema or Schema(data.x_names, data.v_names)
    cols = _predictor_table(data)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([schema.id, schema.x, schema.y, schema.county, schema.biomass, *cols])
        for i in range(len(data)):
            w.writerow([data.ids[i], _fmt(data.coords[i, 0]), _fmt(data.coords[i, 1]),
                        data.county_labels[data.county[i]], _fmt(data.biomass[i]),
                        *(_fmt(c[i]) for c in cols.values())])


def write_grid(path, grid, schema=None):
    schema = schema or Schema(grid.x_names, grid.v_names)
    cols = _predictor_table(grid)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([schema.x, schema.y, schema.county, *cols])
        for i in range(len(grid)):
            w.writerow([_fmt(grid.coords[i, 0]), _fmt(grid.coords[i, 1]),
                        grid.county_labels[grid.county[i]], *(_fmt(c[i]) for c in cols.values())])


# ----------------------------------------------------------------------------
# predictors and presence
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class StandardizeStats:
    means: Mapping[str, float] = field(default_factory=dict)
    sds: Mapping[str, float] = field(default_factory=dict)

    def to_dict(self):
        return {"means": dict(self.means), "sds": dict(self.sds)}

    @classmethod
    def from_dict(cls, d):
        return cls({k: float(v) for k, v in d["means"].items()}, {k: float(v) for k, v in d["sds"].items()})


def _column_moments(data, constant):
    means, sds = {}, {}
    cols = _predictor_table(data)
    if len(data) < 2:
        raise DataError("standardizing needs at least 2 records")
    for name, col in cols.items():
        mu = float(np.mean(col))
        sd = float(np.std(col, ddof=1))
        if sd == 0.0:
            if name not in constant:
                raise DataError(f"predictor column {name!r} has zero variance")
            sd = 1.0
        means[name] = mu
        sds[name] = sd
    return StandardizeStats(means, sds)


def _apply(data, stats, inverse=False):
    def tr(M, names):
        out = np.array(M, dtype=float, copy=True)
        for j, name in enumerate(names):
            if name not in stats.means:
                raise DataError(f"no standardization moments for predictor {name!r}")
            mu, sd = stats.means[name], stats.sds[name]
            out[:, j] = out[:, j] * sd + mu if inverse else (out[:, j] - mu) / sd
        return out

    X = tr(data.X, data.x_names)
    V = tr(data.V, data.v_names)
    if isinstance(data, PlotData):
        return PlotData(data.ids, data.coords, data.county, data.biomass, X, V,
                        data.x_names, data.v_names, data.county_labels)
    return GridData(data.coords, data.county, X, V, data.x_names, data.v_names, data.county_labels)


def standardize_predictors(data, stats=None, constant: Sequence[str] = ()):
    """Centre and scale predictors; reuse ``stats`` (training moments) when given.

    Columns listed in ``constant`` may have zero variance and are only centred.
    """
    if stats is None:
        stats = _column_moments(data, set(constant))
    return _apply(data, stats), stats


def unstandardize_predictors(data, stats):
    return _apply(data, stats, inverse=True)


def derive_presence(data):
    """z = 1 exactly where biomass is strictly positive."""
    biomass = data.biomass if hasattr(data, "biomass") else np.asarray(data, dtype=float)
    z = (np.asarray(biomass) > 0.0).astype(np.int8)
    if z.size and not z.any():
        warnings.warn("continuous stage has no data: every plot has zero biomass", stacklevel=2)
    return z
