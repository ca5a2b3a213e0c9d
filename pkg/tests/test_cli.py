import csv
import filecmp

import numpy as np
import pytest
import yaml

from zisae import cli
from zisae.data import GridData, write_grid, write_plots

MCMC = {"chains": 2, "iterations": 300, "burn_in": 100, "thin": 2}


@pytest.fixture
def files(tmp_path, small_sample, small_population):
    write_plots(tmp_path / "plots.csv", small_sample)
    write_grid(tmp_path / "grid.csv", small_population.grid.subset(np.arange(0, 3000, 5)))
    return tmp_path


def config(where, name="run.yaml", **over):
    cfg = {
        "seed": 7,
        "data": {"plots": "plots.csv", "grid": "grid.csv",
                 "schema": {"x_columns": ["tcc", "elev", "tri"], "v_columns": ["tcc", "elev", "tri"]}},
        "models": ["B_ZI_CVI_SVI_CRV"],
        "nngp_neighbors": 8,
        "mcmc": dict(MCMC),
        "bootstrap": {"B": 10},
        "cv": {"K": 3},
    }
    cfg.update(over)
    p = where / name
    p.write_text(yaml.safe_dump(cfg))
    return str(p)


def run(*args):
    return cli.main(list(args))


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def same_tree(a, b, names):
    return all(filecmp.cmp(a / n, b / n, shallow=False) for n in names)


@pytest.fixture
def fitted(files):
    c = config(files)
    code = run("fit", "--config", c, "--out", str(files / "o1"))
    assert code in (0, 5)
    return files, c, code


def test_fit_writes_archive_and_is_byte_identical(fitted):
    files, c, code = fitted
    assert run("fit", "--config", c, "--out", str(files / "o2")) == code
    names = ["manifest.yaml", "draws.csv", "sites.csv", "summary.csv"]
    assert same_tree(files / "o1" / "B_ZI_CVI_SVI_CRV", files / "o2" / "B_ZI_CVI_SVI_CRV", names)
    rows = {r["parameter"]: r for r in read_csv(files / "o1" / "B_ZI_CVI_SVI_CRV" / "summary.csv")}
    assert "effective_range" in rows
    assert float(rows["effective_range"]["q025"]) <= float(rows["effective_range"]["q975"])


def test_predict_batch_invariant(fitted):
    files, c, _ = fitted
    arch = str(files / "o1" / "B_ZI_CVI_SVI_CRV")
    c2 = config(files, "p.yaml", predict={"archive": arch, "unit_csv": True, "batch": 37})
    c3 = config(files, "q.yaml", predict={"archive": arch, "unit_csv": True, "batch": 5000})
    assert run("predict", "--config", c2, "--out", str(files / "pa")) == 0
    assert run("predict", "--config", c3, "--out", str(files / "pb")) == 0
    assert same_tree(files / "pa", files / "pb", ["county_estimates.csv", "unit_predictions.csv"])
    rows = read_csv(files / "pa" / "county_estimates.csv")
    assert [r["county"] for r in rows] == ["C01", "C02", "C03", "C04"]
    for r in rows:
        assert float(r["q025"]) <= float(r["estimate"]) <= float(r["q975"])
        assert float(r["sd"]) > 0
    units = read_csv(files / "pa" / "unit_predictions.csv")
    assert len(units) == 600
    assert all(0 <= float(u["prob_presence"]) <= 1 for u in units)


def test_predict_single_unit_grid(fitted, small_population):
    files, _, _ = fitted
    g = small_population.grid
    i = int(np.flatnonzero(g.county == 2)[0])
    write_grid(files / "one.csv", g.subset([i]))
    c = config(files, "one.yaml", data={"grid": "one.csv", "schema": {"x_columns": ["tcc", "elev", "tri"],
                                                                      "v_columns": ["tcc", "elev", "tri"]}},
               predict={"archive": str(files / "o1" / "B_ZI_CVI_SVI_CRV")})
    assert run("predict", "--config", c, "--out", str(files / "p1")) == 0
    rows = read_csv(files / "p1" / "county_estimates.csv")
    assert len(rows) == 1 and rows[0]["county"] == "C03"


def test_predict_unknown_county_is_data_error(fitted, small_population):
    files, _, _ = fitted
    g = small_population.grid.subset([0, 1])
    bad = GridData(g.coords, g.county, g.X, g.V, g.x_names, g.v_names, ("ZZ9",) + tuple(g.county_labels[1:]))
    write_grid(files / "bad.csv", bad)
    c = config(files, "bad.yaml", data={"grid": "bad.csv", "schema": {"x_columns": ["tcc", "elev", "tri"],
                                                                      "v_columns": ["tcc", "elev", "tri"]}},
               predict={"archive": str(files / "o1" / "B_ZI_CVI_SVI_CRV")})
    assert run("predict", "--config", c, "--out", str(files / "pz")) == 3


def test_predict_missing_column_is_data_error(fitted):
    files, _, _ = fitted
    text = (files / "grid.csv").read_text().replace("elev", "elevation", 1)
    (files / "g2.csv").write_text(text)
    c = config(files, "g2.yaml", data={"grid": "g2.csv", "schema": {"x_columns": ["tcc", "elev", "tri"],
                                                                    "v_columns": ["tcc", "elev", "tri"]}},
               predict={"archive": str(files / "o1" / "B_ZI_CVI_SVI_CRV")})
    assert run("predict", "--config", c, "--out", str(files / "pm")) == 3


def test_frequentist_fit_and_predict(files):
    c = config(files, models=["F_ZI_CVI"], predict={"archive": str(files / "f" / "F_ZI_CVI")})
    assert run("fit", "--config", c, "--out", str(files / "f")) == 0
    assert (files / "f" / "F_ZI_CVI" / "plots.csv").exists()
    assert run("predict", "--config", c, "--out", str(files / "fa")) == 0
    assert run("predict", "--config", c, "--out", str(files / "fb")) == 0
    assert same_tree(files / "fa", files / "fb", ["county_estimates.csv"])
    rows = read_csv(files / "fa" / "county_estimates.csv")
    assert len(rows) == 4 and all(r["M"] == "" for r in rows)


def test_config_errors(files, capsys):
    assert run("fit", "--config", config(files, bogus=1)) == 2
    assert "bogus" in capsys.readouterr().err
    c = yaml.safe_load(open(config(files)))
    del c["seed"]
    (files / "noseed.yaml").write_text(yaml.safe_dump(c))
    assert run("fit", "--config", str(files / "noseed.yaml")) == 2
    assert "seed" in capsys.readouterr().err
    # --seed supplies it
    assert run("cv", "--config", str(files / "noseed.yaml"), "--seed", "3", "--out", str(files / "s")) in (0, 5)
    assert run("cv", "--config", config(files, cv={"K": 1})) == 2
    assert run("fit", "--config", config(files, models=["B_NOPE"])) == 2
    assert run("predict", "--config", config(files)) == 2


def test_negative_biomass_is_data_error(files):
    text = (files / "plots.csv").read_text().splitlines()
    head = text[0].split(",")
    k = head.index("biomass_mg_ha")
    row = text[1].split(",")
    row[k] = "-1.0"
    text[1] = ",".join(row)
    (files / "plots.csv").write_text("\n".join(text) + "\n")
    assert run("fit", "--config", config(files, models=["F_ZI_CVI"]), "--out", str(files / "x")) == 3


def test_nonconvergence_exit_code(files):
    c = config(files, models=["B_ZI_CVI_SVI_CRV"], mcmc={"chains": 2, "iterations": 24, "burn_in": 2, "thin": 1})
    assert run("fit", "--config", c, "--out", str(files / "nc")) == 5
    man = yaml.safe_load((files / "nc" / "B_ZI_CVI_SVI_CRV" / "manifest.yaml").read_text())
    assert man["converged"] is False


def test_cv_rows_and_determinism(files):
    c = config(files, models=["F_ZI_CVI", "B_CVI"], cv={})
    assert run("cv", "--config", c, "--out", str(files / "c1")) == 0
    assert run("cv", "--config", c, "--out", str(files / "c2")) == 0
    assert same_tree(files / "c1", files / "c2", ["cv_metrics.csv"])
    rows = {r["estimator"]: r for r in read_csv(files / "c1" / "cv_metrics.csv")}
    assert rows["F_ZI_CVI"]["coverage"] == ""
    assert rows["F_ZI_CVI"]["K"] == "10" and rows["F_ZI_CVI"]["n"] == "120"
    assert 0 <= float(rows["B_CVI"]["coverage"]) <= 1
    assert float(rows["B_CVI"]["rmspe"]) > 0


def test_cv_fold_failure_is_numerical(tmp_path, small_sample):
    write_plots(tmp_path / "plots.csv", small_sample.subset(np.flatnonzero(small_sample.biomass > 0)[:6]))
    c = config(tmp_path, models=["F_ZI_CVI"], cv={"K": 6}, data={"plots": "plots.csv", "schema": {
        "x_columns": ["tcc", "elev", "tri"], "v_columns": ["tcc", "elev", "tri"]}})
    assert run("cv", "--config", c, "--out", str(tmp_path / "o")) == 4


SIM = {"synthetic": {"n_pixels": 1500, "n_counties": 3, "n_donors": 300, "n_sample": 60,
                     "extent": [30.0, 30.0], "seed": 2}, "d": 2}


def test_simulate_byte_identical(tmp_path):
    c = config(tmp_path, models=["F_ZI_CVI"], simulate=SIM, bootstrap={"B": 5}, data={})
    a = run("simulate", "--config", c, "--out", str(tmp_path / "a"))
    b = run("simulate", "--config", c, "--out", str(tmp_path / "b"), "--workers", "2")
    assert a == b == 0
    assert same_tree(tmp_path / "a", tmp_path / "b", ["simulation_metrics.csv"])
    rows = read_csv(tmp_path / "a" / "simulation_metrics.csv")
    assert len(rows) == 3 and all(r["replicates"] == "2" for r in rows)


def test_simulate_with_oracle(tmp_path, monkeypatch):
    from zisae.sim import OracleEstimator

    real = cli.run_design

    def oracle_design(pop, sizes, estimators, d, seed, workers=1):
        return real(pop, sizes, [OracleEstimator(pop.truth)], d, seed, workers=workers)

    monkeypatch.setattr(cli, "run_design", oracle_design)
    c = config(tmp_path, models=["F_ZI_CVI"], simulate=SIM, data={})
    assert run("simulate", "--config", c, "--out", str(tmp_path / "o")) == 0
    rows = read_csv(tmp_path / "o" / "simulation_metrics.csv")
    assert [float(r["coverage"]) for r in rows] == [1.0, 1.0, 1.0]
    assert [float(r["rmse"]) for r in rows] == [0.0, 0.0, 0.0]


def test_simulate_d_below_two(tmp_path):
    c = config(tmp_path, models=["F_ZI_CVI"], simulate=dict(SIM, d=1), data={})
    assert run("simulate", "--config", c) == 2
