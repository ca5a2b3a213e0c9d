"""County-level repeated-sampling metrics and unit-level CV metrics."""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class MetricsRecord:
    county: np.ndarray
    rmse: np.ndarray
    bias: np.ndarray
    rmse_hat_bias: np.ndarray
    coverage: np.ndarray
    n_ok: int = 0
    n_failed: int = 0


def county_metrics(est, truth, rmse_hat=None, lo=None, hi=None):
    """Metrics over d replicates (rows) for every county (columns).

    Rows containing NaN estimates are treated as failed replicates and
    dropped. Intervals are closed.
    """
    est = np.atleast_2d(np.asarray(est, dtype=float))
    truth = np.asarray(truth, dtype=float)
    ok = ~np.isnan(est).any(axis=1)
    e = est[ok]
    d = e.shape[0]
    err = e - truth[None, :]
    rmse = np.sqrt(np.mean(err * err, axis=0))
    bias = np.mean(e, axis=0) - truth
    J = truth.shape[0]
    if rmse_hat is None:
        rb = np.full(J, np.nan)
    else:
        rb = np.mean(np.atleast_2d(rmse_hat)[ok], axis=0) - rmse
    if lo is None or hi is None:
        cov = np.full(J, np.nan)
    else:
        L = np.atleast_2d(lo)[ok]
        H = np.atleast_2d(hi)[ok]
        cov = np.mean((L <= truth) & (truth <= H), axis=0)
    return MetricsRecord(np.arange(J), rmse, bias, rb, cov, int(d), int((~ok).sum()))


def freq_interval(est, rmse_hat, z=1.96):
    est = np.asarray(est, dtype=float)
    half = z * np.asarray(rmse_hat, dtype=float)
    return est - half, est + half


@dataclass(frozen=True)
class CvMetrics:
    rmspe: float
    bias: float
    coverage: float
    n: int


def cv_metrics(pred, obs, lo=None, hi=None):
    pred = np.asarray(pred, dtype=float)
    obs = np.asarray(obs, dtype=float)
    r = pred - obs
    cov = float("nan") if lo is None else float(np.mean((np.asarray(lo) <= obs) & (obs <= np.asarray(hi))))
    return CvMetrics(float(np.sqrt(np.mean(r * r))), float(np.mean(r)), cov, int(obs.size))
