"""Each numba kernel against its numpy twin."""
import os
import subprocess
import sys

import numpy as np
import pytest

from zisae import _accel
from zisae import _kernels as K
from zisae import nngp


def _graph(n=120, m=8, seed=0):
    rng = np.random.default_rng(seed)
    return nngp.build_graph(rng.uniform(0, 10, (n, 2)), m)


def test_ordered_neighbors_agree():
    c = np.random.default_rng(1).uniform(0, 5, (200, 2))
    c = c[np.lexsort((c[:, 1], c[:, 0]))]
    nb, npy = K.VARIANTS["ordered_neighbors"]
    assert np.array_equal(nb(c, 7), npy(c, 7))


def test_knn_query_agree():
    rng = np.random.default_rng(2)
    q, ref = rng.uniform(0, 5, (300, 2)), rng.uniform(0, 5, (150, 2))
    nb, npy = K.VARIANTS["knn_query"]
    a, da = nb(q, ref, 6)
    b, db = npy(q, ref, 6)
    assert np.array_equal(a, b)
    assert np.allclose(da, db, rtol=0, atol=1e-12)


def test_knn_query_ties_pick_lowest_index():
    ref = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    for fn in K.VARIANTS["knn_query"]:
        idx, _ = fn(np.zeros((1, 2)), ref, 2)
        assert list(idx[0]) == [0, 1]


def test_corr_factors_agree():
    g = _graph()
    nb, npy = K.VARIANTS["corr_factors"]
    B1, F1, bad1 = nb(g.site_dist, g.nn_dist, g.counts, 0.7, g.jitter)
    B2, F2, bad2 = npy(g.site_dist, g.nn_dist, g.counts, 0.7, g.jitter)
    assert bad1 == bad2 == -1
    assert np.allclose(B1, B2, atol=1e-10)
    assert np.allclose(F1, F2, atol=1e-12)


def test_residuals_and_sweep_agree():
    g = _graph()
    rng = np.random.default_rng(3)
    B, F = nngp.correlation_factors(g, 0.5)
    w = rng.standard_normal(g.n)
    nb, npy = K.VARIANTS["nngp_residuals"]
    assert np.allclose(nb(w, g.neighbors, B), npy(w, g.neighbors, B), atol=1e-12)
    r = rng.standard_normal(g.n)
    prec = np.where(rng.random(g.n) < 0.6, 2.0, 0.0)
    z = rng.standard_normal(g.n)
    args = (g.neighbors, B, 1.3 * F, g.rev_ptr, g.rev_site, g.rev_pos, r, prec, z)
    nb, npy = K.VARIANTS["w_sweep"]
    w1 = nb(w.copy(), *args)
    w2 = npy(w.copy(), *args)
    assert np.allclose(w1, w2, atol=1e-10)


def test_ppd_agree():
    rng = np.random.default_rng(4)
    U, M = 30, 41
    eta, mean = rng.normal(size=(U, M)), rng.normal(3, 1, (U, M))
    var1 = rng.uniform(0.2, 1, M)
    ub, un = rng.random((U, M)), rng.random((U, M + 1))
    nb, npy = K.VARIANTS["ppd_draws"]
    for two_stage in (True, False):
        for root in (2, 4):
            y1, p1 = nb(eta, mean, var1, 1e-6, root, ub, un, two_stage)
            y2, p2 = npy(eta, mean, var1, 1e-6, root, ub, un, two_stage)
            assert np.allclose(y1, y2, rtol=1e-12, atol=1e-14)
            assert np.allclose(p1, p2, atol=1e-15)


def test_predict_w_agree():
    rng = np.random.default_rng(5)
    obs = rng.uniform(0, 10, (80, 2))
    new = np.vstack([rng.uniform(0, 10, (25, 2)), obs[:3]])   # includes coincident sites
    nb_ = nngp.prediction_neighbors(new, obs, 6)
    M = 12
    w = rng.standard_normal((M, 80))
    phi, s2 = rng.uniform(0.2, 1.5, M), rng.uniform(0.5, 2, M)
    z = rng.standard_normal((new.shape[0], M))
    args = (nb_.site_dist, nb_.nn_dist, nb_.neighbors, nb_.counts, nb_.jitter, w, phi, s2, z)
    nb, npy = K.VARIANTS["predict_w_draws"]
    assert np.allclose(nb(*args), npy(*args), atol=1e-9)


def test_disable_flag_selects_numpy():
    code = "import zisae._kernels as K; print(K.corr_factors is K._corr_factors_np)"
    env = dict(os.environ, ZISAE_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "True"


@pytest.mark.skipif(not _accel.USE_NUMBA, reason="numba disabled in this process")
def test_default_selects_numba():
    assert K.corr_factors is K._corr_factors_nb
