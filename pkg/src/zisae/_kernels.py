"""Hot inner loops, each in a numba flavour (``*_nb``) and a numpy flavour (``*_np``).

The public names at the bottom resolve to one flavour according to
``zisae._accel.USE_NUMBA``. Every pair must agree to rounding error;
``tests/test_kernels.py`` holds them to that.
"""
import math

import numpy as np

from ._accel import njit, pick

TWO_PI = 2.0 * math.pi


class FactorizationError(np.linalg.LinAlgError):
    pass


# ----------------------------------------------------------------------------
# neighbour search
# ----------------------------------------------------------------------------

@njit
def _ordered_neighbors_nb(coords, m):
    n = coords.shape[0]
    out = -np.ones((n, m), dtype=np.int64)
    best = np.empty(m)
    for i in range(1, n):
        filled = 0
        xi = coords[i, 0]
        yi = coords[i, 1]
        for j in range(i):
            dx = coords[j, 0] - xi
            dy = coords[j, 1] - yi
            d = dx * dx + dy * dy
            if filled < m:
                pos = filled
                filled += 1
            elif d < best[m - 1]:
                pos = m - 1
            else:
                continue
            while pos > 0 and best[pos - 1] > d:
                best[pos] = best[pos - 1]
                out[i, pos] = out[i, pos - 1]
                pos -= 1
            best[pos] = d
            out[i, pos] = j
    return out


def _ordered_neighbors_np(coords, m):
    n = coords.shape[0]
    out = -np.ones((n, m), dtype=np.int64)
    for i in range(1, n):
        diff = coords[:i] - coords[i]
        d = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1]
        k = min(i, m)
        out[i, :k] = np.argsort(d, kind="stable")[:k]
    return out


@njit
def _knn_query_nb(query, ref, k):
    nq, dim = query.shape
    nr = ref.shape[0]
    out = -np.ones((nq, k), dtype=np.int64)
    dist = np.empty((nq, k))
    best = np.empty(k)
    for i in range(nq):
        filled = 0
        for j in range(nr):
            d = 0.0
            for c in range(dim):
                t = ref[j, c] - query[i, c]
                d += t * t
            if filled < k:
                pos = filled
                filled += 1
            elif d < best[k - 1]:
                pos = k - 1
            else:
                continue
            while pos > 0 and best[pos - 1] > d:
                best[pos] = best[pos - 1]
                out[i, pos] = out[i, pos - 1]
                pos -= 1
            best[pos] = d
            out[i, pos] = j
        for a in range(k):
            dist[i, a] = math.sqrt(best[a]) if a < filled else np.inf
    return out, dist


def _knn_query_np(query, ref, k, chunk=512):
    nq = query.shape[0]
    nr = ref.shape[0]
    kk = min(k, nr)
    out = -np.ones((nq, k), dtype=np.int64)
    dist = np.full((nq, k), np.inf)
    for s in range(0, nq, chunk):
        q = query[s:s + chunk]
        d = np.zeros((q.shape[0], nr))
        for c in range(query.shape[1]):
            t = ref[None, :, c] - q[:, None, c]
            d += t * t
        idx = np.argsort(d, axis=1, kind="stable")[:, :kk]
        out[s:s + chunk, :kk] = idx
        dist[s:s + chunk, :kk] = np.sqrt(np.take_along_axis(d, idx, axis=1))
    return out, dist


# ----------------------------------------------------------------------------
# NNGP conditional factors (correlation scale)
# ----------------------------------------------------------------------------

@njit
def _chol_solve_inplace(C, c, k):
    """Cholesky of C[:k,:k] (lower triangle used) then solve C x = c; returns x or empty on failure."""
    for a in range(k):
        s = C[a, a]
        for t in range(a):
            s -= C[a, t] * C[a, t]
        if s <= 0.0:
            return np.empty(0)
        s = math.sqrt(s)
        C[a, a] = s
        for b in range(a + 1, k):
            v = C[b, a]
            for t in range(a):
                v -= C[b, t] * C[a, t]
            C[b, a] = v / s
    x = np.empty(k)
    for a in range(k):
        v = c[a]
        for t in range(a):
            v -= C[a, t] * x[t]
        x[a] = v / C[a, a]
    for a in range(k - 1, -1, -1):
        v = x[a]
        for t in range(a + 1, k):
            v -= C[t, a] * x[t]
        x[a] = v / C[a, a]
    return x


@njit
def _corr_factors_nb(site_d, nn_d, counts, phi, jitter):
    n, m = site_d.shape
    B = np.zeros((n, m))
    F = np.empty(n)
    C = np.empty((m, m))
    c = np.empty(m)
    for i in range(n):
        k = counts[i]
        jit = jitter[i]
        if k == 0:
            F[i] = 1.0 + jit
            continue
        for a in range(k):
            c[a] = math.exp(-phi * site_d[i, a])
            for b in range(a):
                C[a, b] = math.exp(-phi * nn_d[i, a, b])
            C[a, a] = 1.0 + jit
        x = _chol_solve_inplace(C, c, k)
        if x.shape[0] == 0:
            return B, F, i
        s = 0.0
        for a in range(k):
            B[i, a] = x[a]
            s += x[a] * c[a]
        F[i] = 1.0 + jit - s
    return B, F, -1


def _corr_factors_np(site_d, nn_d, counts, phi, jitter):
    n, m = site_d.shape
    if n == 0 or m == 0:
        return np.zeros((n, m)), 1.0 + jitter.astype(float), -1
    mask = np.arange(m)[None, :] < counts[:, None]
    c = np.where(mask, np.exp(-phi * site_d), 0.0)
    both = mask[:, :, None] & mask[:, None, :]
    C = np.where(both, np.exp(-phi * nn_d), 0.0)
    diag = np.arange(m)
    C[:, diag, diag] = np.where(mask, 1.0 + jitter[:, None], 1.0)
    try:
        np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        for i in range(n):
            try:
                np.linalg.cholesky(C[i])
            except np.linalg.LinAlgError:
                return np.zeros((n, m)), np.ones(n), i
    B = np.linalg.solve(C, c[:, :, None])[:, :, 0]
    F = 1.0 + jitter - (B * c).sum(axis=1)
    return B, F, -1


# ----------------------------------------------------------------------------
# NNGP residuals  e_i = w_i - B_i . w_N(i)
# ----------------------------------------------------------------------------

@njit
def _nngp_residuals_nb(w, nbr, B):
    n, m = nbr.shape
    e = np.empty(n)
    for i in range(n):
        s = w[i]
        for a in range(m):
            j = nbr[i, a]
            if j < 0:
                break
            s -= B[i, a] * w[j]
        e[i] = s
    return e


def _nngp_residuals_np(w, nbr, B):
    if nbr.shape[1] == 0:
        return w.copy()
    safe = np.where(nbr >= 0, nbr, 0)
    return w - (B * w[safe]).sum(axis=1)


# ----------------------------------------------------------------------------
# single-site Gibbs sweep for the latent NNGP vector
# ----------------------------------------------------------------------------

@njit
def _w_sweep_nb(w, nbr, B, F, rev_ptr, rev_site, rev_pos, r, obs_prec, normals):
    n, m = nbr.shape
    for t in range(n):
        prec = 1.0 / F[t] + obs_prec[t]
        own = 0.0
        for a in range(m):
            j = nbr[t, a]
            if j < 0:
                break
            own += B[t, a] * w[j]
        lin = own / F[t] + obs_prec[t] * r[t]
        for h in range(rev_ptr[t], rev_ptr[t + 1]):
            k = rev_site[h]
            a0 = rev_pos[h]
            b = B[k, a0]
            rest = w[k]
            for a in range(m):
                j = nbr[k, a]
                if j < 0:
                    break
                if a != a0:
                    rest -= B[k, a] * w[j]
            prec += b * b / F[k]
            lin += b * rest / F[k]
        w[t] = lin / prec + normals[t] / math.sqrt(prec)
    return w


def _w_sweep_np(w, nbr, B, F, rev_ptr, rev_site, rev_pos, r, obs_prec, normals):
    n = nbr.shape[0]
    for t in range(n):
        row = nbr[t]
        valid = row >= 0
        own = float(np.dot(B[t, valid], w[row[valid]]))
        prec = 1.0 / F[t] + obs_prec[t]
        lin = own / F[t] + obs_prec[t] * r[t]
        for h in range(rev_ptr[t], rev_ptr[t + 1]):
            k = rev_site[h]
            a0 = rev_pos[h]
            b = B[k, a0]
            krow = nbr[k]
            kvalid = krow >= 0
            kvalid[a0] = False
            rest = w[k] - float(np.dot(B[k, kvalid], w[krow[kvalid]]))
            prec += b * b / F[k]
            lin += b * rest / F[k]
        w[t] = lin / prec + normals[t] / math.sqrt(prec)
    return w


# ----------------------------------------------------------------------------
# posterior predictive draws at prediction units
# ----------------------------------------------------------------------------

@njit
def _logistic(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit
def _ppd_nb(eta, mean, var1, tau2_2, root, ub, un, two_stage):
    U, M = mean.shape
    yb = np.empty((U, M))
    prob = np.ones((U, M))
    sd2 = math.sqrt(tau2_2)
    for u in range(U):
        for h in range(0, M, 2):
            u1 = un[u, h]
            u2 = un[u, h + 1]
            rad = math.sqrt(-2.0 * math.log(1.0 - u1))
            ang = TWO_PI * u2
            for q in range(2):
                s = h + q
                if s >= M:
                    break
                g = rad * math.cos(ang) if q == 0 else rad * math.sin(ang)
                if two_stage:
                    p = _logistic(eta[u, s])
                    prob[u, s] = p
                    if ub[u, s] < p:
                        y = mean[u, s] + math.sqrt(var1[s]) * g
                    else:
                        y = sd2 * g
                else:
                    y = mean[u, s] + math.sqrt(var1[s]) * g
                yb[u, s] = y ** root
    return yb, prob


def _box_muller_np(un, M):
    u1 = un[:, 0::2]
    u2 = un[:, 1::2]
    rad = np.sqrt(-2.0 * np.log(1.0 - u1))
    ang = TWO_PI * u2
    g = np.empty((un.shape[0], 2 * u1.shape[1]))
    g[:, 0::2] = rad * np.cos(ang)
    g[:, 1::2] = rad * np.sin(ang)
    return g[:, :M]


def _logistic_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _ppd_np(eta, mean, var1, tau2_2, root, ub, un, two_stage):
    U, M = mean.shape
    g = _box_muller_np(un, M)
    cont = mean + np.sqrt(var1)[None, :] * g
    if two_stage:
        prob = _logistic_np(eta)
        y = np.where(ub < prob, cont, math.sqrt(tau2_2) * g)
    else:
        prob = np.ones((U, M))
        y = cont
    return y ** root, prob


# ----------------------------------------------------------------------------
# latent spatial effect at new sites, one draw per retained iteration
# ----------------------------------------------------------------------------

@njit
def _predict_w_nb(site_d, nn_d, nbr, counts, jitter, w, phi, sigma2, normals):
    U, m = site_d.shape
    M = phi.shape[0]
    out = np.empty((U, M))
    C = np.empty((m, m))
    c = np.empty(m)
    for u in range(U):
        k = counts[u]
        jit = jitter[u]
        for s in range(M):
            ph = phi[s]
            for a in range(k):
                c[a] = math.exp(-ph * site_d[u, a])
                for b in range(a):
                    C[a, b] = math.exp(-ph * nn_d[u, a, b])
                C[a, a] = 1.0 + jit
            x = _chol_solve_inplace(C, c, k)
            mu = 0.0
            dot = 0.0
            for a in range(x.shape[0]):
                mu += x[a] * w[s, nbr[u, a]]
                dot += x[a] * c[a]
            f = sigma2[s] * (1.0 + jit - dot)
            if f < 0.0:
                f = 0.0
            out[u, s] = mu + math.sqrt(f) * normals[u, s]
    return out


def _predict_w_np(site_d, nn_d, nbr, counts, jitter, w, phi, sigma2, normals):
    U, m = site_d.shape
    M = phi.shape[0]
    out = np.empty((U, M))
    mask = np.arange(m)[None, :] < counts[:, None]
    both = mask[:, :, None] & mask[:, None, :]
    diag = np.arange(m)
    safe = np.where(mask, nbr, 0)
    for s in range(M):
        c = np.where(mask, np.exp(-phi[s] * site_d), 0.0)
        C = np.where(both, np.exp(-phi[s] * nn_d), 0.0)
        C[:, diag, diag] = np.where(mask, 1.0 + jitter[:, None], 1.0)
        b = np.linalg.solve(C, c[:, :, None])[:, :, 0]
        mu = (b * w[s][safe]).sum(axis=1)
        f = sigma2[s] * (1.0 + jitter - (b * c).sum(axis=1))
        out[:, s] = mu + np.sqrt(np.maximum(f, 0.0)) * normals[:, s]
    return out


ordered_neighbors = pick(_ordered_neighbors_nb, _ordered_neighbors_np)
knn_query = pick(_knn_query_nb, _knn_query_np)
corr_factors = pick(_corr_factors_nb, _corr_factors_np)
nngp_residuals = pick(_nngp_residuals_nb, _nngp_residuals_np)
w_sweep = pick(_w_sweep_nb, _w_sweep_np)
ppd_draws = pick(_ppd_nb, _ppd_np)
predict_w_draws = pick(_predict_w_nb, _predict_w_np)

VARIANTS = {
    "ordered_neighbors": (_ordered_neighbors_nb, _ordered_neighbors_np),
    "knn_query": (_knn_query_nb, _knn_query_np),
    "corr_factors": (_corr_factors_nb, _corr_factors_np),
    "nngp_residuals": (_nngp_residuals_nb, _nngp_residuals_np),
    "w_sweep": (_w_sweep_nb, _w_sweep_np),
    "ppd_draws": (_ppd_nb, _ppd_np),
    "predict_w_draws": (_predict_w_nb, _predict_w_np),
}
