"""Root transforms of biomass and their inverses.

The bias-corrected inverse is the r-th noncentral moment of a Gaussian
with mean ``mean_t`` and variance ``tau2``; only r = 2 and r = 4 are used.
"""
import numpy as np

from .data import TransformSpec


def _root(spec):
    if isinstance(spec, TransformSpec):
        return spec.root
    return TransformSpec(int(spec)).root


def forward(y, spec):
    r = _root(spec)
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ValueError("root transform is only defined for y >= 0")
    out = np.sqrt(y) if r == 2 else np.sqrt(np.sqrt(y))
    return out if out.ndim else float(out)


def naive_inverse(t, spec):
    r = _root(spec)
    t = np.asarray(t, dtype=float)
    out = t * t if r == 2 else (t * t) * (t * t)
    return out if out.ndim else float(out)


def bias_corrected_inverse(mean_t, tau2, spec):
    r = _root(spec)
    m = np.asarray(mean_t, dtype=float)
    tau2 = np.asarray(tau2, dtype=float)
    if np.any(tau2 < 0):
        raise ValueError("tau2 must be nonnegative")
    m2 = m * m
    if r == 2:
        out = m2 + tau2
    else:
        out = m2 * m2 + 6.0 * m2 * tau2 + 3.0 * tau2 * tau2
    return out if out.ndim else float(out)
