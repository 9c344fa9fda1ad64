"""Digamma, trigamma and log-gamma on positive reals."""
import math

import numpy as np

EULER_GAMMA = 0.57721566490153286061

# Bernoulli-number coefficients of the asymptotic expansions
_DIGAMMA_TAIL = (1.0 / 12, -1.0 / 120, 1.0 / 252, -1.0 / 240, 1.0 / 132,
                 -691.0 / 32760, 1.0 / 12)
_TRIGAMMA_TAIL = (1.0 / 6, -1.0 / 30, 1.0 / 42, -1.0 / 30, 5.0 / 66,
                  -691.0 / 2730, 7.0 / 6)


def _prepare(x, fname):
    arr = np.array(x, dtype=np.float64)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError(f"{fname} requires finite x > 0")
    return arr


def _wrap(x, arr):
    return float(arr) if np.ndim(x) == 0 else arr


def digamma(x):
    """Psi(x) for x > 0: upward recurrence to x >= 6, then the asymptotic series."""
    arr = _prepare(x, "digamma")
    z = arr.copy()
    acc = np.zeros_like(z)
    small = z < 6.0
    while np.any(small):
        acc[small] -= 1.0 / z[small]
        z[small] += 1.0
        small = z < 6.0
    inv2 = 1.0 / (z * z)
    series = np.zeros_like(z)
    for c in reversed(_DIGAMMA_TAIL):
        series = (series + c) * inv2
    res = acc + np.log(z) - 0.5 / z - series
    return _wrap(x, res)


def trigamma(x):
    """Psi'(x) for x > 0."""
    arr = _prepare(x, "trigamma")
    z = arr.copy()
    acc = np.zeros_like(z)
    small = z < 10.0
    while np.any(small):
        acc[small] += 1.0 / (z[small] * z[small])
        z[small] += 1.0
        small = z < 10.0
    inv = 1.0 / z
    inv2 = inv * inv
    series = np.zeros_like(z)
    for c in reversed(_TRIGAMMA_TAIL):
        series = (series + c) * inv2
    res = acc + inv + 0.5 * inv2 + series * inv
    return _wrap(x, res)


def gammaln(x):
    arr = _prepare(x, "gammaln")
    res = np.vectorize(math.lgamma, otypes=[np.float64])(arr)
    return _wrap(x, res)
