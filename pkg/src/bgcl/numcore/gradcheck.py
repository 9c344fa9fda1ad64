"""Central finite differences, used as the gradient oracle."""
import numpy as np

from .tensor import Tensor


def finite_diff_grad(f, params, eps=1e-5):
    """Estimate ``df/dp`` for each array or tensor in ``params``.

    ``f`` takes no arguments and reads the (mutated in place) parameter
    values; it must return a finite scalar.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    out = []
    for p in params:
        arr = p.data if isinstance(p, Tensor) else p
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            fp = _scalar(f())
            flat[k] = orig - eps
            fm = _scalar(f())
            flat[k] = orig
            gflat[k] = (fp - fm) / (2.0 * eps)
        out.append(g)
    return out


def _scalar(v):
    v = float(v.data if isinstance(v, Tensor) else v)
    if not np.isfinite(v):
        raise FloatingPointError("finite_diff_grad: f returned a non-finite value")
    return v


def relative_error(a, b, floor=1e-8):
    """Normwise relative error ``||a - b|| / max(||a||, ||b||, floor)``.

    Normwise rather than entrywise: finite differences carry an absolute
    error of order eps^2, which swamps gradient entries near zero.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)
