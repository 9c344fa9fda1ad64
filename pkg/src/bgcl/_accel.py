"""Optional numba acceleration.

Set ``BGCL_NUMBA=0`` to force the pure-numpy kernels. When numba is not
importable the numpy path is used regardless of the flag.
"""
import os

try:
    import numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAS_NUMBA = False


def _flag_enabled():
    value = os.environ.get("BGCL_NUMBA", "1").strip().lower()
    return value not in ("0", "false", "no", "off")


USE_NUMBA = HAS_NUMBA and _flag_enabled()


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise a no-op decorator."""
    if HAS_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]
    return lambda fn: fn


def set_threads(n):
    if HAS_NUMBA and n is not None:
        # skip the TBB probe, which warns on older system TBB builds
        numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
