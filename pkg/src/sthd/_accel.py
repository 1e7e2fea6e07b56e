"""Backend selection for the numeric kernels.

Set ``STHD_DISABLE_NUMBA=1`` to force the pure-numpy path. ``STHD_WORKERS``
overrides the default worker count used by the correlation engine.
"""
import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    HAVE_NUMBA = False


def _flag(name):
    return os.environ.get(name, "").strip().lower() in {"1", "true", "yes", "on"}


USE_NUMBA = HAVE_NUMBA and not _flag("STHD_DISABLE_NUMBA")
BACKENDS = ("numba", "numpy") if HAVE_NUMBA else ("numpy",)


def default_backend():
    return "numba" if USE_NUMBA else "numpy"


def resolve_backend(backend=None):
    if backend is None:
        return default_backend()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}; expected 'numba' or 'numpy'")
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend


def default_workers():
    raw = os.environ.get("STHD_WORKERS")
    if raw:
        n = int(raw)
        if n < 1:
            raise ValueError(f"STHD_WORKERS must be positive, got {n}")
        return n
    return os.cpu_count() or 1


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity otherwise.

    Kernels are always compiled when numba exists so both backends stay
    testable in one process; the env flag only changes the default.
    """
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)

    def wrap(fn):
        return fn

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrap
