"""Backend switch for the compiled kernels.

``SLIMMAP_BACKEND=numpy`` forces the vectorised numpy/scipy paths; the default
``numba`` uses the ``@njit`` loop kernels when numba is importable.
"""

import os

try:
    import numba as nb

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    nb = None
    HAVE_NUMBA = False


def _requested_backend() -> str:
    value = os.environ.get("SLIMMAP_BACKEND", "numba").strip().lower()
    if value not in ("numba", "numpy"):
        raise ValueError(f"SLIMMAP_BACKEND must be 'numba' or 'numpy', got {value!r}")
    if value == "numba" and not HAVE_NUMBA:
        return "numpy"
    return value


BACKEND = _requested_backend()


def njit(*args, **kwargs):
    """``numba.njit`` with ``cache=True``; identity decorator without numba."""
    kwargs.setdefault("cache", True)
    if HAVE_NUMBA:
        return nb.njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]
    return lambda func: func


def use_numba(backend: str | None = None) -> bool:
    return (backend or BACKEND) == "numba"
