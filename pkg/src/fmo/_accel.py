"""Backend selection for the hot numeric kernels.

Each kernel has a pure-numpy implementation and, when numba is importable,
an ``@njit`` twin.  Setting ``FMO_NO_NUMBA=1`` forces the numpy path
everywhere; the benchmark in ``benchmarks/`` compares the two.
"""

import os

_disabled = os.environ.get("FMO_NO_NUMBA", "").strip().lower() not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False


def njit(fn):
    """Compile ``fn`` with numba, or return None when numba is off."""
    if not HAVE_NUMBA:
        return None
    return numba.njit(cache=True)(fn)


def backend():
    return "numba" if HAVE_NUMBA else "numpy"


def pick(nb_fn, np_fn, use_numba=None):
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if use_numba and nb_fn is not None:
        return nb_fn
    return np_fn
