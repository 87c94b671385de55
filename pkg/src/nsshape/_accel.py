"""Kernel lane selection.

Hot numerical loops exist in two interchangeable implementations: a
numba-compiled loop lane and a vectorized pure-numpy lane.  The active lane
is chosen once at import time from the environment variable

    NSSHAPE_KERNELS = "numba" | "numpy"

Default is "numba" when numba imports cleanly, otherwise "numpy".  Both lanes
implement identical contracts and are cross-checked in the test suite; the
benchmark script in benchmarks/ times them against each other.
"""

import os
import warnings

_requested = os.environ.get("NSSHAPE_KERNELS", "").strip().lower()

if _requested not in ("", "numba", "numpy"):
    warnings.warn(
        f"NSSHAPE_KERNELS={_requested!r} not recognized; expected 'numba' or "
        "'numpy'. Falling back to auto-detection."
    )
    _requested = ""

HAS_NUMBA = False
if _requested != "numpy":
    try:
        import numba  # noqa: F401

        HAS_NUMBA = True
    except ImportError:
        if _requested == "numba":
            warnings.warn(
                "NSSHAPE_KERNELS=numba requested but numba is not importable; "
                "using the pure-numpy lane."
            )

USE_NUMBA = HAS_NUMBA and _requested != "numpy"
ACTIVE_LANE = "numba" if USE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """Pass-through to numba.njit, or a no-op decorator on the numpy lane.

    Keeping the decorator importable either way lets the numba kernel module
    be imported (e.g. by the benchmark) even when compilation is disabled.
    """
    if HAS_NUMBA:
        import numba

        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(func):
        return func

    return wrap
