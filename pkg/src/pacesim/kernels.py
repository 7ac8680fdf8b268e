"""Backend selection for the episode kernel.

The compiled extension is used when it imports; ``PACESIM_PURE_PYTHON=1``
forces the pure-Python fallback.
"""
import os

from . import _kernel_py

if os.environ.get("PACESIM_PURE_PYTHON") == "1":
    _compiled = None
else:
    try:
        from . import _kernel as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"

DUAL_OPTIMAL = _kernel_py.DUAL_OPTIMAL
SEQUENTIAL = _kernel_py.SEQUENTIAL
MIN = _kernel_py.MIN
SECOND_PRICE = _kernel_py.SECOND_PRICE
LINEAR_ALLOCATION = _kernel_py.LINEAR_ALLOCATION
LANDSCAPE = _kernel_py.LANDSCAPE


def run_rounds(*args, backend=None):
    """Dispatch to the selected backend (``"cython"`` or ``"python"``)."""
    backend = backend or BACKEND
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernel is not available")
        return _compiled.run_rounds(*args)
    # lists are much faster than ndarray indexing in the interpreted loop
    args = list(args)
    for i in range(2, 8):
        args[i] = args[i].tolist()
    return _kernel_py.run_rounds(*args)


def poisson_inv(u, mean):
    if _compiled is not None:
        return _compiled.poisson_inv(u, mean)
    return _kernel_py.poisson_inv(u, mean)
