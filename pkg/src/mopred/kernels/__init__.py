"""Hot-kernel backend selection.

The compiled extension (``_core``) is preferred; the numpy backend is the
fallback, forced with ``MOPRED_PURE_PYTHON=1``. Both expose the same five
functions and produce results equal to floating-point accumulation order.
"""

import os

from . import numpy_backend

if os.environ.get("MOPRED_PURE_PYTHON"):
    _impl = numpy_backend
else:
    try:
        from . import _core as _impl
    except ImportError:
        _impl = numpy_backend

BACKEND = _impl.NAME

masked_softmax_fwd = _impl.masked_softmax_fwd
masked_softmax_bwd = _impl.masked_softmax_bwd
scatter_add_rows = _impl.scatter_add_rows
masked_max_pool_fwd = _impl.masked_max_pool_fwd
masked_max_pool_bwd = _impl.masked_max_pool_bwd


def available_backends():
    """Backends importable right now, compiled first when present."""
    out = {}
    try:
        from . import _core
        out["compiled"] = _core
    except ImportError:
        pass
    out["python"] = numpy_backend
    return out


def use_backend(name: str):
    """Rebind the kernel entry points to one backend (for benchmarks/tests)."""
    global BACKEND, masked_softmax_fwd, masked_softmax_bwd, scatter_add_rows
    global masked_max_pool_fwd, masked_max_pool_bwd
    impl = available_backends()[name]
    BACKEND = impl.NAME
    masked_softmax_fwd = impl.masked_softmax_fwd
    masked_softmax_bwd = impl.masked_softmax_bwd
    scatter_add_rows = impl.scatter_add_rows
    masked_max_pool_fwd = impl.masked_max_pool_fwd
    masked_max_pool_bwd = impl.masked_max_pool_bwd
    return impl.NAME
