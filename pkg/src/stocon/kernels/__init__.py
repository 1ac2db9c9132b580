"""Hot inner loops, compiled when possible.

The Cython extension ``_ckernels`` is used when it was built; otherwise the
numpy implementation in ``_pykernels`` takes over. Setting
``STOCON_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _pykernels

MODELS = {"gain": 0, "cubic_additive": 1, "vdp": 2}

try:
    from . import _ckernels as _compiled
except ImportError:  # pragma: no cover - depends on the build
    _compiled = None

if os.environ.get("STOCON_PURE_PYTHON", "") in ("1", "true", "yes"):
    backend = _pykernels
else:
    backend = _compiled if _compiled is not None else _pykernels
BACKEND = "cython" if backend is _compiled else "python"


def get_backend(name=None):
    """Return the kernel module for ``name`` ("cython", "python" or None)."""
    if name is None:
        return backend
    if name == "python":
        return _pykernels
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not available")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def compiled_available():
    return _compiled is not None


def rk4(model, *args, backend_name=None):
    return get_backend(backend_name).rk4(MODELS[model], *args)


def gain_iterate(*args, backend_name=None):
    return get_backend(backend_name).gain_iterate(*args)
