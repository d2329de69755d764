"""Kernel backend selection.

The compiled Cython kernels are preferred when importable; otherwise the
pure numpy/Python fallback is used. Override with COMPFIT_BACKEND=python
or COMPFIT_BACKEND=cython (the latter raises if the extension is missing),
or at runtime via set_backend().
"""
import os

# Idle OpenMP workers must sleep, not spin: after every parallel scan the
# spinning worker would otherwise steal a core from the numpy code between
# kernel calls (observed 3x slowdowns on 2-core hosts).
os.environ.setdefault("OMP_WAIT_POLICY", "passive")

from . import _kernels_py

_BACKENDS = {"python": _kernels_py}
try:
    from . import _kernels as _kernels_c

    _BACKENDS["cython"] = _kernels_c
except ImportError:
    _kernels_c = None

_env = os.environ.get("COMPFIT_BACKEND", "").strip().lower()
if _env:
    if _env not in ("python", "cython"):
        raise RuntimeError(f"COMPFIT_BACKEND must be 'python' or 'cython', got {_env!r}")
    if _env == "cython" and _kernels_c is None:
        raise RuntimeError("COMPFIT_BACKEND=cython but the compiled extension is not available")
    _active = _BACKENDS[_env]
else:
    _active = _kernels_c if _kernels_c is not None else _kernels_py


def get_backend():
    """Return the active kernel module."""
    return _active


def backend_name():
    return "cython" if _active is not _kernels_py else "python"


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name):
    """Switch kernels at runtime (used by tests and the benchmark)."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    _active = _BACKENDS[name]
