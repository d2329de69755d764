"""Time-varying first-order linear recurrences, sequential and scan-parallel.

Evaluates y[n] = b[n] + a[n] * y[n-1] (and its reversed-time adjoint form)
either by the plain sequential loop or by an associative scan over affine
elements. The scan treats each sample as the affine map x -> a*x + b;
composing maps left-to-right is associative, so an inclusive prefix scan
yields every output in O(log n) parallel phases with O(n) work.

``linrec`` is the production dispatcher: short inputs run sequentially
(scan overhead dominates below PARALLEL_THRESHOLD), long inputs use the
scan with the configured worker count.
"""
import os
import threading
import time
from dataclasses import dataclass

import numpy as np

from .backend import get_backend

# Below this length the scan's extra passes cost more than they save.
PARALLEL_THRESHOLD = 4096

_config = threading.local()
_stats = threading.local()


@dataclass(frozen=True)
class AffineElem:
    """One recurrence step as an affine map x -> a*x + b."""

    a: float
    b: float


AFFINE_IDENTITY = AffineElem(1.0, 0.0)


def affine_compose(e1, e2):
    """Compose two affine elements: apply e1 first, then e2."""
    return AffineElem(e2.a * e1.a, e2.a * e1.b + e2.b)


def set_workers(n):
    """Set the worker count used by scan dispatch (None = machine cores)."""
    _config.workers = None if n is None else max(1, int(n))


def get_workers():
    w = getattr(_config, "workers", None)
    return w if w is not None else (os.cpu_count() or 1)


def scan_stats():
    """Instrumentation from the most recent linrec_scan call on this thread."""
    return {
        "phases": getattr(_stats, "phases", 0),
        "elapsed_s": getattr(_stats, "elapsed_s", 0.0),
        "calls": getattr(_stats, "calls", 0),
    }


def reset_scan_stats():
    _stats.phases = 0
    _stats.elapsed_s = 0.0
    _stats.calls = 0


def _as_arrays(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"coefficient/input length mismatch: {a.shape} vs {b.shape}")
    return a, b


def linrec_sequential(a, b, y_init=0.0):
    """y[n] = b[n] + a[n] * y[n-1], evaluated left to right, y[-1] = y_init."""
    a, b = _as_arrays(a, b)
    return get_backend().linrec_fwd(a, b, float(y_init))


def linrec_scan(a, b, y_init=0.0, workers=None):
    """Same recurrence as linrec_sequential via parallel associative scan.

    Matches the sequential result to ~1e-12 absolute for stable
    coefficients (|a| <= 1); unstable coefficients are permitted but carry
    no accuracy contract.
    """
    a, b = _as_arrays(a, b)
    w = workers if workers is not None else get_workers()
    t0 = time.perf_counter()
    y, phases = get_backend().scan_fwd(a, b, float(y_init), int(w))
    _stats.phases = phases
    _stats.elapsed_s = time.perf_counter() - t0
    _stats.calls = getattr(_stats, "calls", 0) + 1
    return y


def linrec_reversed(a, b):
    """Run the recurrence from the last sample toward the first.

    y[n] = b[n] + a[n+1] * y[n+1]: the multiplier index runs one ahead of
    the sample index (the adjoint of the forward recurrence), so a[0] is
    unused and the final step y[N-1] = b[N-1] has no incoming state.
    """
    a, b = _as_arrays(a, b)
    n = b.shape[0]
    if n >= PARALLEL_THRESHOLD and get_workers() > 1:
        # Reversed-shifted recurrence == forward recurrence on flipped
        # arrays with the multiplier displaced by one.
        c = np.empty(n, dtype=np.float64)
        c[0] = 0.0
        c[1:] = a[:0:-1]
        z = linrec_scan(c, b[::-1], 0.0)
        return z[::-1].copy()
    return get_backend().linrec_rev(a, b)


def linrec(a, b, y_init=0.0):
    """Dispatch to scan for long inputs, sequential otherwise."""
    a, b = _as_arrays(a, b)
    if b.shape[0] >= PARALLEL_THRESHOLD and get_workers() > 1:
        return linrec_scan(a, b, y_init)
    return get_backend().linrec_fwd(a, b, float(y_init))
