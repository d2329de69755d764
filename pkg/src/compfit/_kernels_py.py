"""Pure numpy/Python kernels.

Reference implementations of the hot loops; the Cython module
``compfit._kernels`` mirrors these signatures exactly. The sequential
recurrences here are plain Python loops over float64 and produce
bit-identical results to the compiled kernels (which are built with
fp-contraction disabled).
"""
import numpy as np

COMPILED = False


def linrec_fwd(a, b, y0):
    """y[n] = b[n] + a[n] * y[n-1], with y[-1] = y0."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    n = b.shape[0]
    y = np.empty(n, dtype=np.float64)
    al = a.tolist()
    bl = b.tolist()
    acc = float(y0)
    for i in range(n):
        acc = bl[i] + al[i] * acc
        y[i] = acc
    return y


def linrec_rev(a, b):
    """y[n] = b[n] + a[n+1] * y[n+1]; the last step has no multiplier.

    The multiplier index runs one ahead of the sample index (adjoint of the
    forward recurrence), so a[0] is never used and there is no tail state.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    n = b.shape[0]
    y = np.empty(n, dtype=np.float64)
    if n == 0:
        return y
    al = a.tolist()
    bl = b.tolist()
    acc = bl[n - 1]
    y[n - 1] = acc
    for i in range(n - 2, -1, -1):
        acc = bl[i] + al[i + 1] * acc
        y[i] = acc
    return y


def ballistics_fwd(ghat, alpha_at, alpha_rt, g0):
    """Attack/release smoothing recursion.

    Per sample: attack branch when ghat[n] < g[n-1], release otherwise
    (ties release). Returns (zeta, beta, gtilde, g) where
    beta[n] = 1 - alpha_phase and g[n] = gtilde[n] + beta[n] * g[n-1].
    """
    ghat = np.ascontiguousarray(ghat, dtype=np.float64)
    n = ghat.shape[0]
    zeta = np.empty(n, dtype=np.uint8)
    beta = np.empty(n, dtype=np.float64)
    gtilde = np.empty(n, dtype=np.float64)
    g = np.empty(n, dtype=np.float64)
    aat = float(alpha_at)
    art = float(alpha_rt)
    bat = 1.0 - aat
    brt = 1.0 - art
    gl = ghat.tolist()
    prev = float(g0)
    for i in range(n):
        gh = gl[i]
        if gh < prev:
            zeta[i] = 1
            bi = bat
            gt = aat * gh
        else:
            zeta[i] = 0
            bi = brt
            gt = art * gh
        prev = gt + bi * prev
        beta[i] = bi
        gtilde[i] = gt
        g[i] = prev
    return zeta, beta, gtilde, g


def _ceil_pow2(n):
    m = 1
    while m < n:
        m <<= 1
    return m


def scan_fwd(a, b, y0, workers=0):
    """linrec_fwd via Blelloch scan over affine elements (a[n], b[n]).

    Vectorised compact-tree form: each upsweep/downsweep level is one
    strided numpy pass. ``workers`` is accepted for signature parity with
    the compiled kernel (numpy element-wise ops are single-threaded).
    Returns (y, phases) where phases counts the parallel tree levels.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.float64), 0
    m = _ceil_pow2(n)
    A = np.ones(m, dtype=np.float64)
    B = np.zeros(m, dtype=np.float64)
    A[:n] = a
    B[:n] = b
    phases = 0

    # Upsweep: compose adjacent pairs, keep every level for the downsweep.
    levels = []
    la, lb = A, B
    while la.shape[0] > 1:
        levels.append((la, lb))
        na = la[1::2] * la[0::2]
        nb = la[1::2] * lb[0::2] + lb[1::2]
        la, lb = na, nb
        phases += 1

    # Downsweep: exclusive prefix composites, root = identity.
    ea = np.ones(1, dtype=np.float64)
    eb = np.zeros(1, dtype=np.float64)
    for la, lb in reversed(levels):
        sz = la.shape[0]
        nea = np.empty(sz, dtype=np.float64)
        neb = np.empty(sz, dtype=np.float64)
        nea[0::2] = ea
        neb[0::2] = eb
        nea[1::2] = ea * la[0::2]
        neb[1::2] = la[0::2] * eb + lb[0::2]
        ea, eb = nea, neb
        phases += 1

    # Inclusive value: apply each element to its exclusive prefix state.
    z = ea[:n] * y0 + eb[:n]
    y = b + a * z
    return y, phases
