# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the per-sample recurrences.

Mirrors compfit._kernels_py exactly. Built with -ffp-contract=off so the
sequential loops are bit-identical to the pure-Python reference.
"""
import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange

COMPILED = True


def linrec_fwd(a, b, double y0):
    """y[n] = b[n] + a[n] * y[n-1], with y[-1] = y0."""
    cdef double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = bv.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] yv = out
    cdef double acc = y0
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            acc = bv[i] + av[i] * acc
            yv[i] = acc
    return out


def linrec_rev(a, b):
    """y[n] = b[n] + a[n+1] * y[n+1]; the last step has no multiplier."""
    cdef double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = bv.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] yv = out
    cdef double acc
    cdef Py_ssize_t i
    if n == 0:
        return out
    with nogil:
        acc = bv[n - 1]
        yv[n - 1] = acc
        for i in range(n - 2, -1, -1):
            acc = bv[i] + av[i + 1] * acc
            yv[i] = acc
    return out


def ballistics_fwd(ghat, double alpha_at, double alpha_rt, double g0):
    """Attack/release smoothing; ties take the release branch.

    Returns (zeta, beta, gtilde, g) with beta[n] = 1 - alpha_phase and
    g[n] = gtilde[n] + beta[n] * g[n-1].
    """
    cdef double[::1] gh = np.ascontiguousarray(ghat, dtype=np.float64)
    cdef Py_ssize_t n = gh.shape[0]
    zeta = np.empty(n, dtype=np.uint8)
    beta = np.empty(n, dtype=np.float64)
    gtilde = np.empty(n, dtype=np.float64)
    g = np.empty(n, dtype=np.float64)
    cdef unsigned char[::1] zv = zeta
    cdef double[::1] bev = beta
    cdef double[::1] gtv = gtilde
    cdef double[::1] gv = g
    cdef double bat = 1.0 - alpha_at
    cdef double brt = 1.0 - alpha_rt
    cdef double prev = g0
    cdef double ghi, bi, gt
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            ghi = gh[i]
            if ghi < prev:
                zv[i] = 1
                bi = bat
                gt = alpha_at * ghi
            else:
                zv[i] = 0
                bi = brt
                gt = alpha_rt * ghi
            prev = gt + bi * prev
            bev[i] = bi
            gtv[i] = gt
            gv[i] = prev
    return zeta, beta, gtilde, g


cdef Py_ssize_t _ceil_pow2(Py_ssize_t n) nogil:
    cdef Py_ssize_t m = 1
    while m < n:
        m <<= 1
    return m


def scan_fwd(a, b, double y0, int workers):
    """linrec_fwd via a two-phase (upsweep/downsweep) scan.

    Leaf-coarsened Blelloch: contiguous leaves are pre-composed pairwise
    (one vectorisable pass halving the sequential dependency chain), leaf
    composites are combined in an exclusive Blelloch tree, and the
    downsweep re-applies the recurrence inside each leaf from its prefix
    state. Work O(n), tree depth O(log n). Returns (y, phases).
    """
    cdef double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = bv.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] yv = out
    cdef double acc
    cdef Py_ssize_t i
    if n == 0:
        return out, 0
    if workers < 1:
        workers = 1
    if n < 64:
        # Degenerate tree; run the plain recurrence as a single phase.
        acc = y0
        with nogil:
            for i in range(n):
                acc = bv[i] + av[i] * acc
                yv[i] = acc
        return out, 1

    cdef Py_ssize_t leaves = _ceil_pow2(workers)
    while leaves > 1 and n // leaves < 512:
        leaves >>= 1
    # Leaf length a multiple of 4 so quad regions start on aligned indices.
    cdef Py_ssize_t leaf_len = 4 * ((n + 4 * leaves - 1) // (4 * leaves))

    quad_a = np.empty(n // 4 + leaves, dtype=np.float64)
    quad_b = np.empty(n // 4 + leaves, dtype=np.float64)
    comp_a = np.ones(leaves, dtype=np.float64)
    comp_b = np.zeros(leaves, dtype=np.float64)
    pref = np.empty(leaves, dtype=np.float64)
    cdef double[::1] qav = quad_a
    cdef double[::1] qbv = quad_b
    cdef double[::1] cav = comp_a
    cdef double[::1] cbv = comp_b
    cdef double[::1] prefv = pref
    cdef Py_ssize_t j, start, end, m, nquads, off, i0, idx
    cdef double ca, cb, sa, z, ta, tb, pa, pb
    cdef Py_ssize_t d, k
    cdef int phases = 0
    cdef int nthreads = workers

    # ---- Upsweep phase A: 4-wide pre-compose + leaf composite chains.
    for j in prange(leaves, nogil=True, schedule="static", num_threads=nthreads):
        start = j * leaf_len
        end = start + leaf_len
        if end > n:
            end = n
        if start >= n:
            continue
        m = end - start
        nquads = m // 4
        off = start // 4
        for i in range(nquads):
            i0 = start + 4 * i
            qav[off + i] = (av[i0] * av[i0 + 1]) * (av[i0 + 2] * av[i0 + 3])
            qbv[off + i] = (
                (bv[i0] * av[i0 + 1] + bv[i0 + 1]) * av[i0 + 2] + bv[i0 + 2]
            ) * av[i0 + 3] + bv[i0 + 3]
        ca = 1.0
        cb = 0.0
        for i in range(nquads):
            sa = qav[off + i]
            cb = sa * cb + qbv[off + i]
            ca = ca * sa
        for idx in range(start + 4 * nquads, end):
            sa = av[idx]
            cb = sa * cb + bv[idx]
            ca = ca * sa
        cav[j] = ca
        cbv[j] = cb
    phases += 2

    # ---- Upsweep phase B / downsweep phase A: Blelloch tree on the leaf
    # composites (in-place, exclusive prefix).
    with nogil:
        d = 1
        while d < leaves:
            k = 0
            while k < leaves:
                ta = cav[k + d - 1]
                tb = cbv[k + d - 1]
                cbv[k + 2 * d - 1] = cav[k + 2 * d - 1] * tb + cbv[k + 2 * d - 1]
                cav[k + 2 * d - 1] = ta * cav[k + 2 * d - 1]
                k += 2 * d
            d <<= 1
            phases += 1
        cav[leaves - 1] = 1.0
        cbv[leaves - 1] = 0.0
        d = leaves >> 1
        while d >= 1:
            k = 0
            while k < leaves:
                ta = cav[k + d - 1]
                tb = cbv[k + d - 1]
                pa = cav[k + 2 * d - 1]
                pb = cbv[k + 2 * d - 1]
                cav[k + d - 1] = pa
                cbv[k + d - 1] = pb
                cav[k + 2 * d - 1] = pa * ta
                cbv[k + 2 * d - 1] = ta * pb + tb
                k += 2 * d
            d >>= 1
            phases += 1
        for j in range(leaves):
            prefv[j] = cav[j] * y0 + cbv[j]

    # ---- Downsweep phase B: apply the recurrence inside each leaf from its
    # prefix state. Quad boundaries come from the stored composites; quad
    # interiors are short independent chains the core overlaps.
    for j in prange(leaves, nogil=True, schedule="static", num_threads=nthreads):
        start = j * leaf_len
        end = start + leaf_len
        if end > n:
            end = n
        if start >= n:
            continue
        m = end - start
        nquads = m // 4
        off = start // 4
        z = prefv[j]
        for i in range(nquads):
            z = qbv[off + i] + qav[off + i] * z
            yv[start + 4 * i + 3] = z
        z = prefv[j]
        for i in range(nquads):
            i0 = start + 4 * i
            ta = bv[i0] + av[i0] * z
            tb = bv[i0 + 1] + av[i0 + 1] * ta
            yv[i0] = ta
            yv[i0 + 1] = tb
            yv[i0 + 2] = bv[i0 + 2] + av[i0 + 2] * tb
            z = yv[i0 + 3]
        for idx in range(start + 4 * nquads, end):
            z = bv[idx] + av[idx] * z
            yv[idx] = z
    phases += 2

    return out, phases
