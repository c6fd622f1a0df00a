# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled SRM residual kernel.

Mirrors ``_fallback.group_residual_padded`` operation for operation so the two
backends agree to the last few ulps.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def group_residual_padded(const double[:, :, ::1] padded,
                          const double[:, :, ::1] kernels,
                          const double[::1] norms):
    """Mean of per-kernel normalized correlations over a reflect-padded (C, H+4, W+4) stack.

    Taps are taken relative to the centre pixel; the kernels sum to zero, so
    this changes nothing mathematically but makes flat regions exactly zero.
    """
    cdef Py_ssize_t C = padded.shape[0]
    cdef Py_ssize_t H = padded.shape[1] - 4
    cdef Py_ssize_t W = padded.shape[2] - 4
    cdef Py_ssize_t N = kernels.shape[0]
    cdef Py_ssize_t c, i, j, k, t, ntaps
    cdef double acc, total, q, centre

    # Nonzero taps per kernel in row-major order.
    tap_u = np.zeros((N, 25), dtype=np.intp)
    tap_v = np.zeros((N, 25), dtype=np.intp)
    tap_w = np.zeros((N, 25), dtype=np.float64)
    counts = np.zeros(N, dtype=np.intp)
    cdef Py_ssize_t[:, ::1] tu = tap_u
    cdef Py_ssize_t[:, ::1] tv = tap_v
    cdef double[:, ::1] tw = tap_w
    cdef Py_ssize_t[::1] cnt = counts
    cdef Py_ssize_t u, v
    for k in range(N):
        ntaps = 0
        for u in range(5):
            for v in range(5):
                if kernels[k, u, v] != 0.0:
                    tu[k, ntaps] = u
                    tv[k, ntaps] = v
                    tw[k, ntaps] = kernels[k, u, v]
                    ntaps += 1
        cnt[k] = ntaps

    out = np.empty((C, H, W), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef double n_inv_count = <double>N
    with nogil:
        for c in range(C):
            for i in range(H):
                for j in range(W):
                    total = 0.0
                    centre = padded[c, i + 2, j + 2]
                    for k in range(N):
                        acc = 0.0
                        for t in range(cnt[k]):
                            acc = acc + tw[k, t] * (padded[c, i + tu[k, t], j + tv[k, t]] - centre)
                        total = total + acc / norms[k]
                    o[c, i, j] = total / n_inv_count
    return out
