# cython: boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled DTW kernel.

Mirror of ``_dtw_py.dtw_alignment``: identical recurrence, identical
tie-breaking, bitwise-equal results.  Keep the two in sync.
"""

from libc.stdlib cimport free, malloc


def dtw_alignment(double[::1] x, double[::1] y):
    """Accumulated cost and alignment path for two 1-D sequences."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t m = y.shape[0]
    cdef double *acc = <double *> malloc(n * m * sizeof(double))
    if acc == NULL:
        raise MemoryError()
    cdef Py_ssize_t i, j
    cdef double cost, best, diag, up, left, xi
    try:
        for i in range(n):
            xi = x[i]
            for j in range(m):
                cost = xi - y[j]
                if cost < 0.0:
                    cost = -cost
                if i == 0 and j == 0:
                    acc[0] = cost
                elif i == 0:
                    acc[j] = acc[j - 1] + cost
                elif j == 0:
                    acc[i * m] = acc[(i - 1) * m] + cost
                else:
                    best = acc[(i - 1) * m + (j - 1)]
                    if acc[(i - 1) * m + j] < best:
                        best = acc[(i - 1) * m + j]
                    if acc[i * m + (j - 1)] < best:
                        best = acc[i * m + (j - 1)]
                    acc[i * m + j] = best + cost

        i = n - 1
        j = m - 1
        path = [(i, j)]
        while i > 0 or j > 0:
            if i == 0:
                j -= 1
            elif j == 0:
                i -= 1
            else:
                diag = acc[(i - 1) * m + (j - 1)]
                up = acc[(i - 1) * m + j]
                left = acc[i * m + (j - 1)]
                if diag <= up and diag <= left:
                    i -= 1
                    j -= 1
                elif up <= left:
                    i -= 1
                else:
                    j -= 1
            path.append((i, j))
        path.reverse()
        return acc[(n - 1) * m + (m - 1)], path
    finally:
        free(acc)
