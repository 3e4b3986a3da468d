# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled cyclic coordinate descent over a precomputed Gram matrix."""
import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline double _soft(double z, double gamma) nogil:
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


def soft_threshold(double z, double gamma):
    return _soft(z, gamma)


def cd_gram(double[:, ::1] gram, double[::1] corr, double alpha,
            double[::1] w, double tol, int max_sweeps):
    """Run lasso coordinate descent in place on ``w``.

    Minimises ``0.5 w'Gw - c'w + alpha*|w|_1``. Returns ``(n_sweeps, max_delta)``.
    """
    cdef Py_ssize_t d = gram.shape[0]
    cdef Py_ssize_t j, k
    cdef int sweep = 0
    cdef double old, new, delta, rho, gjj, max_delta = 0.0
    cdef double[::1] q = np.empty(d, dtype=np.float64)

    with nogil:
        # q = c - G w
        for k in range(d):
            q[k] = corr[k]
        for j in range(d):
            if w[j] != 0.0:
                for k in range(d):
                    q[k] -= w[j] * gram[j, k]
        while sweep < max_sweeps:
            sweep += 1
            max_delta = 0.0
            for j in range(d):
                gjj = gram[j, j]
                if gjj <= 0.0:
                    continue
                old = w[j]
                rho = q[j] + gjj * old
                new = _soft(rho, alpha) / gjj
                delta = new - old
                if delta != 0.0:
                    for k in range(d):
                        q[k] -= delta * gram[j, k]
                    w[j] = new
                    if delta < 0.0:
                        delta = -delta
                    if delta > max_delta:
                        max_delta = delta
            if max_delta < tol:
                break
    return sweep, max_delta
