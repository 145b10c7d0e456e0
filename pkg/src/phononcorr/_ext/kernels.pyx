# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Signatures mirror ``phononcorr._kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def lindblad_rhs(const double complex[:, ::1] rho,
                 const double complex[::1] diag,
                 const cnp.int64_t[:, ::1] hsrc,
                 const double complex[:, ::1] hw,
                 const cnp.int64_t[:, ::1] jsrc,
                 const double complex[:, ::1] jw,
                 double complex[:, ::1] out):
    cdef Py_ssize_t d = rho.shape[0]
    cdef Py_ssize_t nh = hsrc.shape[0]
    cdef Py_ssize_t nj = jsrc.shape[0]
    cdef Py_ssize_t i, j, k, s, si
    cdef double complex acc, wi
    cdef double complex[:, ::1] a = np.empty((d, d), dtype=np.complex128)

    # a = H_eff @ rho
    for i in range(d):
        for j in range(d):
            a[i, j] = diag[i] * rho[i, j]
        for k in range(nh):
            wi = hw[k, i]
            if wi == 0:
                continue
            s = hsrc[k, i]
            for j in range(d):
                a[i, j] = a[i, j] + wi * rho[s, j]

    for i in range(d):
        for j in range(d):
            acc = a[i, j] - a[j, i].conjugate()
            out[i, j] = -1j * acc

    for k in range(nj):
        for i in range(d):
            wi = jw[k, i]
            if wi == 0:
                continue
            si = jsrc[k, i]
            for j in range(d):
                if jw[k, j] == 0:
                    continue
                out[i, j] = out[i, j] + wi * jw[k, j].conjugate() * rho[si, jsrc[k, j]]


def pair_histogram(const double[::1] starts,
                   const double[::1] stops,
                   double bin_width,
                   Py_ssize_t half_bins,
                   cnp.int64_t[::1] counts):
    cdef Py_ssize_t ns = starts.shape[0]
    cdef Py_ssize_t nt = stops.shape[0]
    cdef double window = (half_bins + 0.5) * bin_width
    cdef Py_ssize_t i, j, lo = 0, b
    cdef double t0, delay
    for i in range(ns):
        t0 = starts[i]
        while lo < nt and stops[lo] < t0 - window:
            lo += 1
        j = lo
        while j < nt:
            delay = stops[j] - t0
            if delay >= window:
                break
            b = <Py_ssize_t>floor(delay / bin_width + 0.5) + half_bins
            if 0 <= b < 2 * half_bins + 1:
                counts[b] += 1
            j += 1
