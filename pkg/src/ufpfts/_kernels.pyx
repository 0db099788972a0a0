# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels; see ``_kernels_py`` for the reference."""
import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport exp, floor, log, INFINITY
from numpy.random cimport bitgen_t

cnp.import_array()


def bspline_design(knots, int degree, x):
    cdef const double[::1] kn = np.ascontiguousarray(knots, dtype=np.float64)
    cdef const double[::1] xs = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef int p = degree
    cdef Py_ssize_t nb = kn.shape[0] - p - 1
    cdef Py_ssize_t npts = xs.shape[0]
    out_arr = np.zeros((npts, nb))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] left = np.zeros(p + 1)
    cdef double[::1] right = np.zeros(p + 1)
    cdef double[::1] N = np.zeros(p + 1)
    cdef Py_ssize_t r, span, j, k, lo, hi, mid
    cdef double xv, saved, temp
    cdef double top = kn[nb]
    for r in range(npts):
        xv = xs[r]
        if xv >= top:
            span = nb - 1
            while span > p and kn[span] == kn[span + 1]:
                span -= 1
        else:
            # largest index with kn[span] <= xv
            lo = 0
            hi = kn.shape[0]
            while lo < hi:
                mid = (lo + hi) // 2
                if kn[mid] <= xv:
                    lo = mid + 1
                else:
                    hi = mid
            span = lo - 1
            if span < p:
                span = p
            if span > nb - 1:
                span = nb - 1
        N[0] = 1.0
        for j in range(1, p + 1):
            N[j] = 0.0
        for j in range(1, p + 1):
            left[j] = xv - kn[span + 1 - j]
            right[j] = kn[span + j] - xv
            saved = 0.0
            for k in range(j):
                temp = N[k] / (right[k + 1] + left[j - k])
                N[k] = saved + right[k + 1] * temp
                saved = left[j - k] * temp
            N[j] = saved
        for j in range(p + 1):
            out[r, span - p + j] = N[j]
    return out_arr


cdef struct LogVarCtx:
    double *berr
    double *n
    double *sse
    double *v
    Py_ssize_t S
    Py_ssize_t L
    Py_ssize_t col
    Py_ssize_t lo
    Py_ssize_t hi
    double cur
    double mean
    double inv2var


cdef double _logf_eta(LogVarCtx *c, double x) noexcept nogil:
    cdef Py_ssize_t s
    cdef double b, vv, acc = 0.0
    for s in range(c.lo, c.hi):
        b = c.berr[s * c.L + c.col]
        if b == 0.0:
            continue
        vv = (c.v[s] - b * c.cur) + b * x
        if c.sse[s] > 0.0:
            if vv < -700.0:
                return -INFINITY
            acc += c.n[s] * vv + c.sse[s] * exp(-vv)
        else:
            acc += c.n[s] * vv
    return -0.5 * acc - (x - c.mean) * (x - c.mean) * c.inv2var


cdef double _logf_w(LogVarCtx *c, double x) noexcept nogil:
    cdef Py_ssize_t s = c.col
    cdef double vv = (c.v[s] - c.cur) + x
    cdef double val = -0.5 * c.n[s] * vv - x * x * c.inv2var
    if c.sse[s] > 0.0:
        if vv < -700.0:
            return -INFINITY
        val -= 0.5 * c.sse[s] * exp(-vv)
    return val


cdef inline double _logf(LogVarCtx *c, int mode, double x) noexcept nogil:
    if mode == 0:
        return _logf_eta(c, x)
    return _logf_w(c, x)


cdef double _slice_step(bitgen_t *bg, LogVarCtx *c, int mode, double x0,
                        double width, int max_steps) noexcept nogil:
    cdef double logy = _logf(c, mode, x0) + log(1.0 - bg.next_double(bg.state))
    cdef double lo = x0 - width * bg.next_double(bg.state)
    cdef double hi = lo + width
    cdef int j = <int> floor(max_steps * bg.next_double(bg.state))
    cdef int k = max_steps - 1 - j
    cdef double x1
    while j > 0 and _logf(c, mode, lo) > logy:
        lo -= width
        j -= 1
    while k > 0 and _logf(c, mode, hi) > logy:
        hi += width
        k -= 1
    while True:
        x1 = lo + bg.next_double(bg.state) * (hi - lo)
        if _logf(c, mode, x1) > logy:
            return x1
        if x1 < x0:
            lo = x1
        else:
            hi = x1


def slice_logvar(rng, double[::1] eta, double[::1] w, berr, n, sse,
                 double eta_mean, double eta_sd, double tau_eta,
                 double width_eta, double width_w, int max_steps):
    cdef const double[:, ::1] B = np.ascontiguousarray(berr, dtype=np.float64)
    cdef const double[::1] nn = np.ascontiguousarray(n, dtype=np.float64)
    cdef const double[::1] ss = np.ascontiguousarray(sse, dtype=np.float64)
    cdef Py_ssize_t S = B.shape[0]
    cdef Py_ssize_t L = B.shape[1]
    cdef double[::1] v = np.asarray(B) @ np.asarray(eta) + np.asarray(w)
    cdef bitgen_t *bg = <bitgen_t *> PyCapsule_GetPointer(
        rng.bit_generator.capsule, "BitGenerator")
    cdef LogVarCtx c
    cdef Py_ssize_t l, s
    cdef double new, b
    c.berr = &B[0, 0]
    c.n = &nn[0]
    c.sse = &ss[0]
    c.v = &v[0]
    c.S = S
    c.L = L
    with rng.bit_generator.lock:
        with nogil:
            c.mean = eta_mean
            c.inv2var = 0.5 / (eta_sd * eta_sd)
            for l in range(L):
                c.col = l
                c.lo = 0
                while c.lo < S and B[c.lo, l] == 0.0:
                    c.lo += 1
                c.hi = S
                while c.hi > c.lo and B[c.hi - 1, l] == 0.0:
                    c.hi -= 1
                c.cur = eta[l]
                new = _slice_step(bg, &c, 0, eta[l], width_eta, max_steps)
                for s in range(c.lo, c.hi):
                    b = B[s, l]
                    if b != 0.0:
                        v[s] = (v[s] - b * eta[l]) + b * new
                eta[l] = new
            c.mean = 0.0
            c.inv2var = 0.5 / (tau_eta * tau_eta)
            c.lo = 0
            c.hi = 0
            for s in range(S):
                c.col = s
                c.cur = w[s]
                new = _slice_step(bg, &c, 1, w[s], width_w, max_steps)
                v[s] = (v[s] - w[s]) + new
                w[s] = new
