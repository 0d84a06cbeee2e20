# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels in :mod:`sicss._pykernels`.

Both operands are split into real and imaginary planes with the bin axis
innermost, so the accumulation over bins runs on contiguous memory.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef void _power(const double[:, :, ::1] zr, const double[:, :, ::1] zi,
                 const double[:, :, ::1] hr, const double[:, :, ::1] hi,
                 double[:, :, ::1] out, double[::1] re_buf, double[::1] im_buf) noexcept nogil:
    # zr, zi: (T, M, F); hr, hi: (A, M, F); out: (T, A, F)
    cdef Py_ssize_t T = zr.shape[0], M = zr.shape[1], F = zr.shape[2], A = hr.shape[0]
    cdef Py_ssize_t t, a, f, m
    cdef double* re = &re_buf[0]
    cdef double* im = &im_buf[0]
    cdef const double* ar
    cdef const double* ai
    cdef const double* br
    cdef const double* bi
    cdef double* o
    for t in range(T):
        for a in range(A):
            for f in range(F):
                re[f] = 0.0
                im[f] = 0.0
            for m in range(M):
                ar = &zr[t, m, 0]
                ai = &zi[t, m, 0]
                br = &hr[a, m, 0]
                bi = &hi[a, m, 0]
                # conj(z) * h
                for f in range(F):
                    re[f] += ar[f] * br[f] + ai[f] * bi[f]
                    im[f] += ar[f] * bi[f] - ai[f] * br[f]
            o = &out[t, a, 0]
            for f in range(F):
                o[f] = re[f] * re[f] + im[f] * im[f]


# Steering tables are reused across calls; keep the split planes of the last
# read-only one.
_cached = [None, None, None]


def _split(X):
    Xt = X.transpose(0, 2, 1)
    return np.ascontiguousarray(Xt.real), np.ascontiguousarray(Xt.imag)


def _planes(H):
    if _cached[0] is H:
        return _cached[1], _cached[2]
    arr = np.asarray(H, dtype=np.complex128)
    if arr.ndim != 3:
        raise ValueError("H must be (angles, bins, channels)")
    hr, hi = _split(arr)
    if arr is H and not arr.flags.writeable:
        _cached[:] = [H, hr, hi]
    return hr, hi


def projection_power(Z, H):
    hr_, hi_ = _planes(H)
    Z = np.asarray(Z, dtype=np.complex128)
    if Z.ndim != 3 or Z.shape[1] != hr_.shape[2] or Z.shape[2] != hr_.shape[1]:
        raise ValueError("Z and H must share (bin, channel) dimensions")
    out = np.empty((Z.shape[0], hr_.shape[0], Z.shape[1]), dtype=np.float64)
    if out.size == 0:
        return out
    zr_, zi_ = _split(Z)
    cdef const double[:, :, ::1] zr = zr_
    cdef const double[:, :, ::1] zi = zi_
    cdef const double[:, :, ::1] hr = hr_
    cdef const double[:, :, ::1] hi = hi_
    cdef double[:, :, ::1] o = out
    cdef double[::1] re = np.empty(Z.shape[1])
    cdef double[::1] im = np.empty(Z.shape[1])
    with nogil:
        _power(zr, zi, hr, hi, o, re, im)
    return out


def cacg_log_terms(Z, H, double epsilon):
    # libm log1p is scalar; numpy's is vectorized and several times faster here
    out = projection_power(Z, H)
    out *= -1.0 / (1.0 + epsilon)
    np.log1p(out, out=out)
    np.negative(out, out=out)
    return out
