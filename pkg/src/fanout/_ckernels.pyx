# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.  Signatures mirror :mod:`fanout._pykernels`."""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, exp, fabs

cnp.import_array()

ctypedef double complex cplx


cdef inline void _scaled_matvec(const cnp.int32_t[:] indptr, const cnp.int32_t[:] indices,
                                const double[:] data, const cplx[:] x, cplx[:] out,
                                double inv_scale, double shift) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef Py_ssize_t n = x.shape[0]
    cdef cplx acc
    for i in range(n):
        acc = -shift * x[i]
        for k in range(indptr[i], indptr[i + 1]):
            acc = acc + data[k] * x[indices[k]]
        out[i] = acc * inv_scale


def chebyshev_series(const cnp.int32_t[:] indptr, const cnp.int32_t[:] indices,
                     const double[:] data, const cplx[:] psi, const cplx[:] coeffs,
                     double scale, double shift):
    """Return sum_k coeffs[k] T_k((H - shift) / scale) psi for a real CSR matrix H."""
    cdef Py_ssize_t n = psi.shape[0]
    cdef Py_ssize_t nk = coeffs.shape[0]
    cdef Py_ssize_t i, k
    cdef double inv_scale = 1.0 / scale
    out_arr = np.empty(n, dtype=np.complex128)
    prev_arr = np.empty(n, dtype=np.complex128)
    cur_arr = np.empty(n, dtype=np.complex128)
    nxt_arr = np.empty(n, dtype=np.complex128)
    cdef cplx[:] out = out_arr
    cdef cplx[:] prev = prev_arr
    cdef cplx[:] cur = cur_arr
    cdef cplx[:] nxt = nxt_arr
    cdef cplx[:] tmp
    cdef cplx c
    with nogil:
        c = coeffs[0]
        for i in range(n):
            prev[i] = psi[i]
            out[i] = c * psi[i]
        if nk > 1:
            _scaled_matvec(indptr, indices, data, prev, cur, inv_scale, shift)
            c = coeffs[1]
            for i in range(n):
                out[i] = out[i] + c * cur[i]
        for k in range(2, nk):
            _scaled_matvec(indptr, indices, data, cur, nxt, inv_scale, shift)
            c = coeffs[k]
            for i in range(n):
                nxt[i] = 2.0 * nxt[i] - prev[i]
                out[i] = out[i] + c * nxt[i]
            tmp = prev
            prev = cur
            cur = nxt
            nxt = tmp
    return out_arr


cdef double _norm_sq(const cplx[:, :] gram, const cplx[:] y0, const cplx[:] lam,
                     double tau, cplx[:] work) noexcept nogil:
    cdef Py_ssize_t d = y0.shape[0]
    cdef Py_ssize_t i, j
    cdef double re, im, mag
    cdef cplx acc, total = 0
    for i in range(d):
        # exp(-i lam tau) = exp(Im(lam) tau) * (cos(Re(lam) tau) - i sin(Re(lam) tau))
        mag = exp(lam[i].imag * tau)
        re = cos(lam[i].real * tau)
        im = -sin(lam[i].real * tau)
        work[i] = y0[i] * mag * (re + 1j * im)
    for i in range(d):
        acc = 0
        for j in range(d):
            acc = acc + gram[i, j] * work[j]
        total = total + work[i].conjugate() * acc
    return total.real


def norm_sq_eigen(const cplx[:, :] gram, const cplx[:] y0, const cplx[:] lam, double tau):
    """Squared norm of V exp(-i diag(lam) tau) y0 given gram = V^H V."""
    work_arr = np.empty(y0.shape[0], dtype=np.complex128)
    cdef cplx[:] work = work_arr
    cdef double out
    with nogil:
        out = _norm_sq(gram, y0, lam, tau, work)
    return out


def norm_crossing(const cplx[:, :] gram, const cplx[:] y0, const cplx[:] lam,
                  double t_hi, double threshold, double resolution):
    """Bisect for the time in [0, t_hi] where the squared norm falls to ``threshold``.

    The squared norm must be non-increasing on the interval with
    norm(0) > threshold >= norm(t_hi).
    """
    work_arr = np.empty(y0.shape[0], dtype=np.complex128)
    cdef cplx[:] work = work_arr
    cdef double lo = 0.0, hi = t_hi, mid, val
    with nogil:
        while hi - lo > resolution:
            mid = 0.5 * (lo + hi)
            val = _norm_sq(gram, y0, lam, mid, work)
            if val > threshold:
                lo = mid
            else:
                hi = mid
    return 0.5 * (lo + hi)


cdef inline void _scaled_matvec_real(const cnp.int32_t[:] indptr, const cnp.int32_t[:] indices,
                                     const double[:] data, const double[:] x, double[:] out,
                                     double inv_scale, double shift) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef Py_ssize_t n = x.shape[0]
    cdef double acc
    for i in range(n):
        acc = -shift * x[i]
        for k in range(indptr[i], indptr[i + 1]):
            acc = acc + data[k] * x[indices[k]]
        out[i] = acc * inv_scale


def chebyshev_moments(const cnp.int32_t[:] indptr, const cnp.int32_t[:] indices,
                      const double[:] data, const double[:] psi, Py_ssize_t n_moments,
                      double scale, double shift):
    """Moments <psi| T_k((H - shift) / scale) |psi> for k < n_moments, real H and psi.

    Uses T_{2k} = 2 T_k^2 - 1 and T_{2k+1} = 2 T_{k+1} T_k - T_1, so only
    about n_moments / 2 matrix-vector products are needed.
    """
    cdef Py_ssize_t n = psi.shape[0]
    cdef Py_ssize_t i, k, half
    cdef double inv_scale = 1.0 / scale
    cdef double mu0 = 0.0, mu1 = 0.0, s_kk, s_k1k
    mu_arr = np.zeros(max(n_moments, 2), dtype=np.float64)
    prev_arr = np.empty(n, dtype=np.float64)
    cur_arr = np.empty(n, dtype=np.float64)
    nxt_arr = np.empty(n, dtype=np.float64)
    cdef double[:] mu = mu_arr
    cdef double[:] prev = prev_arr
    cdef double[:] cur = cur_arr
    cdef double[:] nxt = nxt_arr
    cdef double[:] tmp
    with nogil:
        for i in range(n):
            prev[i] = psi[i]
            mu0 = mu0 + psi[i] * psi[i]
        _scaled_matvec_real(indptr, indices, data, prev, cur, inv_scale, shift)
        for i in range(n):
            mu1 = mu1 + cur[i] * psi[i]
        mu[0] = mu0
        mu[1] = mu1
        half = (n_moments + 1) // 2
        for k in range(1, half):
            # cur = phi_k, prev = phi_{k-1}
            _scaled_matvec_real(indptr, indices, data, cur, nxt, inv_scale, shift)
            s_kk = 0.0
            s_k1k = 0.0
            for i in range(n):
                nxt[i] = 2.0 * nxt[i] - prev[i]
                s_kk = s_kk + cur[i] * cur[i]
                s_k1k = s_k1k + nxt[i] * cur[i]
            if 2 * k < n_moments:
                mu[2 * k] = 2.0 * s_kk - mu0
            if 2 * k + 1 < n_moments:
                mu[2 * k + 1] = 2.0 * s_k1k - mu1
            tmp = prev
            prev = cur
            cur = nxt
            nxt = tmp
    return mu_arr[:n_moments]


def bessel_j_sequence(double x, Py_ssize_t kmax):
    """J_0(x) .. J_kmax(x) for x > 0 by Miller's backward recurrence.

    Normalised with J_0 + 2 sum_k J_2k = 1.  Start order sits well past both
    kmax and x so the seed error has decayed by the time it reaches kmax.
    """
    cdef Py_ssize_t start = kmax + 40 + <Py_ssize_t>(x + 3.0 * x ** (1.0 / 3.0))
    cdef Py_ssize_t k, i
    cdef double jp1 = 0.0, jk = 1e-300, jm1, norm = 0.0, inv
    out_arr = np.zeros(kmax + 1, dtype=np.float64)
    cdef double[:] out = out_arr
    with nogil:
        for k in range(start, 0, -1):
            jm1 = (2.0 * k / x) * jk - jp1
            jp1 = jk
            jk = jm1
            if k - 1 <= kmax:
                out[k - 1] = jk
            if (k - 1) % 2 == 0:
                norm = norm + (2.0 * jk if k - 1 > 0 else jk)
            if fabs(jk) > 1e250:
                # Rescale everything computed so far.
                jk = jk * 1e-250
                jp1 = jp1 * 1e-250
                norm = norm * 1e-250
                for i in range(k - 1, kmax + 1):
                    out[i] = out[i] * 1e-250
        inv = 1.0 / norm
        for i in range(kmax + 1):
            out[i] = out[i] * inv
    return out_arr
