"""Pure-NumPy versions of the compiled inner loops in ``_ckernels.pyx``."""
import numpy as np
import scipy.sparse as sp
from scipy.special import jv


def chebyshev_series(indptr, indices, data, psi, coeffs, scale, shift):
    n = psi.shape[0]
    mat = sp.csr_matrix((data, indices, indptr), shape=(n, n))

    def step(x):
        return (mat @ x - shift * x) / scale

    prev = np.array(psi, dtype=complex)
    out = coeffs[0] * prev
    if len(coeffs) == 1:
        return out
    cur = step(prev)
    out += coeffs[1] * cur
    for c in coeffs[2:]:
        prev, cur = cur, 2.0 * step(cur) - prev
        out += c * cur
    return out


def norm_sq_eigen(gram, y0, lam, tau):
    y = y0 * np.exp(-1j * lam * tau)
    return float(np.real(np.vdot(y, gram @ y)))


def norm_crossing(gram, y0, lam, t_hi, threshold, resolution):
    lo, hi = 0.0, t_hi
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if norm_sq_eigen(gram, y0, lam, mid) > threshold:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def chebyshev_moments(indptr, indices, data, psi, n_moments, scale, shift):
    n = psi.shape[0]
    mat = sp.csr_matrix((data, indices, indptr), shape=(n, n))

    def step(x):
        return (mat @ x - shift * x) / scale

    mu = np.zeros(max(n_moments, 2))
    prev = np.array(psi, dtype=float)
    cur = step(prev)
    mu0 = prev @ prev
    mu1 = cur @ prev
    mu[0], mu[1] = mu0, mu1
    for k in range(1, (n_moments + 1) // 2):
        nxt = 2.0 * step(cur) - prev
        if 2 * k < n_moments:
            mu[2 * k] = 2.0 * (cur @ cur) - mu0
        if 2 * k + 1 < n_moments:
            mu[2 * k + 1] = 2.0 * (nxt @ cur) - mu1
        prev, cur = cur, nxt
    return mu[:n_moments]


def bessel_j_sequence(x, kmax):
    return jv(np.arange(kmax + 1), x)
