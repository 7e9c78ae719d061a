"""Closed-system time evolution of block (or full-space) state vectors.

Operators up to ``DENSE_LIMIT`` use an exact eigendecomposition.  Larger ones
go through a Chebyshev expansion of ``exp(-iHt)`` whose truncation is picked
from the Bessel-coefficient tail, so the L2 error stays below ``tol``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import jv

from . import _pykernels, kernels
from .dicke import BlockOperator

DENSE_LIMIT = 256
DEFAULT_TOL = 1e-10
# Largest scale * dt handled by one Chebyshev expansion.
_MAX_SLICE_PHASE = 400.0


def _as_matrix(H, check_hermitian: bool = True):
    """Return (matrix, is_sparse) after validating hermiticity."""
    if isinstance(H, BlockOperator):
        mat = H.to_sparse()
        flagged = H.hermitian
    elif sp.issparse(H):
        mat = sp.csr_matrix(H)
        flagged = False
    else:
        mat = np.asarray(H)
        flagged = False
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"operator must be square, got shape {mat.shape}")
    if check_hermitian and not flagged:
        diff = mat - mat.conj().T
        err = abs(diff).max() if sp.issparse(diff) else np.abs(diff).max(initial=0.0)
        scale = max(1.0, abs(mat).max() if sp.issparse(mat) else np.abs(mat).max(initial=0.0))
        if err > 1e-12 * scale:
            raise ValueError(f"operator is not Hermitian (max |H - H^dagger| = {err:.3g})")
    return mat


def _check_state(mat, psi):
    psi = np.asarray(psi, dtype=complex)
    if psi.ndim != 1 or psi.shape[0] != mat.shape[0]:
        raise ValueError(f"state of length {psi.shape} does not match operator dimension {mat.shape[0]}")
    return psi


class Spectrum:
    """Eigendecomposition of a Hermitian matrix, reusable across evolution times."""

    def __init__(self, H):
        mat = _as_matrix(H)
        dense = mat.toarray() if sp.issparse(mat) else mat
        if np.isrealobj(dense) or not np.any(dense.imag):
            self.values, self.vectors = np.linalg.eigh(np.real(dense))
        else:
            self.values, self.vectors = np.linalg.eigh(dense)
        self.dim = dense.shape[0]

    def coefficients(self, psi):
        return self.vectors.conj().T @ psi

    def evolve(self, psi, t: float) -> np.ndarray:
        c = self.coefficients(psi)
        return self.vectors @ (np.exp(-1j * self.values * t) * c)

    def evolve_many(self, psi, times) -> np.ndarray:
        """States at each time, shape ``(len(times), dim)``."""
        c = self.coefficients(psi)
        phases = np.exp(-1j * np.outer(times, self.values))
        return (phases * c) @ self.vectors.T

    def overlap(self, bra, psi, t):
        """<bra| exp(-iHt) |psi> for scalar or array ``t``."""
        left = self.coefficients(bra).conj()
        right = self.coefficients(psi)
        weights = left * right
        return np.exp(-1j * np.multiply.outer(t, self.values)) @ weights

    def propagator(self, t: float) -> np.ndarray:
        return (self.vectors * np.exp(-1j * self.values * t)) @ self.vectors.conj().T


def spectral_bounds(mat) -> tuple[float, float]:
    """Gershgorin interval containing the spectrum of a Hermitian matrix."""
    csr = sp.csr_matrix(mat)
    diag = csr.diagonal().real
    radius = np.asarray(abs(csr).sum(axis=1)).ravel() - np.abs(diag)
    return float((diag - radius).min()), float((diag + radius).max())


def chebyshev_terms(x: float, tol: float) -> np.ndarray:
    """Expansion weights ``c_k J_k(x)`` of exp(-i x y) on y in [-1, 1].

    The series is cut once the Bessel tail (bounded by twice the next few
    terms, which decay super-exponentially past k ~ x) is below ``tol``.
    """
    kmax = int(x + 10.0 * max(x, 1.0) ** (1.0 / 3.0) + 30)
    while True:
        k = np.arange(kmax + 1)
        bessel = kernels.bessel_j_sequence(x, kmax) if x > 1e-6 else jv(k, x)
        tail = 2.0 * np.abs(bessel)
        # Cumulative tail from the end.
        rev = np.cumsum(tail[::-1])[::-1]
        ok = np.nonzero(rev < tol)[0]
        if ok.size and ok[0] > x:
            cut = int(ok[0])
            break
        kmax *= 2
    weights = 2.0 * (-1j) ** k[:cut] * bessel[:cut]
    weights[0] = bessel[0]
    return weights


def chebyshev_evolve(mat, psi, t: float, tol: float = DEFAULT_TOL) -> np.ndarray:
    """exp(-iHt) psi by Chebyshev expansion.

    Real symmetric operators (every block Hamiltonian) use the compiled
    kernel when available; complex Hermitian ones use the NumPy recurrence.
    """
    csr = sp.csr_matrix(mat)
    if np.iscomplexobj(csr.data) and np.any(csr.data.imag):
        series = _pykernels.chebyshev_series
        data = csr.data.astype(np.complex128)
    else:
        series = kernels.chebyshev_series
        data = csr.data.real.astype(np.float64)
    csr = sp.csr_matrix((data, csr.indices.astype(np.int32), csr.indptr.astype(np.int32)),
                        shape=csr.shape)
    lo, hi = spectral_bounds(csr)
    shift = 0.5 * (hi + lo)
    scale = max(0.5 * (hi - lo), 1e-300)
    psi = np.ascontiguousarray(psi, dtype=np.complex128)
    if t == 0 or hi == lo:
        return psi * np.exp(-1j * shift * t)
    slices = max(1, math.ceil(abs(scale * t) / _MAX_SLICE_PHASE))
    dt = t / slices
    weights = np.ascontiguousarray(chebyshev_terms(scale * dt, tol / slices), dtype=np.complex128)
    phase = np.exp(-1j * shift * dt)
    for _ in range(slices):
        psi = series(csr.indptr, csr.indices, csr.data, psi, weights, scale, shift) * phase
    return psi


def evolve_state(H, psi0, t: float, tol: float = DEFAULT_TOL, *, method: str = "auto",
                 dense_limit: int = DENSE_LIMIT) -> np.ndarray:
    """Return exp(-iHt) psi0.

    ``method`` is ``"dense"``, ``"chebyshev"`` or ``"auto"`` (dense up to
    ``dense_limit``).
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    mat = _as_matrix(H)
    psi0 = _check_state(mat, psi0)
    if method == "auto":
        method = "dense" if mat.shape[0] <= dense_limit else "chebyshev"
    if method == "dense":
        return Spectrum(mat).evolve(psi0, t)
    if method == "chebyshev":
        return chebyshev_evolve(mat, psi0, t, tol)
    raise ValueError(f"unknown method {method!r}")


def propagator(H, t: float, dense_limit: int = DENSE_LIMIT) -> np.ndarray:
    """Dense unitary exp(-iHt)."""
    mat = _as_matrix(H)
    if mat.shape[0] > dense_limit:
        raise ValueError(f"dimension {mat.shape[0]} exceeds dense limit {dense_limit}")
    return Spectrum(mat).propagator(t)


def chebyshev_survival(mat, psi0, t: float, tol: float = DEFAULT_TOL,
                       bounds: tuple[float, float] | None = None) -> complex:
    """<psi0| exp(-iHt) |psi0> from Chebyshev moments of a real symmetric CSR matrix.

    Needs about half as many matrix-vector products as evolving the state.
    A complex ``psi0`` is split into real and imaginary parts, whose moments add.
    """
    csr = sp.csr_matrix(mat)
    if np.iscomplexobj(csr.data) and np.any(csr.data.imag):
        raise ValueError("Chebyshev kernel supports real symmetric operators only")
    indptr = csr.indptr.astype(np.int32)
    indices = csr.indices.astype(np.int32)
    data = np.ascontiguousarray(csr.data.real, dtype=np.float64)
    lo, hi = bounds if bounds is not None else spectral_bounds(csr)
    shift = 0.5 * (hi + lo)
    scale = 0.5 * (hi - lo)
    psi0 = np.asarray(psi0)
    norm2 = float(np.vdot(psi0, psi0).real)
    if t == 0 or scale <= 0:
        return complex(norm2 * np.exp(-1j * shift * t))
    weights = chebyshev_terms(scale * t, tol / max(norm2, 1e-300))
    parts = [psi0.real] + ([psi0.imag] if np.iscomplexobj(psi0) and np.any(psi0.imag) else [])
    mu = sum(kernels.chebyshev_moments(indptr, indices, data,
                                       np.ascontiguousarray(x, dtype=np.float64),
                                       len(weights), scale, shift) for x in parts)
    return complex(np.exp(-1j * shift * t) * (weights @ mu))


def survival_amplitude(H, psi0, t: float) -> complex:
    """<psi0| exp(-iHt) |psi0> via the eigendecomposition."""
    spec = Spectrum(H)
    return complex(spec.overlap(psi0, psi0, t))


def wrap_phase(phase):
    """Map angles into (-pi, pi]."""
    phase = np.asarray(phase, dtype=float)
    return np.where(phase <= -np.pi, phase + 2 * np.pi, phase)


@dataclass(frozen=True)
class OverlapTrace:
    times: np.ndarray
    amplitude: np.ndarray
    phase: np.ndarray

    def __post_init__(self):
        if not (len(self.times) == len(self.amplitude) == len(self.phase)):
            raise ValueError("times, amplitude and phase must have equal length")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "amplitude", "phase"])
        for row in zip(self.times, self.amplitude, self.phase):
            writer.writerow([f"{v:.17g}" for v in row])
        return buf.getvalue()


def overlap_trace(H, psi0, target, t_max: float, samples: int) -> OverlapTrace:
    """Amplitude and phase of <target|psi(t)> on a uniform grid over [0, t_max]."""
    if samples < 2:
        raise ValueError("samples must be >= 2")
    spec = Spectrum(H)
    psi0 = _check_state(spec.vectors, psi0)
    target = _check_state(spec.vectors, target)
    times = np.linspace(0.0, t_max, samples)
    ov = spec.overlap(target, psi0, times)
    return OverlapTrace(times, np.abs(ov), wrap_phase(np.angle(ov)))
