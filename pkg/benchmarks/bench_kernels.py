"""Compare the compiled kernels with the NumPy fallback (and dense diagonalisation).

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``.
"""
import argparse
import math
import timeit

import numpy as np

from fanout import _pykernels, gatefid
from fanout.dicke import ComputationalClass, DriveConfig, build_block_hamiltonian, enumerate_block_basis
from fanout.propagate import Spectrum, chebyshev_terms

try:
    from fanout import _ckernels
except ImportError:
    _ckernels = None


def block_case(m: int, ratio: float = 20.0):
    basis = enumerate_block_basis(ComputationalClass(0, m, m + 1))
    H = build_block_hamiltonian(basis, DriveConfig.from_ratio(ratio)).to_sparse().tocsr()
    radius = float(np.abs(H).sum(axis=1).max())
    return (H.indptr.astype(np.int32), H.indices.astype(np.int32), H.data.astype(float),
            basis.initial_state().real.copy(), radius, H)


def nonhermitian_case(d: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((d, d))
    heff = (A + A.T) - 0.05j * np.diag(rng.random(d))
    lam, V = np.linalg.eig(heff)
    y0 = np.linalg.solve(V, np.eye(d, 1).ravel().astype(complex))
    return np.ascontiguousarray(V.conj().T @ V), np.ascontiguousarray(y0), np.ascontiguousarray(lam)


def bench(label, fn, repeat):
    best = min(timeit.repeat(fn, number=1, repeat=repeat))
    print(f"{label:<44s} {best * 1e3:10.3f} ms")
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    impls = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    if _ckernels is None:
        print("compiled extension not available; fallback timings only")

    for m in (20, 60, 99):
        indptr, indices, data, psi, radius, H = block_case(m)
        x = radius * math.pi
        K = len(chebyshev_terms(x, 1e-13))
        print(f"-- survival amplitude, block m={m} (dim {H.shape[0]}, {K} moments)")
        for name, mod in impls:
            bench(f"chebyshev_moments [{name}]",
                  lambda: mod.chebyshev_moments(indptr, indices, data, psi, K, radius, 0.0), args.repeat)
            bench(f"bessel_j_sequence [{name}]", lambda: mod.bessel_j_sequence(x, K), args.repeat)
        bench("dense eigh + overlap", lambda: Spectrum(H).overlap(psi, psi, math.pi), args.repeat)

    for d in (20, 80):
        gram, y0, lam = nonhermitian_case(d)
        print(f"-- jump-time bisection, sector dim {d}")
        for name, mod in impls:
            bench(f"norm_crossing [{name}]",
                  lambda: mod.norm_crossing(gram, y0, lam, 1.0, 0.5, 1e-6), args.repeat)

    print("-- full timing scan, n=60, ratio in [18, 20]")
    for method in ("dense", "moments"):
        def run():
            gatefid._cached_amplitude.cache_clear()
            gatefid.timing_scan(60, 18.0, 20.0, method=method)
        bench(f"timing_scan method={method}", run, 1)


if __name__ == "__main__":
    main()
