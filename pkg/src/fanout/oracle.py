"""Exact small-n reference on the full qudit x oscillator product space.

Each qubit carries four levels, ordered ``0, 1, e, f``; the oscillator is
truncated at ``phonon_cutoff``.  The control qubit is the most significant
tensor factor and the oscillator the least significant, so the flat index
of ``(d_1, ..., d_n, p)`` is ``((d_1 * 4 + d_2) * 4 + ...) * (cutoff + 1) + p``.

Everything here is built from scratch with Kronecker products and is used
to check the block-reduced modules.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import expm_multiply

from .dicke import (BlockBasis, ComputationalClass, DriveConfig, build_block_collapse_ops,
                    build_block_hamiltonian, enumerate_block_basis)
from .gatefid import target_phase

__all__ = [
    "FullSpace",
    "BlockPartition",
    "BlockCheck",
    "RandomStateComparison",
    "build_full_step_hamiltonians",
    "full_collapse_ops",
    "full_gate_sequence",
    "basis_amplitudes",
    "exact_lindblad_evolve",
    "reachable_subspace",
    "dicke_partition",
    "verify_block_structure",
    "dicke_state",
    "block_embedding",
    "factor_mismatch",
    "block_lindblad_fidelity",
    "oracle_lindblad_fidelities",
    "rmse_random_states",
]

MAX_QUBITS = 5
LINDBLAD_DIM_LIMIT = 4096
BLOCK_TOL = 1e-12

LEVELS = "01ef"
G0, G1, E, F = range(4)


def _ket(level: int) -> np.ndarray:
    v = np.zeros(4)
    v[level] = 1.0
    return v


def _flip(to: int, frm: int) -> sp.csr_matrix:
    """|to><frm| on one qudit."""
    return sp.csr_matrix(np.outer(_ket(to), _ket(frm)))


def _annihilation(cutoff: int) -> sp.csr_matrix:
    return sp.diags(np.sqrt(np.arange(1, cutoff + 1, dtype=float)), 1, format="csr")


@dataclass(frozen=True)
class FullSpace:
    n: int
    phonon_cutoff: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.n > MAX_QUBITS:
            raise ValueError(f"full space limited to n <= {MAX_QUBITS} qubits, got {self.n}")
        if self.phonon_cutoff < 1:
            raise ValueError("phonon_cutoff must be >= 1")

    @property
    def n_phonon(self) -> int:
        return self.phonon_cutoff + 1

    @property
    def dim(self) -> int:
        return 4 ** self.n * self.n_phonon

    def index(self, digits, p: int) -> int:
        if len(digits) != self.n or not 0 <= p <= self.phonon_cutoff:
            raise ValueError(f"bad label {digits!r}, p={p}")
        flat = 0
        for d in digits:
            if not 0 <= d < 4:
                raise ValueError(f"qudit level out of range in {digits!r}")
            flat = flat * 4 + d
        return flat * self.n_phonon + p

    def label(self, index: int) -> tuple[tuple[int, ...], int]:
        if not 0 <= index < self.dim:
            raise IndexError(index)
        flat, p = divmod(index, self.n_phonon)
        digits = []
        for _ in range(self.n):
            flat, d = divmod(flat, 4)
            digits.append(d)
        return tuple(reversed(digits)), p

    def label_str(self, index: int) -> str:
        digits, p = self.label(index)
        return "".join(LEVELS[d] for d in digits) + f",{p}"

    def basis_state(self, digits, p: int = 0) -> np.ndarray:
        psi = np.zeros(self.dim, dtype=complex)
        psi[self.index(digits, p)] = 1.0
        return psi

    def computational_index(self, bits: str, p: int = 0) -> int:
        """Index of the computational state written as a bit string, control first."""
        return self.index(tuple(int(b) for b in bits), p)

    def site_op(self, op, site: int) -> sp.csr_matrix:
        """Single-qudit operator on ``site`` (0 is the control)."""
        left = sp.identity(4 ** site, format="csr")
        right = sp.identity(4 ** (self.n - 1 - site) * self.n_phonon, format="csr")
        return sp.kron(sp.kron(left, op), right, format="csr")

    def site_phonon_op(self, op, site: int, phonon_op) -> sp.csr_matrix:
        left = sp.identity(4 ** site, format="csr")
        mid = sp.identity(4 ** (self.n - 1 - site), format="csr")
        return sp.kron(sp.kron(sp.kron(left, op), mid), phonon_op, format="csr")

    def phonon_op(self, op) -> sp.csr_matrix:
        return sp.kron(sp.identity(4 ** self.n, format="csr"), op, format="csr")

    def annihilation(self) -> sp.csr_matrix:
        return self.phonon_op(_annihilation(self.phonon_cutoff))


def _hermitian_part(op: sp.csr_matrix) -> sp.csr_matrix:
    return (op + op.conj().T).tocsr()


def build_full_step_hamiltonians(n: int, drives: DriveConfig, cutoff: int = 1):
    """The three gate steps on the full space: loading pulse, blocking step, unloading pulse."""
    space = FullSpace(n, cutoff)
    a = _annihilation(cutoff)
    load = drives.omega_c * _hermitian_part(space.site_phonon_op(_flip(E, G0), 0, a.T))
    H2 = sp.csr_matrix((space.dim, space.dim))
    for site in range(1, n):
        H2 = H2 + drives.omega_c * _hermitian_part(space.site_phonon_op(_flip(F, E), site, a))
        H2 = H2 + drives.omega_t * _hermitian_part(space.site_op(_flip(E, G1), site))
    H2 = H2.tocsr()
    H2.eliminate_zeros()
    load.eliminate_zeros()
    return load, H2, load.copy()


def full_collapse_ops(space: FullSpace, kappa: float) -> list[sp.csr_matrix]:
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    a = math.sqrt(kappa) * space.annihilation()
    return [a, a.conj().T.tocsr()]


def _expm_hermitian(H: sp.spmatrix, t: float) -> np.ndarray:
    w, v = np.linalg.eigh(H.toarray())
    return (v * np.exp(-1j * w * t)) @ v.conj().T


def pulse_duration(drives: DriveConfig) -> float:
    """Length of the loading and unloading pi pulses."""
    return math.pi / (2.0 * drives.omega_c)


def full_gate_sequence(n: int, drives: DriveConfig, cutoff: int = 1) -> np.ndarray:
    """Dense U = U3 U2 U1 on the full space (requires dim <= 4096)."""
    space = FullSpace(n, cutoff)
    if space.dim > LINDBLAD_DIM_LIMIT:
        raise ValueError(f"dense propagator limited to dim <= {LINDBLAD_DIM_LIMIT}, got {space.dim}")
    H1, H2, H3 = build_full_step_hamiltonians(n, drives, cutoff)
    tp = pulse_duration(drives)
    U1 = _expm_hermitian(H1, tp)
    U2 = _expm_hermitian(H2, drives.duration)
    U3 = _expm_hermitian(H3, tp)
    return U3 @ U2 @ U1


def ideal_phase(bits: str) -> int:
    """Target sign including the -1 the two pi pulses leave on control |0>."""
    control = int(bits[0])
    m = bits[1:].count("1")
    return target_phase(control, m) * (-1 if control == 0 else 1)


def basis_amplitudes(n: int, drives: DriveConfig, cutoff: int = 1) -> dict[str, complex]:
    """<b_target| U |b> for every computational input, with the ideal sign divided out."""
    space = FullSpace(n, cutoff)
    U = full_gate_sequence(n, drives, cutoff)
    out = {}
    for index in range(2 ** n):
        bits = format(index, f"0{n}b")
        k = space.computational_index(bits)
        out[bits] = complex(U[k, k] * ideal_phase(bits))
    return out


# --- master equation -------------------------------------------------------------


def _liouvillian(H: sp.spmatrix, c_ops) -> sp.csr_matrix:
    """Column-stacked generator of d rho/dt = -i[H, rho] + sum c rho c^+ - 1/2 {c^+ c, rho}."""
    d = H.shape[0]
    eye = sp.identity(d, format="csr", dtype=complex)
    H = sp.csr_matrix(H, dtype=complex)
    L = -1j * (sp.kron(eye, H) - sp.kron(H.T, eye))
    for c in c_ops:
        c = sp.csr_matrix(c, dtype=complex)
        cdc = (c.conj().T @ c).tocsr()
        L = L + sp.kron(c.conj(), c) - 0.5 * sp.kron(eye, cdc) - 0.5 * sp.kron(cdc.T, eye)
    return L.tocsr()


def exact_lindblad_evolve(rho0, H, c_ops, t: float, tol: float = 1e-9) -> np.ndarray:
    """rho(t) under the standard trace-preserving Lindblad equation.

    The vectorised generator is exponentiated directly with a truncated
    Taylor series (scipy's ``expm_multiply``), which works to double
    precision; ``tol`` bounds the trace and positivity checks on the result.
    """
    H = sp.csr_matrix(H)
    d = H.shape[0]
    if d > LINDBLAD_DIM_LIMIT:
        raise ValueError(f"Lindblad evolution limited to dim <= {LINDBLAD_DIM_LIMIT}, got {d}")
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (d, d):
        raise ValueError(f"rho0 shape {rho0.shape} does not match operator dim {d}")
    for c in c_ops:
        if c.shape != (d, d):
            raise ValueError("collapse operator dimension mismatch")
    if t == 0:
        return rho0.copy()
    L = _liouvillian(H, c_ops)
    vec = expm_multiply(L * t, rho0.reshape(-1, order="F"))
    rho = vec.reshape((d, d), order="F")
    trace0 = np.trace(rho0)
    if abs(np.trace(rho) - trace0) > tol * max(1.0, abs(trace0)):
        raise ArithmeticError(f"trace drifted by {abs(np.trace(rho) - trace0):.3g}")
    if not np.all(np.isfinite(rho)):
        raise ArithmeticError("non-finite density matrix")
    return rho


def reachable_subspace(ops, seeds) -> np.ndarray:
    """Sorted indices connected to ``seeds`` through nonzero elements of any operator."""
    ops = [sp.csr_matrix(o) for o in ops]
    d = ops[0].shape[0]
    pattern = sp.csr_matrix((d, d), dtype=bool)
    for o in ops:
        pattern = pattern + (abs(o) > 0)
    _, comp = connected_components(pattern, directed=False)
    wanted = np.unique(comp[np.asarray(seeds)])
    return np.nonzero(np.isin(comp, wanted))[0]


# --- block structure ---------------------------------------------------------------


@dataclass
class BlockPartition:
    """Disjoint index sets of the full space, one per computational input.

    Block ``bits`` holds every state whose control digit lies in ``{0, e}``
    (control bit 0) or ``{1}`` (control bit 1), whose zero targets are still
    ``0``, whose one targets lie in ``{1, e, f}``, with any phonon number.
    Grouping the blocks by (control, ones count) gives the coarser
    per-class partition.  States outside all blocks carry label -1.
    """

    space: FullSpace
    labels: np.ndarray
    names: list[str]

    def projector_indices(self, name: str) -> np.ndarray:
        return np.nonzero(self.labels == self.names.index(name))[0]

    def class_of(self, name: str) -> ComputationalClass:
        return ComputationalClass(int(name[0]), name[1:].count("1"), self.space.n)

    def coarsened(self) -> "BlockPartition":
        """Same states grouped per (control, ones count)."""
        keys = sorted({(int(nm[0]), nm[1:].count("1")) for nm in self.names})
        key_index = {k: i for i, k in enumerate(keys)}
        remap = np.array([key_index[(int(nm[0]), nm[1:].count("1"))] for nm in self.names])
        labels = np.where(self.labels >= 0, remap[np.maximum(self.labels, 0)], -1)
        return BlockPartition(self.space, labels, [f"{c}:{m}" for c, m in keys])


def dicke_partition(space: FullSpace) -> BlockPartition:
    n = space.n
    names = [format(i, f"0{n}b") for i in range(2 ** n)]
    name_index = {nm: i for i, nm in enumerate(names)}
    labels = np.full(space.dim, -1, dtype=np.int64)
    for index in range(space.dim):
        digits, _ = space.label(index)
        control = {G0: "0", E: "0", G1: "1"}.get(digits[0])
        if control is None:
            continue
        targets = "".join("0" if d == G0 else "1" for d in digits[1:])
        labels[index] = name_index[control + targets]
    return BlockPartition(space, labels, names)


@dataclass
class BlockCheck:
    name: str
    max_off_block: float
    threshold: float = BLOCK_TOL

    @property
    def passed(self) -> bool:
        return self.max_off_block < self.threshold

    def to_dict(self) -> dict:
        return {"operator": self.name, "max_off_block": self.max_off_block,
                "threshold": self.threshold, "passed": self.passed}


def verify_block_structure(op, partition: BlockPartition, name: str = "op") -> BlockCheck:
    """Largest matrix element joining two different blocks (or a block and the outside)."""
    coo = sp.coo_matrix(op)
    li = partition.labels[coo.row]
    lj = partition.labels[coo.col]
    off = (li != lj) & ~((li < 0) & (lj < 0))
    worst = float(np.abs(coo.data[off]).max()) if np.any(off) else 0.0
    return BlockCheck(name, worst)


def dicke_state(space: FullSpace, bits: str, n_e: int, n_f: int, p: int) -> np.ndarray:
    """Symmetric superposition over the one targets of ``bits`` holding n_e |e> and n_f |f>.

    A control bit 0 is represented by |e> on the control (its state during
    the blocking step); the zero targets stay in |0>.
    """
    if len(bits) != space.n:
        raise ValueError("bit string length must equal n")
    ones = [i for i in range(1, space.n) if bits[i] == "1"]
    m = len(ones)
    if n_e < 0 or n_f < 0 or n_e + n_f > m:
        raise ValueError(f"invalid occupation n_e={n_e}, n_f={n_f} for m={m}")
    base = [G0] * space.n
    base[0] = E if bits[0] == "0" else G1
    psi = np.zeros(space.dim, dtype=complex)
    count = 0
    for e_sites in itertools.combinations(ones, n_e):
        rest = [i for i in ones if i not in e_sites]
        for f_sites in itertools.combinations(rest, n_f):
            digits = list(base)
            for i in ones:
                digits[i] = G1
            for i in e_sites:
                digits[i] = E
            for i in f_sites:
                digits[i] = F
            psi[space.index(digits, p)] = 1.0
            count += 1
    return psi / math.sqrt(count)


def block_embedding(space: FullSpace, bits: str, basis: BlockBasis) -> sp.csr_matrix:
    """Isometry from a block basis into the full space (columns are Dicke states)."""
    cols = [sp.csr_matrix(dicke_state(space, bits, n_e, n_f, p)).T
            for n_e, n_f, p in basis.states]
    return sp.hstack(cols, format="csr")


def factor_mismatch(n: int, drives: DriveConfig, cutoff: int = 1, **factor_overrides) -> float:
    """Max |V^+ H V - H_block| over all computational inputs of ``n`` qubits.

    ``factor_overrides`` are passed to :func:`build_block_hamiltonian` so a
    deliberately wrong collective factor can be checked to be caught.
    """
    space = FullSpace(n, cutoff)
    _, H2, _ = build_full_step_hamiltonians(n, drives, cutoff)
    worst = 0.0
    for index in range(2 ** n):
        bits = format(index, f"0{n}b")
        cls = ComputationalClass(int(bits[0]), bits[1:].count("1"), n)
        basis = enumerate_block_basis(cls)
        V = block_embedding(space, bits, basis)
        projected = (V.conj().T @ H2 @ V).toarray()
        block = build_block_hamiltonian(basis, drives, **factor_overrides).to_dense()
        worst = max(worst, float(np.abs(projected - block).max()))
    return worst


# --- open-system fidelities ----------------------------------------------------------


def block_lindblad_fidelity(control: int, m: int, drives: DriveConfig, cutoff: int) -> float:
    """Survival probability of a block's input under the block-restricted master equation."""
    cls = ComputationalClass(control, m, m + 1)
    basis = enumerate_block_basis(cls, phonon_cutoff=cutoff, dissipative=drives.kappa > 0)
    H = build_block_hamiltonian(basis, drives).to_sparse()
    c_ops = [c.to_sparse() for c in build_block_collapse_ops(basis, drives.kappa)] \
        if drives.kappa > 0 else []
    psi0 = basis.initial_state()
    rho = exact_lindblad_evolve(np.outer(psi0, psi0.conj()), H, c_ops, drives.duration)
    k = basis.initial_index
    return float(rho[k, k].real)


def _step2_frame(space: FullSpace, drives: DriveConfig):
    """Inputs after the loading pulse and targets pulled back through the unloading pulse."""
    H1, H2, H3 = build_full_step_hamiltonians(space.n, drives, space.phonon_cutoff)
    tp = pulse_duration(drives)
    inputs, targets, names = [], [], []
    for index in range(2 ** space.n):
        bits = format(index, f"0{space.n}b")
        b = space.basis_state(tuple(int(x) for x in bits))
        inputs.append(expm_multiply(-1j * tp * H1, b))
        targets.append(expm_multiply(1j * tp * H3, ideal_phase(bits) * b))
        names.append(bits)
    return H1, H2, H3, np.array(inputs).T, np.array(targets).T, names


def oracle_lindblad_fidelities(n: int, drives: DriveConfig, cutoff: int) -> dict[str, float]:
    """Per-input gate fidelity from full-space master-equation runs (heating in the blocking step only)."""
    space = FullSpace(n, cutoff)
    _, H2, _, inputs, targets, names = _step2_frame(space, drives)
    c_ops = full_collapse_ops(space, drives.kappa) if drives.kappa > 0 else []
    out = {}
    for j, bits in enumerate(names):
        keep = reachable_subspace([H2] + c_ops, np.nonzero(np.abs(inputs[:, j]) > 1e-14)[0])
        H = H2[keep][:, keep]
        cs = [c[keep][:, keep] for c in c_ops]
        psi = inputs[keep, j]
        rho = exact_lindblad_evolve(np.outer(psi, psi.conj()), H, cs, drives.duration)
        tgt = targets[keep, j]
        out[bits] = float(np.real(tgt.conj() @ rho @ tgt))
    return out


@dataclass
class RandomStateComparison:
    n: int
    kappa: float
    approx: np.ndarray
    exact: np.ndarray
    block_checks: list[BlockCheck] = field(default_factory=list)

    @property
    def rmse(self) -> float:
        return float(np.sqrt(np.mean((self.approx - self.exact) ** 2)))

    @property
    def overestimate_fraction(self) -> float:
        return float(np.mean(self.approx >= self.exact - 1e-9))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "kappa": self.kappa,
            "n_states": int(self.approx.size),
            "rmse": self.rmse,
            "overestimate_fraction": self.overestimate_fraction,
            "max_underestimate": float(np.max(self.exact - self.approx)),
            "block_checks": [c.to_dict() for c in self.block_checks],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def haar_computational_states(n: int, n_states: int, seed: int) -> np.ndarray:
    """Haar-random unit vectors on the 2^n computational states, one per row."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_states, 2 ** n)) + 1j * rng.standard_normal((n_states, 2 ** n))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def rmse_random_states(n: int, drives: DriveConfig, kappa: float, n_states: int, seed: int,
                       cutoff: int = 3) -> RandomStateComparison:
    """Compare the per-basis-state approximation with exact fidelities of random superpositions.

    Because every gate step and heating channel keeps each computational
    input inside its own invariant block (checked here), the exact channel
    output for psi = sum c_b |b> has fidelity sum_{b,b'} |c_b|^2 |c_b'|^2 M_bb'
    with M_bb' = <t_b| E(|b><b'|) |t_b'>.  One master-equation run on the
    equal superposition of all inputs yields every M_bb'.
    """
    if n > 4:
        raise ValueError("random-state comparison limited to n <= 4")
    if n_states < 1:
        raise ValueError("n_states must be >= 1")
    drives = drives.replace(kappa=kappa)
    space = FullSpace(n, cutoff)
    partition = dicke_partition(space)
    H1, H2, H3, inputs, targets, names = _step2_frame(space, drives)
    c_ops = full_collapse_ops(space, kappa) if kappa > 0 else []
    checks = [verify_block_structure(op, partition, nm)
              for nm, op in [("H1", H1), ("H2", H2), ("H3", H3)]]
    if kappa > 0:
        checks += [verify_block_structure(space.annihilation(), partition, "a"),
                   verify_block_structure(space.annihilation().T, partition, "a_dagger")]
    failed = [c.name for c in checks if not c.passed]
    if failed:
        raise ArithmeticError(f"block structure violated by {failed}")

    phi = inputs.sum(axis=1)
    keep = reachable_subspace([H2] + c_ops, np.nonzero(np.abs(phi) > 1e-14)[0])
    H = H2[keep][:, keep]
    cs = [c[keep][:, keep] for c in c_ops]
    rho = exact_lindblad_evolve(np.outer(phi[keep], phi[keep].conj()), H, cs, drives.duration)
    T = targets[keep]
    M = np.real_if_close(T.conj().T @ rho @ T)
    M = np.real(0.5 * (M + M.conj().T))

    block_fid = {}
    for bits in names:
        key = (int(bits[0]), bits[1:].count("1"))
        if key not in block_fid:
            block_fid[key] = block_lindblad_fidelity(key[0], key[1], drives, cutoff)
    f_diag = np.array([block_fid[(int(b[0]), b[1:].count("1"))] for b in names])

    states = haar_computational_states(n, n_states, seed)
    w = np.abs(states) ** 2
    approx = w @ f_diag
    exact = np.einsum("sb,bc,sc->s", w, M, w)
    return RandomStateComparison(n, kappa, approx, exact, checks)
