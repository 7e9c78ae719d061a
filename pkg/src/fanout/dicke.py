"""Permutation-symmetric (Dicke) blocks of the fanout-gate dynamics.

During the blocking step every computational basis state of the register
couples only to a small set of collective states.  A block is labelled by
the control bit and by ``m``, the number of targets in ``|1>``; its states
are ``(n_e, n_f, p)``: how many of those ``m`` targets sit in ``|e>`` and in
``|f>``, and the oscillator occupation ``p``.  The remaining ``m - n_e - n_f``
targets are still in ``|1>``; targets in ``|0>`` never move.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = [
    "DriveConfig",
    "ComputationalClass",
    "BlockBasis",
    "BlockOperator",
    "enumerate_block_basis",
    "idle_block_basis",
    "transition_block_basis",
    "probe_factor",
    "sideband_factor",
    "dicke_ladder_coupling",
    "build_block_hamiltonian",
    "build_block_collapse_ops",
]


@dataclass(frozen=True)
class DriveConfig:
    """Control parameters of the blocking step.

    All rates are angular frequencies in units where ``omega_t = 1`` unless
    stated otherwise.  ``duration`` defaults to the probe 2-pi time
    ``pi / omega_t``.
    """

    omega_t: float = 1.0
    omega_c: float = 8.0
    kappa: float = 0.0
    duration: float | None = None

    def __post_init__(self):
        if not self.omega_t > 0:
            raise ValueError(f"omega_t must be positive, got {self.omega_t}")
        if self.omega_c < 0:
            raise ValueError(f"omega_c must be non-negative, got {self.omega_c}")
        if self.kappa < 0:
            raise ValueError(f"kappa must be non-negative, got {self.kappa}")
        if self.duration is None:
            object.__setattr__(self, "duration", math.pi / self.omega_t)
        elif not self.duration > 0:
            raise ValueError(f"duration must be positive, got {self.duration}")

    @classmethod
    def from_ratio(cls, ratio: float, kappa: float = 0.0, omega_t: float = 1.0) -> "DriveConfig":
        return cls(omega_t=omega_t, omega_c=ratio * omega_t, kappa=kappa * omega_t)

    @property
    def ratio(self) -> float:
        return self.omega_c / self.omega_t

    def replace(self, **changes) -> "DriveConfig":
        values = dict(omega_t=self.omega_t, omega_c=self.omega_c, kappa=self.kappa,
                      duration=self.duration)
        values.update(changes)
        return DriveConfig(**values)

    def to_dict(self) -> dict:
        return dict(omega_t=self.omega_t, omega_c=self.omega_c, kappa=self.kappa,
                    duration=self.duration)


@dataclass(frozen=True)
class ComputationalClass:
    """A set of computational inputs sharing one block: control bit and ones count."""

    control: int
    m: int
    n: int

    def __post_init__(self):
        if self.control not in (0, 1):
            raise ValueError(f"control must be 0 or 1, got {self.control}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not 0 <= self.m <= self.n - 1:
            raise ValueError(f"m must lie in [0, {self.n - 1}], got {self.m}")

    @property
    def multiplicity(self) -> int:
        return math.comb(self.n - 1, self.m)

    @property
    def initial_phonons(self) -> int:
        # The step-1 pi pulse loads one phonon only when the control is |0>.
        return 1 - self.control


Label = tuple[int, int, int]


@dataclass(frozen=True)
class BlockBasis:
    cls: ComputationalClass
    phonon_cutoff: int
    initial_phonons: int
    states: tuple[Label, ...]
    index: dict[Label, int] = field(compare=False, repr=False)

    @property
    def dim(self) -> int:
        return len(self.states)

    @property
    def m(self) -> int:
        return self.cls.m

    @property
    def initial_index(self) -> int:
        return self.index[(0, 0, self.initial_phonons)]

    def initial_state(self) -> np.ndarray:
        psi = np.zeros(self.dim, dtype=complex)
        psi[self.initial_index] = 1.0
        return psi

    def phonon_numbers(self) -> np.ndarray:
        return np.array([s[2] for s in self.states])


@dataclass(frozen=True)
class BlockOperator:
    """Sparse operator on one block, stored as a coordinate list."""

    dim: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    hermitian: bool = False

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        vals = np.asarray(self.vals, dtype=complex)
        if not (rows.shape == cols.shape == vals.shape):
            raise ValueError("rows, cols and vals must have equal length")
        if rows.size and (rows.min() < 0 or cols.min() < 0
                          or rows.max() >= self.dim or cols.max() >= self.dim):
            raise ValueError("coordinate outside operator dimension")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "vals", vals)

    @classmethod
    def from_matrix(cls, mat, hermitian: bool = False) -> "BlockOperator":
        coo = sp.coo_matrix(mat)
        return cls(coo.shape[0], coo.row, coo.col, coo.data, hermitian)

    @property
    def nnz(self) -> int:
        return int(self.vals.size)

    @property
    def is_real(self) -> bool:
        return bool(np.all(self.vals.imag == 0))

    def to_sparse(self) -> sp.csr_matrix:
        vals = self.vals.real if self.is_real else self.vals
        return sp.csr_matrix((vals, (self.rows, self.cols)), shape=(self.dim, self.dim))

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.dim, self.dim), dtype=complex)
        np.add.at(out, (self.rows, self.cols), self.vals)
        return out

    def scaled(self, factor: complex) -> "BlockOperator":
        return BlockOperator(self.dim, self.rows, self.cols, self.vals * factor,
                             self.hermitian and np.isreal(factor))

    def dagger(self) -> "BlockOperator":
        return BlockOperator(self.dim, self.cols, self.rows, self.vals.conj(), self.hermitian)

    def hermiticity_error(self) -> float:
        mat = self.to_sparse()
        diff = mat - mat.conj().T
        return float(abs(diff).max()) if diff.nnz else 0.0

    def to_json(self) -> str:
        """Serialize as ``{"dim": d, "hermitian": bool, "entries": [[row, col, re, im], ...]}``.

        Entries are written in row-major order so equal operators give equal text.
        """
        order = np.lexsort((self.cols, self.rows))
        entries = [[int(self.rows[k]), int(self.cols[k]),
                    float(self.vals[k].real), float(self.vals[k].imag)] for k in order]
        return json.dumps({"dim": self.dim, "hermitian": self.hermitian, "entries": entries})

    @classmethod
    def from_json(cls, text: str) -> "BlockOperator":
        data = json.loads(text)
        entries = np.array(data["entries"], dtype=float).reshape(-1, 4)
        return cls(int(data["dim"]), entries[:, 0].astype(np.int64), entries[:, 1].astype(np.int64),
                   entries[:, 2] + 1j * entries[:, 3], bool(data.get("hermitian", False)))


def probe_factor(m: int, n_e: int, n_f: int) -> float:
    """Collective probe element for (n_e, n_f) -> (n_e + 1, n_f).

    Equals sqrt(n_1 (n_e + 1)) with n_1 = m - n_e - n_f targets left in |1>.
    """
    if min(m, n_e, n_f) < 0 or n_e + n_f > m:
        raise ValueError(f"invalid occupation (m={m}, n_e={n_e}, n_f={n_f})")
    return math.sqrt((m - n_e - n_f) * (n_e + 1))


def sideband_factor(n_e: int, n_f: int, p: int) -> float:
    """Collective red-sideband element for (n_e, n_f, p) -> (n_e - 1, n_f + 1, p - 1)."""
    if min(n_e, n_f, p) < 0:
        raise ValueError(f"invalid occupation (n_e={n_e}, n_f={n_f}, p={p})")
    return math.sqrt(n_e * (n_f + 1)) * math.sqrt(p)


def dicke_ladder_coupling(N: int, k: int) -> float:
    """Collective sigma_x element between Dicke states with k and k + 1 excitations."""
    if N < 0 or not 0 <= k <= N:
        raise ValueError(f"need 0 <= k <= N, got N={N}, k={k}")
    return math.sqrt((N - k) * (k + 1))


def _neighbours(m: int, label: Label, cutoff: int, dissipative: bool):
    n_e, n_f, p = label
    if n_e + n_f < m:
        yield (n_e + 1, n_f, p)
    if n_e > 0:
        yield (n_e - 1, n_f, p)
    if n_e > 0 and p > 0:
        yield (n_e - 1, n_f + 1, p - 1)
    if n_f > 0 and p < cutoff:
        yield (n_e + 1, n_f - 1, p + 1)
    if dissipative:
        if p > 0:
            yield (n_e, n_f, p - 1)
        if p < cutoff:
            yield (n_e, n_f, p + 1)


def enumerate_block_basis(cls: ComputationalClass, initial_phonons: int | None = None,
                          phonon_cutoff: int | None = None,
                          dissipative: bool = False) -> BlockBasis:
    """All states reachable from ``(0, 0, initial_phonons)``.

    Reachability follows the blocking Hamiltonian and, when ``dissipative``,
    single-phonon gain/loss; occupations above ``phonon_cutoff`` are dropped.
    States are ordered lexicographically in ``(p, n_e, n_f)``.
    """
    if initial_phonons is None:
        initial_phonons = cls.initial_phonons
    if phonon_cutoff is None:
        phonon_cutoff = initial_phonons
    if cls.m < 0:
        raise ValueError(f"m must be non-negative, got {cls.m}")
    if initial_phonons < 0 or phonon_cutoff < initial_phonons:
        raise ValueError(
            f"phonon_cutoff ({phonon_cutoff}) must be >= initial_phonons ({initial_phonons}) >= 0")
    start = (0, 0, initial_phonons)
    seen = {start}
    queue = deque([start])
    while queue:
        label = queue.popleft()
        for nxt in _neighbours(cls.m, label, phonon_cutoff, dissipative):
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    states = tuple(sorted(seen, key=lambda s: (s[2], s[0], s[1])))
    index = {s: i for i, s in enumerate(states)}
    return BlockBasis(cls, phonon_cutoff, initial_phonons, states, index)


def idle_block_basis(m: int, phonon_cutoff: int = 1, dissipative: bool = False) -> BlockBasis:
    return enumerate_block_basis(ComputationalClass(0, m, m + 1), 1, phonon_cutoff, dissipative)


def transition_block_basis(m: int, phonon_cutoff: int = 0, dissipative: bool = False) -> BlockBasis:
    return enumerate_block_basis(ComputationalClass(1, m, m + 1), 0, phonon_cutoff, dissipative)


def build_block_hamiltonian(basis: BlockBasis, drives: DriveConfig, *,
                            probe=probe_factor, sideband=sideband_factor) -> BlockOperator:
    """Blocking-step Hamiltonian restricted to ``basis``.

    ``probe`` and ``sideband`` may be swapped for alternative factor functions
    (used to check that verification catches a wrong factor).
    """
    if basis.dim == 0:
        raise ValueError("empty basis")
    m = basis.m
    rows, cols, vals = [], [], []

    def couple(i, j, v):
        if v != 0.0:
            rows.extend((i, j))
            cols.extend((j, i))
            vals.extend((v, v))

    for i, (n_e, n_f, p) in enumerate(basis.states):
        j = basis.index.get((n_e + 1, n_f, p))
        if j is not None:
            couple(i, j, drives.omega_t * probe(m, n_e, n_f))
        if n_e > 0 and p > 0:
            j = basis.index.get((n_e - 1, n_f + 1, p - 1))
            if j is not None:
                couple(i, j, drives.omega_c * sideband(n_e, n_f, p))
    return BlockOperator(basis.dim, np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64),
                         np.array(vals, dtype=complex), hermitian=True)


def build_block_collapse_ops(basis: BlockBasis, kappa: float) -> list[BlockOperator]:
    """Hot-bath heating channels ``[sqrt(kappa) a, sqrt(kappa) a^dagger]`` on the block.

    Creation amplitudes that would leave the basis (above the cutoff) are dropped.
    """
    if kappa < 0:
        raise ValueError(f"kappa must be non-negative, got {kappa}")
    amp = math.sqrt(kappa)
    lower_r, lower_c, lower_v = [], [], []
    for i, (n_e, n_f, p) in enumerate(basis.states):
        if p > 0:
            j = basis.index.get((n_e, n_f, p - 1))
            if j is not None and amp > 0:
                lower_r.append(j)
                lower_c.append(i)
                lower_v.append(amp * math.sqrt(p))
    lower = BlockOperator(basis.dim, np.array(lower_r, dtype=np.int64),
                          np.array(lower_c, dtype=np.int64), np.array(lower_v, dtype=complex))
    return [lower, lower.dagger()]
