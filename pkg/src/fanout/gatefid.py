"""Average gate fidelity assembled from Dicke-block simulations.

Every computational input |b> stays in its own block, so the basis-state
average fidelity reduces to a binomially weighted sum over the ones count
``m`` of per-block survival probabilities.  Only the blocking step is
simulated; the two sideband pi pulses are treated as ideal.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import analytic, kernels
from .dicke import (ComputationalClass, DriveConfig, build_block_hamiltonian,
                    enumerate_block_basis)
from .propagate import Spectrum, chebyshev_evolve, chebyshev_survival, wrap_phase

__all__ = [
    "GateFidelityReport",
    "TimingScan",
    "TruthTable",
    "target_phase",
    "block_amplitude",
    "average_gate_fidelity",
    "timing_scan",
    "optimize_timing",
    "tune_ratio",
    "truth_table",
    "gate_trace",
]

# Transition blocks at t = pi / omega_t must come back to (-1)^m psi0.
TRANSITION_TOL = 1e-9
# Truncation tolerance for the Chebyshev routes, well under the 1e-9 block checks.
SERIES_TOL = 1e-13


def target_phase(control: int, m: int) -> int:
    """Sign the ideal phase-flip fanout puts on an input with this control bit and ones count."""
    return -1 if (control and m % 2) else 1


def binomial_weight(n: int, m: int) -> float:
    """C(n - 1, m) / 2^n as a correctly rounded float."""
    return math.comb(n - 1, m) / 2 ** n


class _BlockStructure:
    """Drive-independent sparsity pattern of one coherent block.

    H = omega_t * P + omega_c * S share one CSR pattern, so a new drive ratio
    only rescales two data arrays.
    """

    def __init__(self, control: int, m: int):
        self.basis = enumerate_block_basis(ComputationalClass(control, m, m + 1))
        probe = build_block_hamiltonian(self.basis, DriveConfig(1.0, 0.0))
        full = build_block_hamiltonian(self.basis, DriveConfig(1.0, 1.0))
        dim = self.basis.dim
        probe_map = {(r, c): v.real for r, c, v in zip(probe.rows, probe.cols, probe.vals)}
        order = np.lexsort((full.cols, full.rows))
        rows, cols = full.rows[order], full.cols[order]
        self.indices = cols.astype(np.int32)
        self.indptr = np.searchsorted(rows, np.arange(dim + 1)).astype(np.int32)
        self.probe_data = np.array([probe_map.get((r, c), 0.0) for r, c in zip(rows, cols)])
        self.sideband_data = full.vals[order].real - self.probe_data
        self.psi0 = self.basis.initial_state().real

    def matrix(self, omega_t: float, omega_c: float) -> sp.csr_matrix:
        data = omega_t * self.probe_data + omega_c * self.sideband_data
        dim = self.basis.dim
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(dim, dim))

    def bounds(self, mat: sp.csr_matrix) -> tuple[float, float]:
        # Zero diagonal, so the Gershgorin interval is symmetric.
        if mat.nnz == 0:
            return 0.0, 0.0
        radius = np.add.reduceat(np.abs(mat.data), self.indptr[:-1])
        radius[np.diff(self.indptr) == 0] = 0.0
        r = float(radius.max())
        return -r, r


@lru_cache(maxsize=512)
def _structure(control: int, m: int) -> _BlockStructure:
    return _BlockStructure(control, m)


@lru_cache(maxsize=65536)
def _cached_amplitude(control: int, m: int, omega_t: float, omega_c: float, duration: float,
                      method: str) -> complex:
    st = _structure(control, m)
    mat = st.matrix(omega_t, omega_c)
    if method == "dense":
        return complex(Spectrum(mat).overlap(st.psi0, st.psi0, duration))
    if method == "chebyshev":
        return complex(np.vdot(st.psi0, chebyshev_evolve(mat, st.psi0, duration, SERIES_TOL)))
    if method == "moments":
        return chebyshev_survival(mat, st.psi0, duration, SERIES_TOL, bounds=st.bounds(mat))
    raise ValueError(f"unknown method {method!r}")


def resolve_method(method: str) -> str:
    """Map "auto" to Chebyshev moments when the compiled kernel is loaded, else dense."""
    if method == "auto":
        return "moments" if kernels.COMPILED else "dense"
    return method


def block_amplitude(control: int, m: int, drives: DriveConfig, method: str = "auto") -> complex:
    """<b| exp(-i H t) |b> for a coherent block (its target sign not applied)."""
    method = resolve_method(method)
    return _cached_amplitude(control, m, float(drives.omega_t), float(drives.omega_c),
                             float(drives.duration), method)


@dataclass
class GateFidelityReport:
    n: int
    drives: DriveConfig
    per_m_idle: list[tuple[int, float]]
    per_m_transition: list[tuple[int, float]]
    transition_fidelity: float
    fidelity: float
    bound: float
    timed_estimate: float

    @property
    def infidelity(self) -> float:
        return 1.0 - self.fidelity

    def reassembled_fidelity(self) -> float:
        idle = sum(math.comb(self.n - 1, m) * p for m, p in self.per_m_idle)
        return (2 ** (self.n - 1) * self.transition_fidelity + idle) / 2 ** self.n

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "drives": self.drives.to_dict(),
            "per_m_idle": [[m, p] for m, p in self.per_m_idle],
            "per_m_transition": [[m, p] for m, p in self.per_m_transition],
            "transition_fidelity": self.transition_fidelity,
            "fidelity": self.fidelity,
            "infidelity": self.infidelity,
            "bound": self.bound,
            "timed_estimate": self.timed_estimate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def average_gate_fidelity(n: int, drives: DriveConfig, t: float | None = None, *,
                          method: str = "auto") -> GateFidelityReport:
    """Basis-state average fidelity of the blocking step on ``n`` qubits."""
    if n < 2:
        raise ValueError("n must be >= 2")
    if t is not None:
        drives = drives.replace(duration=t)
    check_transition = math.isclose(drives.duration * drives.omega_t, math.pi,
                                    rel_tol=0.0, abs_tol=1e-12)
    idle, trans = [], []
    total = 0.0
    trans_total = 0.0
    for m in range(n):
        a_idle = block_amplitude(0, m, drives, method)
        a_tr = block_amplitude(1, m, drives, method)
        if check_transition and abs(a_tr - target_phase(1, m)) > TRANSITION_TOL:
            raise ArithmeticError(
                f"transition block m={m} deviates from (-1)^m by {abs(a_tr - target_phase(1, m)):.3g}")
        # Clamp rounding excursions above 1 so error probabilities stay >= 0.
        p_idle = min(1.0, abs(a_idle) ** 2)
        p_tr = min(1.0, abs(a_tr) ** 2)
        idle.append((m, p_idle))
        trans.append((m, p_tr))
        w = binomial_weight(n, m)
        total += w * (p_idle + p_tr)
        trans_total += 2 * w * p_tr
    return GateFidelityReport(
        n=n,
        drives=drives,
        per_m_idle=idle,
        per_m_transition=trans,
        transition_fidelity=trans_total,
        fidelity=min(1.0, max(0.0, total)),
        bound=analytic.infidelity_upper_bound(n, drives.omega_t, drives.omega_c),
        timed_estimate=analytic.timed_infidelity(n, drives.omega_t, drives.omega_c),
    )


@dataclass
class TimingScan:
    """Grid evaluation plus golden-section refinement of the drive ratio."""

    n: int
    grid: np.ndarray
    grid_infidelity: np.ndarray
    ratio: float
    report: GateFidelityReport
    evaluations: dict = field(default_factory=dict, repr=False)

    @property
    def untimed_infidelity(self) -> float:
        return float(np.mean(self.grid_infidelity))

    @property
    def timed_infidelity(self) -> float:
        return self.report.infidelity


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
MAX_GRID_SPACING = 0.5


def timing_scan(n: int, ratio_lo: float, ratio_hi: float, grid: int = 21, *,
                omega_t: float = 1.0, resolution: float = 1e-4,
                method: str = "auto") -> TimingScan:
    """Minimise the infidelity over omega_c / omega_t in [ratio_lo, ratio_hi].

    The grid is refined automatically so its spacing never exceeds a quarter
    of the ~2 omega_t spacing between timing minima.
    """
    if not ratio_hi > ratio_lo:
        raise ValueError(f"empty ratio interval [{ratio_lo}, {ratio_hi}]")
    if grid < 2:
        raise ValueError("grid must be >= 2")
    grid = max(grid, math.ceil((ratio_hi - ratio_lo) / MAX_GRID_SPACING) + 1)
    evaluations: dict[float, float] = {}

    def infid(r: float) -> float:
        if r not in evaluations:
            evaluations[r] = average_gate_fidelity(
                n, DriveConfig.from_ratio(r, omega_t=omega_t), method=method).infidelity
        return evaluations[r]

    ratios = np.linspace(ratio_lo, ratio_hi, grid)
    values = np.array([infid(float(r)) for r in ratios])
    i = int(np.argmin(values))
    a = float(ratios[max(i - 1, 0)])
    b = float(ratios[min(i + 1, grid - 1)])
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = infid(c), infid(d)
    while b - a > resolution:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = infid(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = infid(d)
    # Smallest infidelity; ties go to the smaller ratio for reproducibility.
    best = min(evaluations, key=lambda r: (evaluations[r], r))
    report = average_gate_fidelity(n, DriveConfig.from_ratio(best, omega_t=omega_t), method=method)
    return TimingScan(n, ratios, values, best, report, evaluations)


def optimize_timing(n: int, ratio_lo: float, ratio_hi: float, grid: int = 21,
                    **kwargs) -> tuple[float, GateFidelityReport]:
    scan = timing_scan(n, ratio_lo, ratio_hi, grid, **kwargs)
    return scan.ratio, scan.report


def tune_ratio(n: int, nominal: float, half_width: float = 1.0) -> float:
    """Best ratio within ``nominal +- half_width`` (the nearest timing solution)."""
    lo = max(nominal - half_width, 1e-6)
    return optimize_timing(n, lo, nominal + half_width)[0]


@dataclass(frozen=True)
class TruthRow:
    input_label: str
    output_label: str
    population: float
    phase: float
    leakage: float


@dataclass
class TruthTable:
    """Input-output map of the gate on computational states.

    Blocks never connect two different computational states, so each input
    has a single computational output (itself); the rest is leakage.
    """

    n: int
    rows: list[TruthRow]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["input", "output", "population", "phase", "leakage"])
        for r in self.rows:
            writer.writerow([r.input_label, r.output_label, f"{r.population:.17g}",
                             f"{r.phase:.17g}", f"{r.leakage:.17g}"])
        return buf.getvalue()


def truth_table(n: int, drives: DriveConfig, t: float | None = None) -> TruthTable:
    if not 2 <= n <= 12:
        raise ValueError("truth tables are limited to 2 <= n <= 12")
    if t is not None:
        drives = drives.replace(duration=t)
    amps = {(c, m): block_amplitude(c, m, drives) for c in (0, 1) for m in range(n)}
    rows = []
    for index in range(2 ** n):
        label = format(index, f"0{n}b")
        control = int(label[0])
        m = label[1:].count("1")
        amp = amps[(control, m)]
        pop = min(1.0, abs(amp) ** 2)
        rows.append(TruthRow(label, label, pop, float(wrap_phase(np.angle(amp))), 1.0 - pop))
    return TruthTable(n, rows)


@dataclass
class GateTrace:
    times: np.ndarray
    classes: list[tuple[int, int]]
    amplitude: np.ndarray  # (n_classes, n_times)
    phase: np.ndarray
    fidelity: np.ndarray  # running average gate fidelity, (n_times,)


def gate_trace(n: int, drives: DriveConfig, samples: int = 201,
               reference: str = "input") -> GateTrace:
    """Per-class overlaps over the blocking step.

    ``reference="input"`` reports <b|psi(t)>, so transition classes with odd
    m end at phase pi; ``reference="target"`` divides out the ideal fanout
    sign, so every class ends near phase 0.
    """
    if samples < 2:
        raise ValueError("samples must be >= 2")
    if reference not in ("input", "target"):
        raise ValueError("reference must be 'input' or 'target'")
    times = np.linspace(0.0, drives.duration, samples)
    classes, amps, phases = [], [], []
    fidelity = np.zeros(samples)
    for control in (0, 1):
        for m in range(n):
            basis = enumerate_block_basis(ComputationalClass(control, m, n))
            H = build_block_hamiltonian(basis, drives)
            psi0 = basis.initial_state()
            ov = Spectrum(H).overlap(psi0, psi0, times)
            if reference == "target":
                ov = ov * target_phase(control, m)
            classes.append((control, m))
            amps.append(np.abs(ov))
            phases.append(wrap_phase(np.angle(ov)))
            fidelity += binomial_weight(n, m) * np.abs(ov) ** 2
    return GateTrace(times, classes, np.array(amps), np.array(phases), fidelity)
