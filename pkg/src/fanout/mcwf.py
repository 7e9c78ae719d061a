"""Quantum-trajectory simulation of oscillator heating during the gate.

Trajectories evolve under H_eff = H - (i/2) sum_k c_k^+ c_k and jump when
the squared norm falls through a uniform threshold.  H_eff conserves the
same quantum numbers as H, so it is split into connected sectors and each
sector is diagonalised once; the norm at any time is then a cheap
quadratic form and jump times are found by bisection.

Each trajectory draws from its own stream, derived from the master seed
and (control, m, trajectory index), so results do not depend on how the
work is scheduled across threads.
"""
from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from . import analytic, gatefid, kernels
from .dicke import (ComputationalClass, DriveConfig, _neighbours, build_block_collapse_ops,
                    build_block_hamiltonian, enumerate_block_basis, probe_factor,
                    sideband_factor)

__all__ = [
    "TrajectoryConfig",
    "TrajectoryEstimate",
    "TrajectoryError",
    "Segment",
    "run_trajectory",
    "run_segments",
    "trajectory_gate_fidelity",
    "block_trajectory_fidelity",
    "trajectory_stream",
    "default_cutoff",
    "cutoff_convergence",
    "thread_count",
    "check_collapse_blocks",
]

# Bisection resolution for jump times, relative to the segment length.
JUMP_RESOLUTION = 1e-6
# Above this eigenvector condition number a sector falls back to expm.
COND_LIMIT = 1e8


class TrajectoryError(ArithmeticError):
    """A trajectory reached a state from which it cannot continue."""


def thread_count(threads: int | None = None) -> int:
    if threads is not None:
        if threads < 1:
            raise ValueError("threads must be >= 1")
        return threads
    env = os.environ.get("FANOUT_THREADS")
    if env:
        value = int(env)
        if value < 1:
            raise ValueError("FANOUT_THREADS must be >= 1")
        return value
    return 1


DEFAULT_CUTOFF = 5
CUTOFF_TOL = 1e-6


def default_cutoff(kappa: float, duration: float, initial_phonons: int = 1) -> int:
    """Phonon truncation that leaves room for several heating jumps (at least 5)."""
    return max(DEFAULT_CUTOFF, initial_phonons + 3 + math.ceil(10.0 * kappa * duration))


def cutoff_convergence(drives: DriveConfig, cutoff: int, m_max: int = 2) -> float:
    """Largest change in block fidelity (master equation, m <= m_max) when the cutoff grows by 2.

    The phonon distribution hardly depends on m, so small blocks stand in for all.
    """
    from .oracle import block_lindblad_fidelity
    worst = 0.0
    for control in (0, 1):
        for m in range(m_max + 1):
            a = block_lindblad_fidelity(control, m, drives, cutoff)
            b = block_lindblad_fidelity(control, m, drives, cutoff + 2)
            worst = max(worst, abs(a - b))
    return worst


@lru_cache(maxsize=None)
def check_collapse_blocks(n: int = 3, cutoff: int = 3) -> None:
    """Raise unless heating and cooling keep every computational input in its own block.

    Checked on a small full space; the operators act identically for any n.
    """
    from .oracle import FullSpace, dicke_partition, verify_block_structure
    space = FullSpace(n, cutoff)
    partition = dicke_partition(space)
    a = space.annihilation()
    for name, op in (("a", a), ("a_dagger", a.T)):
        check = verify_block_structure(op, partition, name)
        if not check.passed:
            raise TrajectoryError(f"collapse operator {name} couples blocks "
                                  f"(max off-block element {check.max_off_block:.3g})")


@dataclass(frozen=True)
class TrajectoryConfig:
    n_traj: int = 1000
    seed: int = 0
    kappa: float = 0.0
    phonon_cutoff: int | None = None
    tol: float = 1e-9
    heat_pulses: bool = False
    pulse_duration: float | None = None
    keep_samples: bool = False
    threads: int | None = None

    def __post_init__(self):
        if self.n_traj < 1:
            raise ValueError("n_traj must be >= 1")
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")
        if self.phonon_cutoff is not None and self.phonon_cutoff < 1:
            raise ValueError("phonon_cutoff must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.pulse_duration is not None and not self.pulse_duration > 0:
            raise ValueError("pulse_duration must be positive")


@dataclass
class TrajectoryEstimate:
    mean: float
    stderr: float
    n_traj: int
    seed: int
    samples: list[tuple[int, int, int, float]] | None = field(default=None, repr=False)

    def samples_csv(self) -> str:
        """Per-trajectory fidelities: columns m, control, trajectory, fidelity."""
        if self.samples is None:
            raise ValueError("samples were not kept; set keep_samples=True")
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["m", "control", "trajectory", "fidelity"])
        for m, control, i, f in self.samples:
            writer.writerow([m, control, i, f"{f:.17g}"])
        return buf.getvalue()


# --- single-segment machinery -----------------------------------------------------


class _Sector:
    """Eigendecomposition of H_eff restricted to one invariant index set."""

    def __init__(self, idx: np.ndarray, heff: np.ndarray):
        self.idx = idx
        self.heff = heff
        lam, V = np.linalg.eig(heff)
        try:
            Vinv = np.linalg.inv(V)
            cond = np.linalg.norm(V, 2) * np.linalg.norm(Vinv, 2)
        except np.linalg.LinAlgError:
            cond = np.inf
        self.use_expm = not cond < COND_LIMIT
        if not self.use_expm:
            self.lam = np.ascontiguousarray(lam, dtype=np.complex128)
            self.V = V
            self.Vinv = Vinv
            self.gram = np.ascontiguousarray(V.conj().T @ V, dtype=np.complex128)


class Segment:
    """Constant H and collapse operators applied for ``duration``."""

    def __init__(self, H, c_ops, duration: float):
        H = sp.csr_matrix(H, dtype=complex)
        d = H.shape[0]
        if H.shape != (d, d):
            raise ValueError("H must be square")
        self.c_ops = [sp.csr_matrix(c, dtype=complex) for c in c_ops]
        for c in self.c_ops:
            if c.shape != (d, d):
                raise ValueError("collapse operator dimension mismatch")
        if not duration > 0:
            raise ValueError("duration must be positive")
        self.dim = d
        self.duration = float(duration)
        heff = H.copy()
        for c in self.c_ops:
            heff = heff - 0.5j * (c.conj().T @ c)
        heff = sp.csr_matrix(heff)
        pattern = abs(heff) + sp.identity(d)
        n_comp, labels = connected_components(pattern, directed=False)
        self.sector_of = labels
        self.sectors = []
        dense = heff.toarray()
        for k in range(n_comp):
            idx = np.nonzero(labels == k)[0]
            self.sectors.append(_Sector(idx, dense[np.ix_(idx, idx)]))

    def _support(self, psi) -> list[_Sector]:
        nz = np.nonzero(psi)[0]
        return [self.sectors[k] for k in np.unique(self.sector_of[nz])]

    def evolve(self, psi: np.ndarray, tau: float) -> np.ndarray:
        out = np.zeros_like(psi)
        for s in self._support(psi):
            x = psi[s.idx]
            if s.use_expm:
                out[s.idx] = sla.expm(-1j * tau * s.heff) @ x
            else:
                out[s.idx] = s.V @ (np.exp(-1j * s.lam * tau) * (s.Vinv @ x))
        return out

    def _quadratic_form(self, psi):
        """(gram, y0, lam) for the support of psi, or None if any sector needs expm."""
        sectors = self._support(psi)
        if any(s.use_expm for s in sectors):
            return None
        if len(sectors) == 1:
            s = sectors[0]
            return s.gram, np.ascontiguousarray(s.Vinv @ psi[s.idx]), s.lam
        gram = sla.block_diag(*[s.gram for s in sectors])
        y0 = np.concatenate([s.Vinv @ psi[s.idx] for s in sectors])
        lam = np.concatenate([s.lam for s in sectors])
        return (np.ascontiguousarray(gram, dtype=np.complex128), np.ascontiguousarray(y0),
                np.ascontiguousarray(lam))

    def norm_sq(self, psi, tau: float, form=None) -> float:
        form = form if form is not None else self._quadratic_form(psi)
        if form is None:
            v = self.evolve(psi, tau)
            return float(np.vdot(v, v).real)
        return kernels.norm_sq_eigen(form[0], form[1], form[2], tau)

    def crossing(self, psi, t_hi: float, threshold: float, resolution: float, form=None) -> float:
        form = form if form is not None else self._quadratic_form(psi)
        if form is not None:
            return kernels.norm_crossing(form[0], form[1], form[2], t_hi, threshold, resolution)
        lo, hi = 0.0, t_hi
        while hi - lo > resolution:
            mid = 0.5 * (lo + hi)
            if self.norm_sq(psi, mid) > threshold:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)


def _jump(segment: Segment, psi: np.ndarray, u: float, where: str) -> np.ndarray:
    candidates = [c @ psi for c in segment.c_ops]
    weights = np.array([np.vdot(v, v).real for v in candidates])
    total = weights.sum()
    if not (np.isfinite(total) and total > 0):
        raise TrajectoryError(f"no jump channel has weight at {where}; state norm "
                              f"{np.linalg.norm(psi):.3g}")
    k = int(np.searchsorted(np.cumsum(weights) / total, u, side="right"))
    k = min(k, len(candidates) - 1)
    return candidates[k] / math.sqrt(weights[k])


def run_segments(segments: list[Segment], psi0, rng: np.random.Generator, *,
                 resolution: float = JUMP_RESOLUTION, prefix=None) -> np.ndarray:
    """One trajectory through consecutive segments; returns the normalised final state.

    The jump threshold carries across segment boundaries, so a piecewise
    constant generator is unravelled exactly as a single time-dependent one.
    ``prefix`` is an optional cached no-jump path (see :func:`_no_jump_prefix`).
    """
    psi = np.asarray(psi0, dtype=complex).copy()
    r = rng.random()
    start = 0
    if prefix is not None:
        ends, states = prefix
        # Skip whole segments the threshold never reaches.
        while start < len(segments) and ends[start] > r:
            start += 1
        if start == len(segments):
            psi = states[-1]
            return psi / np.linalg.norm(psi)
        psi = states[start].copy()
    for si in range(start, len(segments)):
        seg = segments[si]
        remaining = seg.duration
        res = resolution * seg.duration
        while True:
            form = seg._quadratic_form(psi)
            n_start = float(np.vdot(psi, psi).real)
            n_end = seg.norm_sq(psi, remaining, form)
            if n_end > n_start * (1.0 + 1e-9) + 1e-15:
                raise TrajectoryError(f"norm grew from {n_start:.17g} to {n_end:.17g} in segment {si}")
            if n_end > r or not seg.c_ops:
                psi = seg.evolve(psi, remaining)
                break
            tau = seg.crossing(psi, remaining, r, res, form)
            psi = seg.evolve(psi, tau)
            psi = _jump(seg, psi, rng.random(), f"segment {si}, t={seg.duration - remaining + tau:.6g}")
            remaining -= tau
            r = rng.random()
            if remaining <= 0:
                break
    norm = np.linalg.norm(psi)
    if not (np.isfinite(norm) and norm > 0):
        raise TrajectoryError("trajectory collapsed to zero norm")
    return psi / norm


def _no_jump_prefix(segments: list[Segment], psi0):
    """Squared norms at each segment end and states at each segment start, without jumps."""
    states = [np.asarray(psi0, dtype=complex)]
    ends = []
    psi = states[0]
    for seg in segments:
        psi = seg.evolve(psi, seg.duration)
        ends.append(float(np.vdot(psi, psi).real))
        states.append(psi)
    return ends, states


def run_trajectory(H, c_ops, psi0, t: float, rng: np.random.Generator) -> np.ndarray:
    """Single-segment trajectory; returns the normalised state at time t."""
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (sp.csr_matrix(H).shape[0],):
        raise ValueError("psi0 dimension does not match H")
    return run_segments([Segment(H, c_ops, t)], psi0, rng)


def trajectory_stream(seed: int, control: int, m: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(seed, spawn_key=(control, m, index))))


# --- gate blocks ------------------------------------------------------------------


@dataclass
class _BlockProblem:
    control: int
    m: int
    segments: list[Segment]
    psi0: np.ndarray
    target: np.ndarray


def _step2_block(control: int, m: int, drives: DriveConfig, cutoff: int) -> _BlockProblem:
    cls = ComputationalClass(control, m, m + 1)
    basis = enumerate_block_basis(cls, phonon_cutoff=cutoff, dissipative=True)
    H = build_block_hamiltonian(basis, drives).to_sparse()
    c_ops = [c.to_sparse() for c in build_block_collapse_ops(basis, drives.kappa)]
    psi0 = basis.initial_state()
    return _BlockProblem(control, m, [Segment(H, c_ops, drives.duration)], psi0, psi0)


CTRL_GROUND, CTRL_ONE, CTRL_EXCITED = 0, 1, 2


def _pulse_heated_block(control: int, m: int, drives: DriveConfig, cutoff: int,
                        pulse: float) -> _BlockProblem:
    """Block with the control level and pulses explicit: labels (ctrl, n_e, n_f, p)."""
    start = (CTRL_GROUND if control == 0 else CTRL_ONE, 0, 0, 0)
    seen = {start}
    stack = [start]
    while stack:
        ctrl, n_e, n_f, p = stack.pop()
        nbrs = [(ctrl, *lab) for lab in _neighbours(m, (n_e, n_f, p), cutoff, True)]
        if ctrl == CTRL_GROUND and p < cutoff:
            nbrs.append((CTRL_EXCITED, n_e, n_f, p + 1))
        if ctrl == CTRL_EXCITED and p > 0:
            nbrs.append((CTRL_GROUND, n_e, n_f, p - 1))
        for lab in nbrs:
            if lab not in seen:
                seen.add(lab)
                stack.append(lab)
    states = sorted(seen, key=lambda s: (s[3], s[0], s[1], s[2]))
    index = {s: i for i, s in enumerate(states)}
    d = len(states)
    load = sp.lil_matrix((d, d))
    block = sp.lil_matrix((d, d))
    lower = sp.lil_matrix((d, d))
    for i, (ctrl, n_e, n_f, p) in enumerate(states):
        j = index.get((CTRL_EXCITED, n_e, n_f, p + 1)) if ctrl == CTRL_GROUND else None
        if j is not None:
            load[i, j] = load[j, i] = drives.omega_c * math.sqrt(p + 1)
        j = index.get((ctrl, n_e + 1, n_f, p))
        if j is not None:
            block[i, j] = block[j, i] = drives.omega_t * probe_factor(m, n_e, n_f)
        if n_e > 0 and p > 0:
            j = index.get((ctrl, n_e - 1, n_f + 1, p - 1))
            if j is not None:
                block[i, j] = block[j, i] = drives.omega_c * sideband_factor(n_e, n_f, p)
        j = index.get((ctrl, n_e, n_f, p - 1))
        if p > 0 and j is not None:
            lower[j, i] = math.sqrt(drives.kappa * p)
    lower = lower.tocsr()
    c_ops = [lower, lower.conj().T.tocsr()]
    segments = [Segment(load, c_ops, pulse), Segment(block, c_ops, drives.duration),
                Segment(load, c_ops, pulse)]
    psi0 = np.zeros(d, dtype=complex)
    psi0[index[start]] = 1.0
    return _BlockProblem(control, m, segments, psi0, psi0)


def _run_block(problem: _BlockProblem, cfg: TrajectoryConfig, lo: int, hi: int,
               out: np.ndarray) -> None:
    prefix = _no_jump_prefix(problem.segments, problem.psi0)
    for i in range(lo, hi):
        rng = trajectory_stream(cfg.seed, problem.control, problem.m, i)
        psi = run_segments(problem.segments, problem.psi0, rng, prefix=prefix)
        out[i] = abs(np.vdot(problem.target, psi)) ** 2


def trajectory_gate_fidelity(n: int, drives: DriveConfig, cfg: TrajectoryConfig):
    """Trajectory estimate of the average gate fidelity with heating rate ``cfg.kappa``.

    Returns ``(report, estimate)``; the report holds per-block mean fidelities
    and the estimate the assembled mean with its standard error.  Sample i of
    the gate fidelity combines trajectory i of every block with the binomial
    weights, so ``stderr`` is the sample standard deviation over sqrt(n_traj).
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    drives = drives.replace(kappa=cfg.kappa)
    if cfg.kappa == 0.0:
        report = gatefid.average_gate_fidelity(n, drives)
        samples = None
        if cfg.keep_samples:
            samples = [(m, c, i, p) for c, rows in ((0, report.per_m_idle), (1, report.per_m_transition))
                       for m, p in rows for i in range(cfg.n_traj)]
        return report, TrajectoryEstimate(report.fidelity, 0.0, cfg.n_traj, cfg.seed, samples)

    check_collapse_blocks()
    pulse = cfg.pulse_duration if cfg.pulse_duration is not None else math.pi / (2 * drives.omega_c)
    problems = []
    for control in (0, 1):
        for m in range(n):
            init = 1 - control
            cutoff = cfg.phonon_cutoff if cfg.phonon_cutoff is not None else \
                default_cutoff(cfg.kappa, drives.duration + (2 * pulse if cfg.heat_pulses else 0), init)
            if cfg.heat_pulses:
                problems.append(_pulse_heated_block(control, m, drives, max(cutoff, 1), pulse))
            else:
                if cutoff < init:
                    raise ValueError(f"phonon_cutoff {cutoff} below the initial phonon number")
                problems.append(_step2_block(control, m, drives, cutoff))

    if not cfg.heat_pulses:
        used = cfg.phonon_cutoff if cfg.phonon_cutoff is not None else \
            default_cutoff(cfg.kappa, drives.duration, 0)
        change = cutoff_convergence(drives, used)
        if change >= CUTOFF_TOL:
            raise TrajectoryError(f"phonon cutoff {used} not converged: fidelity moves by "
                                  f"{change:.3g} when it grows by 2")

    results = {(p.control, p.m): np.zeros(cfg.n_traj) for p in problems}
    chunk = max(1, min(cfg.n_traj, 250))
    tasks = [(p, lo, min(lo + chunk, cfg.n_traj)) for p in problems for lo in range(0, cfg.n_traj, chunk)]
    workers = thread_count(cfg.threads)
    if workers == 1:
        for p, lo, hi in tasks:
            _run_block(p, cfg, lo, hi, results[(p.control, p.m)])
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_block, p, cfg, lo, hi, results[(p.control, p.m)])
                       for p, lo, hi in tasks]
            for fut in futures:
                fut.result()

    weights = {m: gatefid.binomial_weight(n, m) for m in range(n)}
    per_traj = np.zeros(cfg.n_traj)
    for (control, m), values in sorted(results.items()):
        per_traj += weights[m] * values
    mean = math.fsum(per_traj) / cfg.n_traj
    std = float(np.std(per_traj, ddof=1)) if cfg.n_traj > 1 else 0.0
    idle = [(m, math.fsum(results[(0, m)]) / cfg.n_traj) for m in range(n)]
    trans = [(m, math.fsum(results[(1, m)]) / cfg.n_traj) for m in range(n)]
    report = gatefid.GateFidelityReport(
        n=n,
        drives=drives,
        per_m_idle=idle,
        per_m_transition=trans,
        transition_fidelity=sum(2 * weights[m] * p for m, p in trans),
        fidelity=min(1.0, max(0.0, mean)),
        bound=analytic.infidelity_upper_bound(n, drives.omega_t, drives.omega_c),
        timed_estimate=analytic.timed_infidelity(n, drives.omega_t, drives.omega_c),
    )
    samples = None
    if cfg.keep_samples:
        samples = [(m, control, i, float(results[(control, m)][i]))
                   for control in (0, 1) for m in range(n) for i in range(cfg.n_traj)]
    estimate = TrajectoryEstimate(min(1.0, max(0.0, mean)), std / math.sqrt(cfg.n_traj),
                                  cfg.n_traj, cfg.seed, samples)
    return report, estimate


def block_trajectory_fidelity(control: int, m: int, drives: DriveConfig,
                              cfg: TrajectoryConfig) -> TrajectoryEstimate:
    """Mean survival of one block's input over ``cfg.n_traj`` trajectories."""
    drives = drives.replace(kappa=cfg.kappa)
    init = 1 - control
    cutoff = cfg.phonon_cutoff if cfg.phonon_cutoff is not None else \
        default_cutoff(cfg.kappa, drives.duration, init)
    problem = _step2_block(control, m, drives, cutoff)
    out = np.zeros(cfg.n_traj)
    _run_block(problem, cfg, 0, cfg.n_traj, out)
    std = float(np.std(out, ddof=1)) if cfg.n_traj > 1 else 0.0
    return TrajectoryEstimate(math.fsum(out) / cfg.n_traj, std / math.sqrt(cfg.n_traj),
                              cfg.n_traj, cfg.seed)
