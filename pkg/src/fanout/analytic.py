"""Closed-form fidelity expressions for the blocking step.

These are kept deliberately simple (real arithmetic, explicit formulas) so
the numerical modules can be checked against them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

__all__ = [
    "TimingSolution",
    "eit_idle_amplitude",
    "idle_probability",
    "infidelity_upper_bound",
    "infidelity_upper_bound_from_duration",
    "timing_ratio",
    "timed_infidelity",
    "timed_infidelity_from_duration",
    "timed_infidelity_general",
    "binomial_weighted_moment",
    "binomial_weighted_moment_bruteforce",
    "theory_infidelity_sum",
    "timing_crossover",
]


@dataclass(frozen=True)
class TimingSolution:
    k: int
    m_eff: float
    ratio: float


def eit_idle_amplitude(delta: float, omega: float, t: float) -> float:
    """<g|U(t)|g> for a ground state driven at strength ``omega`` into two
    levels detuned by +delta and -delta.  The amplitude is real: the two
    light shifts cancel."""
    w2 = delta * delta + 2.0 * omega * omega
    if w2 == 0.0:
        return 1.0
    return 1.0 - 4.0 * omega * omega / w2 * math.sin(0.5 * t * math.sqrt(w2)) ** 2


def idle_probability(m: int, omega_t: float, omega_c: float, t: float) -> float:
    """Survival probability of an idle input with ``m`` ones in the three-level truncation."""
    if m < 0:
        raise ValueError("m must be non-negative")
    w2 = omega_c ** 2 + m * omega_t ** 2
    if m == 0 or w2 == 0.0:
        return 1.0
    amp = 1.0 - 2.0 * m * omega_t ** 2 / w2 * math.sin(0.5 * t * math.sqrt(w2)) ** 2
    return amp * amp


def infidelity_upper_bound(n: int, omega_t: float, omega_c: float) -> float:
    """(n - 1) (omega_t / omega_c)^2."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return (n - 1) * (omega_t / omega_c) ** 2


def infidelity_upper_bound_from_duration(n: int, omega_c: float, t: float) -> float:
    """Same bound written with the gate time t = pi / omega_t."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return (n - 1) * math.pi ** 2 / (omega_c ** 2 * t ** 2)


def timing_ratio(k: int, n: int) -> TimingSolution:
    """Drive ratio omega_c / omega_t = sqrt(4 k^2 - n/2) that refocuses the idle oscillations."""
    m_eff = n / 2.0
    if k < 1 or 4 * k * k <= m_eff:
        raise ValueError(f"no timing solution for k={k}, n={n}: need 4k^2 > n/2")
    return TimingSolution(k, m_eff, math.sqrt(4 * k * k - m_eff))


def timed_infidelity(n: int, omega_t: float, omega_c: float) -> float:
    """Leading-order infidelity at a timing solution, (pi^2/16)(n-1)(n-2)(omega_t/omega_c)^4."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return math.pi ** 2 / 16.0 * (n - 1) * (n - 2) * (omega_t / omega_c) ** 4


def timed_infidelity_from_duration(n: int, omega_c: float, t: float) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    return (n - 1) * (n - 2) * math.pi ** 6 / (16.0 * t ** 4 * omega_c ** 4)


def timed_infidelity_general(n: int, omega_t: float, omega_c: float, k: int,
                             m_eff: float) -> float:
    """Taylor-truncated timed infidelity before fixing m_eff and k.

    (pi^2/4)(n-1)(n-2+(n-2 m_eff)^2) k^2 (omega_t/omega_c)^6; the cubic term
    vanishes at m_eff = n/2.
    """
    x = (omega_t / omega_c) ** 2
    return math.pi ** 2 / 4.0 * (n - 1) * (n - 2 + (n - 2 * m_eff) ** 2) * k * k * x ** 3


def binomial_weighted_moment(n: int, power: int) -> Fraction:
    """Exact 2^-n sum_m C(n, m) m^power for power 1 or 2."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if power == 1:
        return Fraction(n, 2)
    if power == 2:
        return Fraction(n * (n + 1), 4)
    raise ValueError("power must be 1 or 2")


def binomial_weighted_moment_bruteforce(n: int, power: int) -> Fraction:
    total = sum(math.comb(n, m) * m ** power for m in range(n + 1))
    return Fraction(total, 2 ** n)


def theory_infidelity_sum(n: int, omega_t: float, omega_c: float, t: float) -> float:
    """Binomially weighted idle-error sum without the small-ratio expansion."""
    if n < 1:
        raise ValueError("n must be >= 1")
    total = 0.0
    for m in range(n):
        w2 = omega_c ** 2 + m * omega_t ** 2
        if m == 0 or w2 == 0.0:
            continue
        term = 4.0 * m * omega_t ** 2 / w2 * math.sin(0.5 * t * math.sqrt(w2)) ** 2
        total += math.comb(n - 1, m) * term
    return total / 2 ** n


def timing_crossover(omega_t: float, omega_c: float, n_max: int = 10_000) -> int | None:
    """Smallest n where the timed estimate exceeds the untimed bound, or None."""
    for n in range(2, n_max + 1):
        if timed_infidelity(n, omega_t, omega_c) > infidelity_upper_bound(n, omega_t, omega_c):
            return n
    return None
