import math

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from fanout import analytic
from fanout.dicke import (ComputationalClass, DriveConfig, build_block_hamiltonian,
                          enumerate_block_basis, idle_block_basis, transition_block_basis)
from fanout.propagate import (Spectrum, chebyshev_evolve, chebyshev_survival, evolve_state,
                              overlap_trace, propagator, survival_amplitude, wrap_phase)


def random_hermitian(d, rng):
    a = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return 0.5 * (a + a.conj().T)


def random_state(d, rng):
    v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return v / np.linalg.norm(v)


def test_zero_hamiltonian_leaves_state():
    psi = random_state(5, np.random.default_rng(0))
    np.testing.assert_allclose(evolve_state(np.zeros((5, 5)), psi, 3.7), psi, atol=1e-15)


def test_m1_idle_matches_closed_form():
    d = DriveConfig(omega_t=1.0, omega_c=8.0)
    basis = idle_block_basis(1)
    psi = evolve_state(build_block_hamiltonian(basis, d), basis.initial_state(), math.pi)
    amp = np.vdot(basis.initial_state(), psi)
    expected = analytic.eit_idle_amplitude(8.0, 1.0 / math.sqrt(2), math.pi)
    assert abs(amp - expected) < 1e-10


@pytest.mark.parametrize("m", range(0, 9))
def test_transition_block_is_collective_two_pi(m):
    basis = transition_block_basis(m)
    psi0 = basis.initial_state()
    psi = evolve_state(build_block_hamiltonian(basis, DriveConfig(omega_c=13.0)), psi0, math.pi)
    np.testing.assert_allclose(psi, (-1) ** m * psi0, atol=1e-12)


def test_propagator_identity_at_zero():
    H = random_hermitian(6, np.random.default_rng(1))
    np.testing.assert_allclose(propagator(H, 0.0), np.eye(6), atol=1e-14)


def test_propagator_diagonal():
    delta, t = 0.7, 2.3
    U = propagator(np.diag([delta, -delta]), t)
    np.testing.assert_allclose(U, np.diag([np.exp(-1j * delta * t), np.exp(1j * delta * t)]), atol=1e-15)


def test_propagator_three_level_closed_form():
    rng = np.random.default_rng(2)
    for _ in range(20):
        delta, omega, t = rng.uniform(-5, 5), rng.uniform(0, 3), rng.uniform(0, 10)
        H = np.array([[0, omega, omega], [omega, delta, 0], [omega, 0, -delta]])
        w2 = delta ** 2 + 2 * omega ** 2
        expected = (delta ** 2 + 2 * omega ** 2 * math.cos(t * math.sqrt(w2))) / w2
        assert abs(propagator(H, t)[0, 0] - expected) < 1e-12


def test_propagator_unitary_and_refuses_large():
    H = random_hermitian(40, np.random.default_rng(3))
    U = propagator(H, 1.3)
    np.testing.assert_allclose(U.conj().T @ U, np.eye(40), atol=1e-10)
    with pytest.raises(ValueError):
        propagator(np.zeros((300, 300)), 1.0)


def test_propagator_columns_equal_evolved_basis():
    H = random_hermitian(8, np.random.default_rng(4))
    U = propagator(H, 0.9)
    for k in range(8):
        e = np.zeros(8)
        e[k] = 1.0
        np.testing.assert_allclose(U[:, k], evolve_state(H, e, 0.9, method="chebyshev"), atol=1e-10)


def test_rejects_non_hermitian_and_mismatch():
    with pytest.raises(ValueError):
        evolve_state(np.array([[0, 1], [0, 0]]), np.array([1, 0]), 1.0)
    with pytest.raises(ValueError):
        evolve_state(np.eye(3), np.ones(2), 1.0)
    with pytest.raises(ValueError):
        evolve_state(np.eye(2), np.ones(2), 1.0, tol=0.0)


def test_chebyshev_matches_expm_on_large_block():
    d = DriveConfig(omega_c=19.3)
    basis = enumerate_block_basis(ComputationalClass(0, 15, 16), 1, 3, dissipative=True)
    H = build_block_hamiltonian(basis, d)
    assert basis.dim > 256
    psi0 = basis.initial_state()
    exact = sla.expm(-1j * math.pi * H.to_dense()) @ psi0
    np.testing.assert_allclose(evolve_state(H, psi0, math.pi), exact, atol=1e-9)


def test_chebyshev_survival_matches_dense():
    for m in (3, 17, 60):
        basis = idle_block_basis(m)
        H = build_block_hamiltonian(basis, DriveConfig(omega_c=18.6)).to_sparse().real
        psi0 = basis.initial_state()
        dense = survival_amplitude(H, psi0, math.pi)
        assert abs(chebyshev_survival(H, psi0, math.pi, 1e-13) - dense) < 1e-12


def test_chebyshev_survival_rejects_complex_operator():
    with pytest.raises(ValueError):
        chebyshev_survival(sp.csr_matrix(np.array([[0, 1j], [-1j, 0]])), np.array([1.0, 0.0]), 1.0)


def test_composition_and_norm():
    rng = np.random.default_rng(5)
    H = random_hermitian(300, rng) / 10
    psi = random_state(300, rng)
    tol = 1e-10
    a = evolve_state(H, evolve_state(H, psi, 0.4, tol), 0.7, tol)
    b = evolve_state(H, psi, 1.1, tol)
    assert np.linalg.norm(a - b) <= 2 * tol
    assert abs(np.linalg.norm(b) - 1) < 1e-9
    energy = lambda v: np.vdot(v, H @ v).real
    assert abs(energy(b) - energy(psi)) < tol


def test_overlap_trace_trivial():
    psi = random_state(3, np.random.default_rng(6))
    tr = overlap_trace(np.zeros((3, 3)), psi, psi, 2.0, 11)
    np.testing.assert_allclose(tr.amplitude, 1.0, atol=1e-15)
    np.testing.assert_allclose(tr.phase, 0.0, atol=1e-15)
    with pytest.raises(ValueError):
        overlap_trace(np.zeros((3, 3)), psi, psi, 2.0, 1)


def test_overlap_trace_transition_dip():
    basis = transition_block_basis(1)
    H = build_block_hamiltonian(basis, DriveConfig())
    psi0 = basis.initial_state()
    tr = overlap_trace(H, psi0, psi0, math.pi, 201)
    assert tr.amplitude[100] < 1e-12
    assert abs(abs(tr.phase[-1]) - math.pi) < 1e-9


def test_overlap_trace_idle_depth():
    # m=1, omega_t/omega_c = 1/8: the survival amplitude is 1 - 2x sin^2(w t / 2)
    # with x = m omega_t^2 / w^2, so it dips by 2x and the probability by 1 - (1 - 2x)^2.
    m, d = 1, DriveConfig(omega_t=1.0, omega_c=8.0)
    basis = idle_block_basis(m)
    H = build_block_hamiltonian(basis, d)
    psi0 = basis.initial_state()
    w2 = 64.0 + m
    tr = overlap_trace(H, psi0, psi0, 2 * math.pi / math.sqrt(w2), 20001)
    x = m / w2
    assert abs((1 - tr.amplitude.min()) - 2 * x) < 1e-6
    prob_depth = 1 - tr.amplitude.min() ** 2
    assert abs(prob_depth - (1 - analytic.idle_probability(m, 1.0, 8.0, math.pi / math.sqrt(w2)))) < 1e-6
    # 4x is only the leading-order probability depth
    assert abs(prob_depth - 4 * x) == pytest.approx(4 * x * x, rel=1e-6)


def test_overlap_trace_csv_columns():
    psi = np.array([1.0, 0.0])
    text = overlap_trace(np.array([[0, 1], [1, 0]]), psi, psi, 1.0, 3).to_csv()
    lines = text.strip().splitlines()
    assert lines[0] == "t,amplitude,phase" and len(lines) == 4


def test_wrap_phase_interval():
    out = wrap_phase(np.array([-math.pi, math.pi, 0.0]))
    np.testing.assert_array_equal(out, [math.pi, math.pi, 0.0])


def test_spectrum_evolve_many():
    H = random_hermitian(4, np.random.default_rng(7))
    psi = random_state(4, np.random.default_rng(8))
    spec = Spectrum(H)
    many = spec.evolve_many(psi, [0.0, 1.0])
    np.testing.assert_allclose(many[1], spec.evolve(psi, 1.0), atol=1e-14)


def test_chebyshev_evolve_zero_time():
    psi = random_state(4, np.random.default_rng(9))
    np.testing.assert_allclose(chebyshev_evolve(sp.csr_matrix(random_hermitian(4, np.random.default_rng(1))),
                                                psi, 0.0), psi, atol=1e-15)
