import math
from collections import Counter

import numpy as np
import pytest

from fanout.dicke import (BlockOperator, ComputationalClass, DriveConfig, build_block_collapse_ops,
                          build_block_hamiltonian, dicke_ladder_coupling, enumerate_block_basis,
                          idle_block_basis, probe_factor, sideband_factor, transition_block_basis)
from fanout.oracle import (FullSpace, build_full_step_hamiltonians, dicke_state, full_collapse_ops,
                           reachable_subspace)


def _element(space, H, bits, bra, ket):
    return np.vdot(dicke_state(space, bits, *bra), H @ dicke_state(space, bits, *ket)).real


class TestDriveConfig:
    def test_default_duration_is_two_pi_probe_time(self):
        d = DriveConfig(omega_t=2.5, omega_c=20.0)
        assert d.duration * d.omega_t == math.pi

    def test_from_ratio(self):
        d = DriveConfig.from_ratio(8.0, kappa=0.01)
        assert (d.omega_t, d.omega_c, d.kappa) == (1.0, 8.0, 0.01)
        assert d.ratio == 8.0

    @pytest.mark.parametrize("kwargs", [dict(omega_t=0.0), dict(omega_c=-1.0), dict(kappa=-0.1),
                                        dict(duration=0.0)])
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ValueError):
            DriveConfig(**kwargs)

    def test_replace_keeps_other_fields(self):
        d = DriveConfig(omega_c=12.0).replace(kappa=0.5)
        assert d.omega_c == 12.0 and d.kappa == 0.5


class TestComputationalClass:
    def test_multiplicities_sum_to_half_the_register(self):
        for n in range(1, 12):
            assert sum(ComputationalClass(0, m, n).multiplicity for m in range(n)) == 2 ** (n - 1)

    @pytest.mark.parametrize("args", [(2, 0, 3), (0, 3, 3), (0, -1, 3)])
    def test_rejects_out_of_range(self, args):
        with pytest.raises(ValueError):
            ComputationalClass(*args)

    def test_initial_phonons(self):
        assert ComputationalClass(0, 1, 3).initial_phonons == 1
        assert ComputationalClass(1, 1, 3).initial_phonons == 0


class TestEnumerate:
    def test_m0_single_state(self):
        basis = idle_block_basis(0)
        assert basis.states == ((0, 0, 1),)

    def test_m2_idle_has_five_states(self):
        assert idle_block_basis(2).dim == 5

    def test_coherent_idle_dimension_up_to_100(self):
        for m in range(101):
            assert idle_block_basis(m).dim == 2 * m + 1

    def test_transition_block_is_probe_ladder(self):
        basis = transition_block_basis(4)
        assert basis.states == tuple((k, 0, 0) for k in range(5))

    def test_labels_respect_constraints(self):
        basis = enumerate_block_basis(ComputationalClass(0, 4, 5), 1, 3, dissipative=True)
        assert len(set(basis.states)) == basis.dim
        for i, (n_e, n_f, p) in enumerate(basis.states):
            assert n_e + n_f <= 4 and 0 <= p <= 3
            assert basis.index[(n_e, n_f, p)] == i

    def test_canonical_order(self):
        basis = enumerate_block_basis(ComputationalClass(0, 3, 4), 1, 2, dissipative=True)
        keys = [(p, n_e, n_f) for n_e, n_f, p in basis.states]
        assert keys == sorted(keys)

    def test_dissipative_count_matches_full_space_reachability(self):
        # m=3, start p=0: reach through the full tensor-product operators and
        # count the distinct (n_e, n_f, p) labels that appear.
        n, cutoff = 4, 2
        space = FullSpace(n, cutoff)
        _, H2, _ = build_full_step_hamiltonians(n, DriveConfig(omega_c=3.0), cutoff)
        seed = space.index((1, 1, 1, 1), 0)
        keep = reachable_subspace([H2] + full_collapse_ops(space, 1.0), [seed])
        labels = set()
        for idx in keep:
            digits, p = space.label(idx)
            c = Counter(digits[1:])
            labels.add((c[2], c[3], p))
        basis = enumerate_block_basis(ComputationalClass(1, 3, 4), 0, cutoff, dissipative=True)
        assert basis.dim == len(labels)
        assert set(basis.states) == labels

    def test_rejects_cutoff_below_initial(self):
        with pytest.raises(ValueError):
            enumerate_block_basis(ComputationalClass(0, 2, 3), 1, 0)


class TestFactors:
    def test_probe_examples(self):
        assert probe_factor(1, 0, 0) == 1.0
        assert probe_factor(3, 0, 0) == pytest.approx(math.sqrt(3), abs=1e-15)
        assert probe_factor(3, 1, 1) == pytest.approx(math.sqrt(2), abs=1e-15)
        assert probe_factor(2, 1, 1) == 0.0

    def test_sideband_examples(self):
        assert sideband_factor(1, 0, 1) == 1.0
        assert sideband_factor(1, 0, 0) == 0.0
        assert sideband_factor(0, 2, 3) == 0.0
        assert sideband_factor(2, 1, 2) == pytest.approx(2 * math.sqrt(2), abs=1e-15)

    def test_ladder_examples(self):
        assert dicke_ladder_coupling(1, 0) == 1.0
        assert dicke_ladder_coupling(3, 0) == pytest.approx(math.sqrt(3))
        assert dicke_ladder_coupling(4, 2) == pytest.approx(math.sqrt(6))
        assert dicke_ladder_coupling(4, 4) == 0.0

    def test_probe_with_no_f_is_ladder(self):
        for m in range(8):
            for k in range(m):
                assert probe_factor(m, k, 0) == dicke_ladder_coupling(m, k)

    def test_probe_matches_symmetrised_operator(self):
        n = 4
        space = FullSpace(n, 1)
        _, H2, _ = build_full_step_hamiltonians(n, DriveConfig(omega_t=1.0, omega_c=0.0), 1)
        assert _element(space, H2, "1111", (2, 1, 0), (1, 1, 0)) == pytest.approx(math.sqrt(2), abs=1e-12)

    def test_sideband_matches_symmetrised_operator(self):
        n = 4
        space = FullSpace(n, 2)
        H2 = build_full_step_hamiltonians(n, DriveConfig(omega_t=1.0, omega_c=1.0), 2)[1]
        assert _element(space, H2, "1111", (1, 2, 1), (2, 1, 2)) == pytest.approx(2 * math.sqrt(2), abs=1e-12)

    def test_ladder_matches_symmetrised_operator(self):
        # sigma_x restricted to |1>,|e> on four targets, n_f = 0
        n = 5
        space = FullSpace(n, 1)
        H2 = build_full_step_hamiltonians(n, DriveConfig(omega_t=1.0, omega_c=0.0), 1)[1]
        assert _element(space, H2, "11111", (3, 0, 0), (2, 0, 0)) == pytest.approx(math.sqrt(6), abs=1e-12)


class TestHamiltonian:
    def test_m0_is_zero(self):
        H = build_block_hamiltonian(idle_block_basis(0), DriveConfig())
        assert H.dim == 1 and np.all(H.to_dense() == 0)

    def test_m1_idle_chain(self):
        d = DriveConfig(omega_c=8.0)
        basis = idle_block_basis(1)
        H = build_block_hamiltonian(basis, d).to_dense()
        g, e, f = basis.index[(0, 0, 1)], basis.index[(1, 0, 1)], basis.index[(0, 1, 0)]
        assert H[g, e] == 1.0 and H[e, f] == 8.0 and H[g, f] == 0.0
        assert np.count_nonzero(H) == 4

    def test_m2_idle_couplings(self):
        # Five states; each probe and sideband edge carries its collective factor.
        d = DriveConfig(omega_t=1.0, omega_c=8.0)
        basis = idle_block_basis(2)
        H = build_block_hamiltonian(basis, d).to_dense()
        ix = basis.index
        edges = {
            ((0, 0, 1), (1, 0, 1)): math.sqrt(2),
            ((1, 0, 1), (2, 0, 1)): math.sqrt(2),
            ((1, 0, 1), (0, 1, 0)): 8.0,
            ((2, 0, 1), (1, 1, 0)): 8.0 * math.sqrt(2),
            ((0, 1, 0), (1, 1, 0)): 1.0,
        }
        for (a, b), v in edges.items():
            assert H[ix[a], ix[b]] == pytest.approx(v, abs=1e-14)
        assert np.count_nonzero(H) == 2 * len(edges)

    def test_hermitian_and_conserved(self):
        d = DriveConfig(omega_c=5.0)
        for m in range(7):
            basis = enumerate_block_basis(ComputationalClass(0, m, m + 1), 1, 3, dissipative=True)
            H = build_block_hamiltonian(basis, d)
            assert H.hermiticity_error() == 0.0
            for r, c in zip(H.rows, H.cols):
                (er, fr, pr), (ec, fc, pc) = basis.states[r], basis.states[c]
                assert pr + fr == pc + fc
                assert (m - er - fr) + er + fr == (m - ec - fc) + ec + fc == m

    def test_json_round_trip(self):
        H = build_block_hamiltonian(idle_block_basis(3), DriveConfig(omega_c=7.0))
        back = BlockOperator.from_json(H.to_json())
        assert back.dim == H.dim and back.hermitian
        np.testing.assert_array_equal(back.to_dense(), H.to_dense())

    def test_serialisation_is_reproducible(self):
        make = lambda: build_block_hamiltonian(idle_block_basis(5), DriveConfig(omega_c=9.0)).to_json()
        assert make() == make()


class TestCollapse:
    def test_zero_kappa(self):
        ops = build_block_collapse_ops(idle_block_basis(2, 3, True), 0.0)
        assert len(ops) == 2 and all(op.nnz == 0 for op in ops)

    def test_single_state(self):
        basis = enumerate_block_basis(ComputationalClass(0, 0, 1), 1, 1, dissipative=True)
        lower, _ = build_block_collapse_ops(basis, 0.04)
        dense = lower.to_dense()
        assert dense[basis.index[(0, 0, 0)], basis.index[(0, 0, 1)]] == pytest.approx(0.2)

    def test_m1_matches_oscillator_annihilation(self):
        cutoff = 3
        basis = idle_block_basis(1, cutoff, True)
        lower, raise_ = build_block_collapse_ops(basis, 1.0)
        L = lower.to_dense()
        for i, (n_e, n_f, p) in enumerate(basis.states):
            for j, other in enumerate(basis.states):
                expected = math.sqrt(p) if other == (n_e, n_f, p - 1) else 0.0
                assert L[j, i] == pytest.approx(expected)
        np.testing.assert_array_equal(raise_.to_dense(), L.conj().T)
