"""Model parameters, layouts, circuit builders, statistics and observables."""

import math

import numpy as np
import pytest

from fhsim.gates import NativeGateParams
from fhsim.hubbard import (
    DOWN,
    UP,
    DensitySeries,
    GaussianTrap,
    HubbardParams,
    Wavepacket,
    all_assignments,
    average_position,
    build_evolution_circuit,
    build_initial_state_circuit,
    build_trotter_step,
    build_wavepacket_circuit,
    circuit_stats,
    gaussian_wavepacket,
    givens_network,
    lowest_orbitals,
    make_assignment,
    parasitic_bond_v,
    parse_circuit_text,
    replay,
    spread,
    spread_rate,
    trapped_params,
)
from fhsim.oracles import SectorBasis, sector_state_from_register, slater_sector_state, trotterized_reference

TRAP = GaussianTrap(4.0, 4.5, 1.0)


def natives_in(circuit, qubits=None):
    return circuit_stats(circuit, qubits=qubits).two_qubit


class TestParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            HubbardParams(1)
        with pytest.raises(ValueError):
            HubbardParams(4, tau=0.0)
        with pytest.raises(ValueError):
            HubbardParams(4, eps=np.zeros((3, 2)))
        with pytest.raises(ValueError):
            GaussianTrap(1.0, 2.0, 0.0)

    def test_trap_is_one_indexed_and_centered(self):
        eps = TRAP.potential(8)
        assert eps[3] == eps[4] == pytest.approx(-4 * math.exp(-0.125))
        np.testing.assert_allclose(eps, eps[::-1])

    def test_hopping_matrix(self):
        p = trapped_params(4, TRAP, None, J=2.0)
        h = p.hopping_matrix(UP)
        assert h[0, 1] == h[1, 0] == -2.0
        assert h[0, 2] == 0
        np.testing.assert_allclose(np.diag(p.hopping_matrix(DOWN)), 0)

    def test_bond_v_shapes(self):
        assert HubbardParams(5).bond_v().shape == (2, 4)
        np.testing.assert_allclose(HubbardParams(5, V=0.3).bond_v(), 0.3)
        v = np.arange(8.0).reshape(2, 4)
        np.testing.assert_allclose(HubbardParams(5, V=v).bond_v(), v)


class TestAssignments:
    def test_sixteen_distinct_layouts(self):
        layouts = {a.labels for a in all_assignments(8)}
        assert len(layouts) == 16

    def test_chains_are_device_paths(self):
        for a in all_assignments(8):
            for chain in a.labels:
                cols = [lab % 8 for lab in chain]
                rows = {lab // 8 for lab in chain}
                assert len(rows) == 1
                assert sorted(cols) == list(range(8))
            # the two chains sit on adjacent rows, column-aligned site by site
            up, dn = a.labels
            assert all(abs(u - d) == 8 for u, d in zip(up, dn))

    def test_register_indices_cover_all_qubits(self):
        for a in all_assignments(6):
            q = sorted(a.chain_qubits(UP) + a.chain_qubits(DOWN))
            assert q == list(range(12))
            assert a.label(a.qubit(UP, 0)) == a.labels[UP][0]

    def test_bits(self):
        a0, a2, a8 = make_assignment(8, 0), make_assignment(8, 2), make_assignment(8, 8)
        assert a2.labels == a0.labels[::-1]
        assert min(a8.sorted_labels) == 8
        assert make_assignment(8, 1).labels[UP] == a0.labels[UP][::-1]
        with pytest.raises(ValueError):
            make_assignment(8, 16)


class TestPreparation:
    def test_native_counts(self):
        p = trapped_params(8, TRAP, None)
        c = build_initial_state_circuit(p, 2, 2)
        assert natives_in(c) == 48
        assert natives_in(c, make_assignment(8, 0).chain_qubits(UP)) == 24
        assert sum(g.kind == "G" for g in c.gates()) == 24

    def test_givens_network_size(self):
        for n in (1, 2, 3):
            occ, rots = givens_network(lowest_orbitals(HubbardParams(8).hopping_matrix(), n))
            assert len(occ) == n
            if n > 1:
                assert len(rots) == n * (8 - n)

    def test_prepared_state_is_the_slater_determinant(self):
        p = trapped_params(6, GaussianTrap(3.0, 3.5, 1.0), None)
        for variant in (0, 5, 14):
            a = make_assignment(6, variant)
            circ = build_initial_state_circuit(p, 2, 1, assignment=a)
            (state,) = replay(circ)
            basis = SectorBasis(6, 2, 1)
            psi = sector_state_from_register(state.to_statevector().amps, basis, a)
            ref = slater_sector_state(basis, lowest_orbitals(p.hopping_matrix(UP), 2),
                                      lowest_orbitals(p.hopping_matrix(DOWN), 1))
            assert abs(abs(np.vdot(ref, psi)) - 1) < 1e-10

    def test_rejects_bad_numbers(self):
        with pytest.raises(ValueError):
            build_initial_state_circuit(HubbardParams(4), 5, 0)


class TestWavepacket:
    def test_amplitudes(self):
        amp = gaussian_wavepacket(8, 4.0, 1.0, math.pi / 2)
        assert np.linalg.norm(amp) == pytest.approx(1)
        j = np.arange(1, 9)
        ref = np.exp(-((j - 4.0) ** 2) / 4) * np.exp(1j * math.pi / 2 * j)
        ref /= np.linalg.norm(ref)
        np.testing.assert_allclose(amp, ref, atol=1e-12)

    def test_prepared_amplitudes_to_1e_8(self):
        a = make_assignment(8, 3)
        wp = Wavepacket(5.0, 1.0, -math.pi / 2)
        (state,) = replay(build_wavepacket_circuit(8, wp, None, assignment=a))
        amps = state.to_statevector().amps
        got = np.array([amps[1 << q] for q in a.chain_qubits(UP)])
        ref = gaussian_wavepacket(8, wp.center, wp.width, wp.momentum)
        phase = np.vdot(got, ref) / abs(np.vdot(got, ref))
        np.testing.assert_allclose(got * phase, ref, atol=1e-8)

    def test_drift_follows_momentum(self):
        p = HubbardParams(8, tau=0.3)
        for k, sign in ((math.pi / 2, 1), (-math.pi / 2, -1)):
            prep = build_wavepacket_circuit(8, Wavepacket(4.5, 1.0, k), None)
            states = replay(build_evolution_circuit(prep, p, 4, hopping_only=True, chains=(UP,)))
            a = prep.assignment
            pos = [average_position(s.number_expectations()[list(a.chain_qubits(UP))]) for s in states]
            assert sign * (pos[3] - pos[0]) > 0.5

    def test_width_validation(self):
        with pytest.raises(ValueError):
            gaussian_wavepacket(8, 4, 0.0)


class TestTrotterStep:
    def test_native_counts_full_and_hopping(self):
        p = HubbardParams(8, U=2.0)
        step = build_trotter_step(p)
        assert natives_in(step) == 56
        hop = build_trotter_step(p, hopping_only=True)
        assert natives_in(hop, make_assignment(8, 0).chain_qubits(DOWN)) == 14
        assert len(step.moments) == 5

    def test_infeasible_policy(self):
        from fhsim.gates import InfeasibleDecompositionError

        p = HubbardParams(8, U=0.1)
        nat = NativeGateParams(0.77, 0.138)
        with pytest.raises(InfeasibleDecompositionError):
            build_trotter_step(p, nat)
        split = build_trotter_step(p, nat, infeasible="split")
        every = build_trotter_step(HubbardParams(8, U=10.0), nat, infeasible="split_all")
        cp = [g for g in every.gates() if g.kind == "CPHASE"]
        assert all(g.plan.native_count == 4 for g in cp)
        assert natives_in(split) == 56 + 8 * 2

    def test_echo_pulses(self):
        step = build_trotter_step(HubbardParams(8, U=1.0), spin_echo=True)
        assert sum(g.kind == "ECHO" for g in step.gates()) == 16
        assert circuit_stats(step).microwave - circuit_stats(build_trotter_step(HubbardParams(8, U=1.0))).microwave == 32

    def test_circuit_matches_sector_trotter_product(self):
        p = trapped_params(6, GaussianTrap(3.0, 3.5, 1.0), None, U=2.0, tau=0.3)
        basis = SectorBasis(6, 2, 2)
        for variant in (0, 9):
            a = make_assignment(6, variant)
            prep = build_initial_state_circuit(p, 2, 2, assignment=a)
            q = HubbardParams(6, U=2.0, tau=0.3)
            states = replay(build_evolution_circuit(prep, q, 4))
            psi = [sector_state_from_register(s.to_statevector().amps, basis, a) for s in states]
            ref = trotterized_reference(q, basis, psi[0], 4)
            for k in range(5):
                assert abs(abs(np.vdot(ref.states[k], psi[k])) - 1) < 1e-10

    def test_parasitic_v(self):
        nat = NativeGateParams(0.77, 0.05)
        step = build_trotter_step(HubbardParams(8, U=3.0), nat)
        v = parasitic_bond_v(step, 0.3)
        # odd bonds see one K, even bonds an iSWAP and a K
        np.testing.assert_allclose(v[:, 0::2], 2 * 0.05 / 0.3)
        np.testing.assert_allclose(v[:, 1::2], 4 * 0.05 / 0.3)

    def test_number_conservation_in_replay(self):
        p = trapped_params(8, TRAP, None, U=3.0)
        states = replay(build_evolution_circuit(build_initial_state_circuit(p, 2, 2), p, 3))
        for s in states:
            assert s.number_expectations().sum() == pytest.approx(4, abs=1e-10)


class TestStats:
    def test_interacting_steps(self):
        p = trapped_params(8, TRAP, None, U=3.0)
        c = build_evolution_circuit(build_initial_state_circuit(p, 2, 2), p, 5)
        st = circuit_stats(c, 0.3)
        assert st.two_qubit == 48 + 5 * 56
        assert st.t_evol == pytest.approx(1.5)

    def test_text_round_trip(self):
        p = trapped_params(8, TRAP, None, U=3.0)
        c = build_evolution_circuit(build_initial_state_circuit(p, 2, 2, assignment=make_assignment(8, 6)), p, 2)
        back = parse_circuit_text(c.to_text())
        assert back.to_text() == c.to_text()
        assert back.step_ends == c.step_ends
        assert circuit_stats(back) == circuit_stats(c)

    def test_duplicate_qubit_in_moment_rejected(self):
        text = "# qubits=4 eta=0 variant=0 L=2 step_ends=1\nX(0.0)@0 X(0.0)@0\n"
        with pytest.raises(ValueError):
            parse_circuit_text(text)


class TestObservables:
    def test_spread_examples(self):
        assert spread(np.eye(8)[0]) == pytest.approx(3.5)
        assert spread(np.ones(8)) == pytest.approx(16.0)
        assert spread(np.array([0, 0, 0, 1, 1, 0, 0, 0])) == pytest.approx(1.0)
        assert spread(np.array([1.0, 1.0])) == pytest.approx(1.0)

    def test_spread_rate_on_linear_data(self):
        t = np.arange(6) * 0.3
        np.testing.assert_allclose(spread_rate(2 * t + 1, t), 2.0)
        with pytest.raises(ValueError):
            spread_rate([1.0], [0.0])

    def test_density_series(self):
        up = np.tile(np.eye(4)[0], (3, 1))
        dn = np.tile(np.eye(4)[3], (3, 1))
        ds = DensitySeries(np.arange(3), np.arange(3) * 0.3, up, dn)
        assert ds.L == 4
        np.testing.assert_allclose(ds.kappa_plus(), 3.0)
        np.testing.assert_allclose(ds.kappa_minus(), 0.0)
