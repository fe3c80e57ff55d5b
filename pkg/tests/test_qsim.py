"""Statevector engine, shots, channels and the excitation-bounded subspace engine."""

import numpy as np
import pytest

from fhsim.gates import cphase, givens, k_gate, nc_gate_matrix, NcGateParams
from fhsim.qsim import (
    AMPLITUDE_DAMPING,
    DEPHASING,
    ChannelEvent,
    ShotTable,
    StateVector,
    SubspaceState,
    apply_diagonal_two_qubit,
    apply_readout_flips,
    apply_single_qubit,
    apply_stochastic_channel,
    apply_two_qubit,
    hamming_weights,
    measure_number_operator,
    number_expectations,
    sample_shots,
)

X = np.array([[0, 1], [1, 0]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)


def random_unitary(dim, rng):
    z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_nc_unitary(rng):
    return nc_gate_matrix(NcGateParams(*rng.uniform(-np.pi, np.pi, 5)))


class TestStateVector:
    def test_basis_is_little_endian(self):
        sv = StateVector.from_bits("01")
        assert sv.amps[1] == 1
        assert measure_number_operator(sv, 0) == 1.0
        assert measure_number_operator(sv, 1) == 0.0

    def test_rejects_bad_sizes(self):
        with pytest.raises(ValueError):
            StateVector(0, np.ones(1))
        with pytest.raises(ValueError):
            StateVector(2, np.ones(3))

    def test_x_flips_only_target(self):
        sv = StateVector.zeros(3)
        apply_single_qubit(sv, X, 2)
        np.testing.assert_array_equal(number_expectations(sv), [0, 0, 1])

    def test_two_qubit_local_ordering(self):
        # control is q1 (the more significant local bit)
        sv = StateVector.basis(3, 0b100)
        apply_two_qubit(sv, CNOT, 2, 0)
        assert sv.amps[0b101] == pytest.approx(1)
        sv = StateVector.basis(3, 0b100)
        apply_two_qubit(sv, CNOT, 0, 2)
        assert sv.amps[0b100] == pytest.approx(1)

    def test_rejects_nonunitary_and_bad_qubits(self):
        sv = StateVector.zeros(2)
        with pytest.raises(ValueError):
            apply_single_qubit(sv, np.ones((2, 2)), 0)
        with pytest.raises(ValueError):
            apply_two_qubit(sv, CNOT, 1, 1)
        with pytest.raises(IndexError):
            apply_single_qubit(sv, X, 5)

    def test_diagonal_fast_path_matches_dense(self):
        rng = np.random.default_rng(3)
        psi = rng.normal(size=16) + 1j * rng.normal(size=16)
        a = StateVector(4, psi / np.linalg.norm(psi))
        b = a.copy()
        apply_two_qubit(a, cphase(0.7), 3, 1)
        apply_diagonal_two_qubit(b, np.diag(cphase(0.7)), 3, 1)
        np.testing.assert_allclose(a.amps, b.amps, atol=1e-14)

    def test_norm_preserved_over_random_circuits(self):
        rng = np.random.default_rng(11)
        for trial in range(20):
            sv = StateVector.zeros(5)
            for _ in range(30):
                if rng.random() < 0.5:
                    apply_single_qubit(sv, random_unitary(2, rng), int(rng.integers(5)))
                else:
                    q1, q2 = rng.choice(5, 2, replace=False)
                    apply_two_qubit(sv, random_unitary(4, rng), int(q1), int(q2))
            assert abs(sv.norm() - 1) < 1e-10


class TestShots:
    def test_seeded_sampling_is_reproducible(self):
        sv = StateVector.zeros(3)
        for q in range(3):
            apply_single_qubit(sv, H, q)
        a = sample_shots(sv, 500, seed=4)
        b = sample_shots(sv, 500, seed=4)
        np.testing.assert_array_equal(a.bitstrings, b.bitstrings)

    def test_sampling_frequencies_within_3_sigma(self):
        sv = StateVector.zeros(1)
        apply_single_qubit(sv, np.array([[np.sqrt(0.8), -np.sqrt(0.2)], [np.sqrt(0.2), np.sqrt(0.8)]]), 0)
        n = 20000
        f = sample_shots(sv, n, seed=1).bits()[:, 0].mean()
        assert abs(f - 0.2) < 3 * np.sqrt(0.2 * 0.8 / n)

    def test_bits_and_strings(self):
        t = ShotTable(np.array([0b011, 0b100]), 3)
        np.testing.assert_array_equal(t.bits(), [[1, 1, 0], [0, 0, 1]])
        assert t.as_strings() == ["011", "100"]
        np.testing.assert_array_equal(hamming_weights(t, [0, 2]), [1, 1])

    def test_readout_flip_rates(self):
        n = 20000
        t = ShotTable(np.full(n, 0b01), 2)
        out = apply_readout_flips(t, 0.1, 0.05, np.random.default_rng(2)).bits()
        assert abs((1 - out[:, 0].mean()) - 0.1) < 3 * np.sqrt(0.1 * 0.9 / n)
        assert abs(out[:, 1].mean() - 0.05) < 3 * np.sqrt(0.05 * 0.95 / n)

    def test_out_of_range_bitstring_rejected(self):
        with pytest.raises(ValueError):
            ShotTable(np.array([4]), 2)


class TestChannels:
    def test_full_damping_empties_qubit(self):
        sv = StateVector.basis(2, 0b10)
        apply_stochastic_channel(sv, ChannelEvent(AMPLITUDE_DAMPING, 1, 1.0), np.random.default_rng(0))
        assert sv.amps[0] == pytest.approx(1)

    def test_dephasing_keeps_populations(self):
        rng = np.random.default_rng(5)
        sv = StateVector.zeros(2)
        apply_single_qubit(sv, H, 0)
        p0 = sv.probabilities().copy()
        for _ in range(10):
            apply_stochastic_channel(sv, ChannelEvent(DEPHASING, 0, 0.5), rng)
        np.testing.assert_allclose(sv.probabilities(), p0, atol=1e-14)

    def test_damping_decay_rate(self):
        # ensemble average of <n> after one step equals 1 - p
        rng = np.random.default_rng(9)
        vals = []
        for _ in range(4000):
            sv = StateVector.zeros(1)
            apply_single_qubit(sv, H, 0)
            apply_stochastic_channel(sv, ChannelEvent(AMPLITUDE_DAMPING, 0, 0.3), rng)
            vals.append(measure_number_operator(sv, 0))
        assert abs(np.mean(vals) - 0.5 * 0.7) < 3 * np.std(vals) / np.sqrt(len(vals))

    @pytest.mark.parametrize("kind,p", [("bogus", 0.1), (DEPHASING, 1.5)])
    def test_event_validation(self, kind, p):
        with pytest.raises(ValueError):
            ChannelEvent(kind, 0, p)


class TestSubspace:
    def test_matches_dense_engine_for_number_conserving_circuits(self):
        rng = np.random.default_rng(21)
        n = 6
        for trial in range(5):
            dense = StateVector.basis(n, 0b010011)
            sub = SubspaceState.basis_state(n, 0b010011, 3)
            for _ in range(25):
                q1, q2 = (int(x) for x in rng.choice(n, 2, replace=False))
                u = random_nc_unitary(rng) if rng.random() < 0.5 else givens(rng.uniform(-3, 3))
                apply_two_qubit(dense, u, q1, q2)
                sub.apply_two_qubit(u, q1, q2)
                z = rng.uniform(-3, 3)
                q = int(rng.integers(n))
                apply_single_qubit(dense, np.diag([1, np.exp(1j * z)]), q)
                sub.apply_single_qubit_diag(1.0, np.exp(1j * z), q)
            np.testing.assert_allclose(sub.to_statevector().amps, dense.amps, atol=1e-12)
            np.testing.assert_allclose(sub.number_expectations(), number_expectations(dense), atol=1e-12)

    def test_excitation_number_exactly_conserved(self):
        rng = np.random.default_rng(8)
        sub = SubspaceState.basis_state(8, 0b1001, 2)
        for _ in range(40):
            q1, q2 = (int(x) for x in rng.choice(8, 2, replace=False))
            sub.apply_two_qubit(k_gate(rng.uniform(-2, 2)), q1, q2)
        shots = sub.sample(2000, np.random.default_rng(1))
        assert set(hamming_weights(shots, range(8))) == {2}
        assert abs(sub.norm() - 1) < 1e-10
